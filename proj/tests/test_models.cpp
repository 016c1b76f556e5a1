#include <gtest/gtest.h>

#include <cctype>
#include <set>
#include <sstream>
#include <string>

#include "test_support.hpp"

namespace {

using namespace malkit;
using models::Family;
using models::Model;
using models::ModelSpec;

std::size_t count_prefix(const nn::ParamStore& store, const std::string& prefix) {
  std::set<std::string> modules;
  for (const auto& p : store.all()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    // Module name: drop the ".w"/".b" suffix and any ".l<k>" layer index.
    std::string name = p.name.substr(0, p.name.rfind('.'));
    const auto dot = name.rfind('.');
    if (dot != std::string::npos && name.size() > dot + 2 && name[dot + 1] == 'l' &&
        std::isdigit(static_cast<unsigned char>(name[dot + 2]))) {
      name = name.substr(0, dot);
    }
    modules.insert(name);
  }
  return modules.size();
}

TEST(ModelBuild, BaseHasOneHeadAndNoGates) {
  const auto schema = testkit::tiny_schema();
  Model m(ModelSpec::defaults_for(Family::kBase, Mechanism::kLast), schema, 1);
  EXPECT_EQ(count_prefix(m.params(), "out."), 1u);
  EXPECT_EQ(count_prefix(m.params(), "gate."), 0u);
  nn::Tape tape;
  const auto out = m.forward(tape, testkit::random_samples(schema, 5, 1));
  EXPECT_EQ(out.probabilities.size(), 1u);
  EXPECT_TRUE(out.gates.empty());
  EXPECT_FALSE(out.cat_logits);
}

TEST(ModelBuild, MmoeTwoTasksFourExperts) {
  const auto schema = testkit::tiny_schema();
  auto spec = ModelSpec::defaults_for(Family::kMmoe, Mechanism::kLast);
  spec.aux = {Mechanism::kLinear};
  spec.shared_experts = 4;
  Model m(spec, schema, 1);
  EXPECT_EQ(count_prefix(m.params(), "expert.shared."), 4u);
  nn::Tape tape;
  const auto out = m.forward(tape, testkit::random_samples(schema, 5, 2));
  ASSERT_EQ(out.gates.size(), 2u);
  for (const auto& [name, g] : out.gates) {
    EXPECT_EQ(g.cols(), 4u) << name;
    EXPECT_EQ(g.rows(), 5u) << name;
  }
}

TEST(ModelBuild, MoaeOneSharedFourPrivatePlusCat) {
  const auto schema = testkit::tiny_schema();
  Model m(ModelSpec::defaults_for(Family::kMoae, Mechanism::kLast), schema, 1);
  EXPECT_EQ(count_prefix(m.params(), "expert.shared."), 1u);
  std::size_t privates = 0;
  for (Mechanism mech : kAllMechanisms)
    privates += count_prefix(m.params(), "expert." + std::string(mechanism_name(mech)) + ".");
  EXPECT_EQ(privates, 4u);
  EXPECT_EQ(count_prefix(m.params(), "out."), 4u);
  EXPECT_TRUE(m.params().contains("cat.w"));
  EXPECT_EQ(m.cat_classes(), 16u);
  nn::Tape tape;
  const auto out = m.forward(tape, testkit::random_samples(schema, 3, 2));
  EXPECT_EQ(out.probabilities.size(), 4u);
  ASSERT_TRUE(out.cat_logits);
  EXPECT_EQ(out.cat_logits->cols(), 16u);
  EXPECT_TRUE(out.knowledge.contains("aka"));
}

TEST(ModelBuild, GroupsPartitionParameters) {
  const auto schema = testkit::tiny_schema();
  for (Family f : models::kAllFamilies) {
    Model m(ModelSpec::defaults_for(f, Mechanism::kFirst), schema, 1);
    for (const auto& p : m.params().all()) {
      const bool known = p.group == "shared" || p.group.rfind("task:", 0) == 0 || p.group.rfind("head:", 0) == 0;
      EXPECT_TRUE(known) << p.name << " in " << p.group;
      EXPECT_EQ(p.adam.m.shape(), p.value.shape());
    }
    for (const auto& p : m.params().all()) {
      if (p.name.rfind("tower.first", 0) == 0) {
        EXPECT_EQ(p.group, "task:first");
      }
    }
  }
}

TEST(ModelForward, ProbabilitiesInsideUnitInterval) {
  const auto schema = testkit::tiny_schema(4, 5);
  for (Family f : models::kAllFamilies) {
    Model m(ModelSpec::defaults_for(f, Mechanism::kLast), schema, 3);
    nn::Tape tape;
    const auto out = m.forward(tape, testkit::random_samples(schema, 16, 3));
    for (const auto& p : out.probabilities) {
      for (double v : p.value().data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        EXPECT_TRUE(std::isfinite(v));
      }
    }
  }
}

TEST(ModelForward, GatesAreOnTheSimplex) {
  const auto schema = testkit::tiny_schema(4, 5);
  for (Family f : {Family::kMmoe, Family::kPle, Family::kHome, Family::kMoae}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Model m(testkit::tiny_spec(f), schema, seed);
      testkit::scramble(m.params(), seed, 2.0);
      nn::Tape tape;
      const auto out = m.forward(tape, testkit::random_samples(schema, 8, seed));
      ASSERT_FALSE(out.gates.empty());
      for (const auto& [name, g] : out.gates) {
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double s = 0.0;
          for (double v : g.row(r)) {
            EXPECT_GE(v, 0.0);
            s += v;
          }
          EXPECT_NEAR(s, 1.0, 1e-12) << name;
        }
      }
    }
  }
}

TEST(ModelForward, EmptySequencesAreLegal) {
  const auto schema = testkit::tiny_schema();
  auto rows = testkit::random_samples(schema, 4, 8);
  for (auto& r : rows) r.sequence.clear();
  Model m(ModelSpec::defaults_for(Family::kNatal, Mechanism::kLast), schema, 1);
  const auto p = m.predict(rows, Mechanism::kLast);
  ASSERT_EQ(p.size(), 4u);
  for (double v : p) EXPECT_TRUE(v > 0.0 && v < 1.0);
}

TEST(ModelForward, PredictChunkingDoesNotChangeScores) {
  const auto schema = testkit::tiny_schema(4, 5);
  const auto rows = testkit::random_samples(schema, 23, 4);
  Model m(testkit::tiny_spec(Family::kPle), schema, 4);
  const auto whole = m.predict(rows, Mechanism::kDda, 1024);
  const auto chunked = m.predict(rows, Mechanism::kDda, 5);
  ASSERT_EQ(whole.size(), chunked.size());
  // Padding length differs between chunks, so allow rounding differences.
  for (std::size_t i = 0; i < whole.size(); ++i) EXPECT_NEAR(whole[i], chunked[i], 1e-12);
}

TEST(ModelGradients, EveryFamilyMatchesFiniteDifferences) {
  for (Family f : models::kAllFamilies) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto r = testkit::check_family_gradients(f, seed);
      EXPECT_LT(r.max_rel_error, 1e-4) << models::family_name(f) << " seed " << seed << " " << r.worst;
      EXPECT_GT(r.checked, 100u);
    }
  }
}

TEST(ModelAsymmetry, AuxiliaryLossesNeverReachTargetGroup) {
  const auto schema = testkit::tiny_schema();
  for (Family f : {Family::kNatal, Family::kMoae}) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      Model m(testkit::tiny_spec(f), schema, seed);
      testkit::scramble(m.params(), seed);
      const auto rows = testkit::random_samples(schema, 8, seed);
      const auto g = testkit::aux_only_gradients(m, rows);
      EXPECT_EQ(testkit::max_abs(g, m.params(), "task:last"), 0.0) << models::family_name(f) << " seed " << seed;
      EXPECT_GT(testkit::max_abs(g, m.params(), "shared"), 0.0);
      EXPECT_GT(testkit::max_abs(g, m.params(), "head:cat"), 0.0);
    }
  }
}

TEST(ModelAsymmetry, PrimaryLossReachesAuxiliaryTowersOnlyWithTransfer) {
  const auto schema = testkit::tiny_schema();
  for (Family f : models::kAllFamilies) {
    if (f == Family::kBase) continue;
    Model m(testkit::tiny_spec(f), schema, 5);
    testkit::scramble(m.params(), 5);
    const auto rows = testkit::random_samples(schema, 8, 5);
    nn::Tape tape;
    const auto out = m.forward(tape, rows);
    const auto y = training::binary_labels(rows, Mechanism::kLast);
    const std::vector<double> w(rows.size(), 1.0);
    const auto g = tape.backward(training::bce_loss(out.probabilities[0], y, w));
    const double into_aux = testkit::max_abs(g, m.params(), "task:linear");
    if (m.spec().transfer) {
      EXPECT_GT(into_aux, 0.0) << models::family_name(f);
    } else {
      EXPECT_EQ(into_aux, 0.0) << models::family_name(f);
    }
  }
}

TEST(ModelSymmetry, EveryTaskLossReachesSharedGroup) {
  const auto schema = testkit::tiny_schema();
  for (Family f : {Family::kSharedBottom, Family::kMmoe, Family::kPle, Family::kHome}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Model m(testkit::small_spec(f), schema, seed);
      const auto rows = testkit::random_samples(schema, 8, seed);
      nn::Tape tape;
      const auto out = m.forward(tape, rows);
      const auto mechs = m.spec().mechanisms();
      for (std::size_t t = 0; t < mechs.size(); ++t) {
        const auto y = training::binary_labels(rows, mechs[t]);
        const std::vector<double> w(rows.size(), 1.0);
        const auto g = tape.backward(training::bce_loss(out.probabilities[t], y, w));
        EXPECT_GT(testkit::max_abs(g, m.params(), "shared"), 0.0)
            << models::family_name(f) << " " << mechanism_name(mechs[t]);
      }
    }
  }
}

std::vector<double> all_outputs(const Model& m, const std::vector<data::ClickSample>& rows) {
  nn::Tape tape;
  const auto out = m.forward(tape, rows);
  std::vector<double> v;
  for (const auto& p : out.probabilities)
    for (double x : p.value().data()) v.push_back(x);
  return v;
}

TEST(ModelEquivalence, SingleExpertMmoeIsSharedBottom) {
  const auto schema = testkit::tiny_schema(4, 5);
  const auto rows = testkit::random_samples(schema, 12, 2);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto sb = testkit::tiny_spec(Family::kSharedBottom);
    auto mm = testkit::tiny_spec(Family::kMmoe);
    mm.shared_experts = 1;
    Model a(sb, schema, seed);
    Model b(mm, schema, seed);
    EXPECT_EQ(all_outputs(a, rows), all_outputs(b, rows)) << "seed " << seed;
  }
}

TEST(ModelEquivalence, PleWithoutPrivateExpertsIsMmoe) {
  const auto schema = testkit::tiny_schema(4, 5);
  const auto rows = testkit::random_samples(schema, 12, 3);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto pl = testkit::tiny_spec(Family::kPle);
    pl.private_experts = 0;
    auto mm = testkit::tiny_spec(Family::kMmoe);
    Model a(pl, schema, seed);
    Model b(mm, schema, seed);
    EXPECT_EQ(a.params().scalar_count(), b.params().scalar_count());
    EXPECT_EQ(all_outputs(a, rows), all_outputs(b, rows)) << "seed " << seed;
  }
}

TEST(ModelErrors, SchemaDriftNamesColumn) {
  const auto schema = testkit::tiny_schema();
  Model m(ModelSpec::defaults_for(Family::kBase, Mechanism::kLast), schema, 1);
  auto other = schema;
  other.vocab[data::kUserFields + 2] = 9;
  try {
    m.check_schema(other);
    FAIL() << "expected FeatureError";
  } catch (const FeatureError& e) {
    EXPECT_NE(std::string(e.what()).find("'i3'"), std::string::npos) << e.what();
  }
  auto rows = testkit::random_samples(schema, 2, 1);
  rows[1].context[1] = 3;
  try {
    m.make_batch(rows);
    FAIL() << "expected FeatureError";
  } catch (const FeatureError& e) {
    EXPECT_NE(std::string(e.what()).find("'c2'"), std::string::npos) << e.what();
  }
  rows = testkit::random_samples(schema, 2, 1);
  rows[0].sequence.assign(5, {0, 0, 0, 0.5});
  EXPECT_THROW(m.make_batch(rows), FeatureError);
}

TEST(ModelErrors, InvalidSpecsRejected) {
  auto base = ModelSpec::defaults_for(Family::kBase, Mechanism::kLast);
  base.aux = {Mechanism::kFirst};
  EXPECT_THROW(base.validate(), SpecError);

  auto natal = ModelSpec::defaults_for(Family::kNatal, Mechanism::kLast);
  natal.transfer = false;
  EXPECT_THROW(natal.validate(), SpecError);

  auto mmoe = ModelSpec::defaults_for(Family::kMmoe, Mechanism::kLast);
  mmoe.aux.clear();
  mmoe.cat_head = true;
  EXPECT_THROW(mmoe.validate(), SpecError);

  auto dup = ModelSpec::defaults_for(Family::kMmoe, Mechanism::kLast);
  dup.aux = {Mechanism::kFirst, Mechanism::kFirst};
  EXPECT_THROW(dup.validate(), SpecError);

  auto self = ModelSpec::defaults_for(Family::kPle, Mechanism::kLast);
  self.aux = {Mechanism::kLast};
  EXPECT_THROW(self.validate(), SpecError);

  for (Family f : models::kAllFamilies) EXPECT_NO_THROW(ModelSpec::defaults_for(f, Mechanism::kDda).validate());
  EXPECT_THROW(models::parse_family("dcn"), ConfigError);
}

TEST(ModelCheckpoint, RestoredModelPredictsIdentically) {
  const auto schema = testkit::tiny_schema(4, 5);
  const auto rows = testkit::random_samples(schema, 10, 6);
  const auto spec = testkit::tiny_spec(Family::kMoae);
  Model a(spec, schema, 6);
  testkit::scramble(a.params(), 6);
  std::stringstream ss;
  nn::write_checkpoint(a.params(), ss);
  Model b(spec, schema, nn::read_checkpoint(ss));
  EXPECT_EQ(all_outputs(a, rows), all_outputs(b, rows));
  EXPECT_THROW(Model(testkit::tiny_spec(Family::kPle), schema, nn::ParamStore(a.params())), SpecError);
}

TEST(CatClass, MatchesLittleEndianEncoding) {
  data::ClickSample s;
  s.weights = {1.0, 0.0, 0.5, 0.0};
  const std::vector<Mechanism> order{Mechanism::kLast, Mechanism::kFirst, Mechanism::kLinear, Mechanism::kDda};
  EXPECT_EQ(models::cat_class(s, order), 5u);
  const std::vector<Mechanism> rotated{Mechanism::kFirst, Mechanism::kLinear, Mechanism::kDda, Mechanism::kLast};
  EXPECT_EQ(models::cat_class(s, rotated), 10u);
}

}  // namespace
