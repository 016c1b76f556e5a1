#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "malkit/attribution.hpp"
#include "malkit/autograd.hpp"
#include "malkit/dataset.hpp"
#include "malkit/errors.hpp"
#include "malkit/layers.hpp"
#include "malkit/params.hpp"

namespace malkit::models {

enum class Family : std::uint8_t { kBase, kSharedBottom, kMmoe, kPle, kHome, kNatal, kMoae };

inline constexpr std::array<Family, 7> kAllFamilies = {
    Family::kBase, Family::kSharedBottom, Family::kMmoe, Family::kPle,
    Family::kHome, Family::kNatal,        Family::kMoae};

inline std::string_view family_name(Family f) {
  switch (f) {
    case Family::kBase: return "base";
    case Family::kSharedBottom: return "shared_bottom";
    case Family::kMmoe: return "mmoe";
    case Family::kPle: return "ple";
    case Family::kHome: return "home";
    case Family::kNatal: return "natal";
    case Family::kMoae: return "moae";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  for (Family f : kAllFamilies)
    if (family_name(f) == s) return f;
  throw ConfigError("unknown model family '" + std::string(s) +
                    "' (expected base, shared_bottom, mmoe, ple, home, natal or moae)");
}

struct ModelSpec {
  Family family = Family::kBase;
  std::size_t embedding_dim = 8;
  std::size_t shared_experts = 4;
  std::size_t private_experts = 1;  // per task; ple and home only
  std::vector<std::size_t> expert_widths{64};
  std::vector<std::size_t> tower_widths{64, 32};
  std::size_t attention_hidden = 16;
  std::size_t simtier_tiers = 8;
  bool transfer = false;
  bool stop_gradient = false;
  std::size_t aka_width = 32;
  bool cat_head = false;
  Mechanism target = Mechanism::kLast;
  std::vector<Mechanism> aux;

  /// Target first, then auxiliaries in the order given.
  std::vector<Mechanism> mechanisms() const {
    std::vector<Mechanism> out;
    out.reserve(aux.size() + 1);
    out.push_back(target);
    for (Mechanism m : aux) out.push_back(m);
    return out;
  }

  bool has_experts() const {
    return family != Family::kBase && family != Family::kNatal;
  }

  void validate() const {
    auto fail = [](const std::string& why) { throw SpecError("invalid model spec: " + why); };
    if (embedding_dim == 0) fail("embedding_dim must be >= 1");
    if (attention_hidden == 0) fail("attention_hidden must be >= 1");
    if (simtier_tiers == 0) fail("simtier_tiers must be >= 1");
    if (tower_widths.empty()) fail("tower_widths must be nonempty");
    for (std::size_t w : tower_widths)
      if (w == 0) fail("tower widths must be >= 1");
    for (std::size_t w : expert_widths)
      if (w == 0) fail("expert widths must be >= 1");
    for (std::size_t i = 0; i < aux.size(); ++i) {
      if (aux[i] == target) fail("auxiliary mechanism equals the target");
      for (std::size_t j = 0; j < i; ++j)
        if (aux[i] == aux[j]) fail("duplicate auxiliary mechanism");
    }
    if (family == Family::kBase) {
      if (!aux.empty()) fail("base family forbids auxiliary mechanisms");
      if (transfer) fail("base family forbids transfer");
    }
    if (family == Family::kNatal || family == Family::kMoae) {
      if (!transfer) fail(std::string(family_name(family)) + " requires transfer on");
      if (aux.empty()) fail(std::string(family_name(family)) + " requires at least one auxiliary mechanism");
    }
    if (transfer && aux.empty()) fail("transfer requires at least one auxiliary mechanism");
    if (cat_head && aux.empty()) fail("cat_head requires at least one auxiliary mechanism");
    if (has_experts() && expert_widths.empty()) fail("expert_widths must be nonempty");
    if (transfer && aka_width == 0) fail("aka_width must be >= 1");
    switch (family) {
      case Family::kMmoe:
        if (shared_experts == 0) fail("mmoe needs at least one expert");
        break;
      case Family::kPle:
      case Family::kHome:
        if (shared_experts + private_experts == 0) fail("no experts configured");
        break;
      case Family::kMoae:
        if (shared_experts == 0 || private_experts == 0)
          fail("moae needs at least one shared and one private expert");
        break;
      default: break;
    }
  }

  /// Standard configuration for a family; multi-task families get every other
  /// mechanism as auxiliary.
  static ModelSpec defaults_for(Family f, Mechanism target) {
    ModelSpec s;
    s.family = f;
    s.target = target;
    if (f != Family::kBase)
      for (Mechanism m : kAllMechanisms)
        if (m != target) s.aux.push_back(m);
    if (f == Family::kMoae) {
      s.shared_experts = 1;
      s.private_experts = 1;
    }
    if (f == Family::kNatal || f == Family::kMoae) {
      s.transfer = true;
      s.cat_head = true;
    }
    return s;
  }
};

/// Column-major batch of model inputs.
struct Batch {
  std::size_t rows = 0;
  std::array<std::vector<std::int64_t>, data::kFieldCount> fields;
  std::size_t seq_length = 0;  // padded length of every sequence block
  std::array<std::vector<std::int64_t>, 3> seq_ids;  // item, shop, category
  std::vector<std::uint8_t> mask;
  std::vector<double> tiers;  // rows x K histogram, row-major
};

inline std::size_t similarity_tier(double sim, std::size_t tiers) {
  const auto t = static_cast<std::size_t>(std::clamp(sim, 0.0, 1.0) * static_cast<double>(tiers));
  return std::min(t, tiers - 1);
}

struct ModelOutput {
  std::vector<Mechanism> mechanisms;
  std::vector<nn::Var> probabilities;  // [n x 1] each, aligned with mechanisms
  std::optional<nn::Var> cat_logits;   // [n x 2^N]
  std::map<std::string, Tensor> gates;
  std::map<std::string, Tensor> knowledge;

  nn::Var prob(Mechanism m) const {
    for (std::size_t i = 0; i < mechanisms.size(); ++i)
      if (mechanisms[i] == m) return probabilities[i];
    throw ContractError("model has no head for mechanism '" + std::string(mechanism_name(m)) + "'");
  }
};

inline constexpr double kProbabilityFloor = 1e-7;

class Model {
 public:
  Model(ModelSpec spec, data::FeatureSchema schema, std::uint64_t seed)
      : spec_(std::move(spec)), schema_(schema), params_(seed) {
    spec_.validate();
    build();
  }

  /// Wraps an existing parameter store (for example a loaded checkpoint);
  /// names and shapes must match what `spec` would build.
  Model(ModelSpec spec, data::FeatureSchema schema, nn::ParamStore params)
      : spec_(std::move(spec)), schema_(schema), params_(params.seed()) {
    spec_.validate();
    build();
    for (const auto& p : params.all()) {
      if (!params_.contains(p.name))
        throw SpecError("parameter '" + p.name + "' is not part of this model");
      auto& mine = params_.at(p.name);
      if (mine.value.shape() != p.value.shape() || mine.group != p.group)
        throw SpecError("parameter '" + p.name + "' does not match the model layout");
    }
    if (params.size() != params_.size()) throw SpecError("parameter store is missing model parameters");
    params_ = std::move(params);
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const data::FeatureSchema& schema() const noexcept { return schema_; }
  nn::ParamStore& params() noexcept { return params_; }
  const nn::ParamStore& params() const noexcept { return params_; }

  std::size_t cat_classes() const { return std::size_t{1} << spec_.mechanisms().size(); }

  /// Rejects inputs that do not fit the schema the model was built for.
  void check_schema(const data::FeatureSchema& other) const {
    for (std::size_t f = 0; f < data::kFieldCount; ++f) {
      if (other.vocab[f] != schema_.vocab[f]) {
        throw FeatureError("feature column '" + data::field_name(f) + "' has vocabulary " +
                           std::to_string(other.vocab[f]) + ", model was built with " +
                           std::to_string(schema_.vocab[f]));
      }
    }
    if (other.sequence_cap != schema_.sequence_cap)
      throw FeatureError("feature column 'beh_seq' cap changed from " +
                         std::to_string(schema_.sequence_cap) + " to " + std::to_string(other.sequence_cap));
  }

  template <class Range>
  Batch make_batch(const Range& samples) const {
    Batch b;
    std::vector<const data::ClickSample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(to_ptr(s));
    b.rows = ptrs.size();
    if (b.rows == 0) throw ContractError("empty batch");
    const std::size_t k = spec_.simtier_tiers;
    for (auto& f : b.fields) f.reserve(b.rows);
    for (const auto* s : ptrs) {
      for (std::size_t f = 0; f < data::kFieldCount; ++f) {
        const std::int64_t id = s->field(f);
        if (id < 0 || static_cast<std::size_t>(id) >= schema_.vocab[f]) {
          throw FeatureError("feature column '" + data::field_name(f) + "' id " + std::to_string(id) +
                             " outside vocabulary of " + std::to_string(schema_.vocab[f]));
        }
        b.fields[f].push_back(id);
      }
      if (s->sequence.size() > schema_.sequence_cap)
        throw FeatureError("feature column 'beh_seq' longer than cap " + std::to_string(schema_.sequence_cap));
      b.seq_length = std::max(b.seq_length, s->sequence.size());
    }
    b.tiers.assign(b.rows * k, 0.0);
    const std::size_t l = b.seq_length;
    for (auto& v : b.seq_ids) v.assign(b.rows * l, 0);
    b.mask.assign(b.rows * l, 0);
    const std::array<std::size_t, 3> seq_fields{data::kUserFields, data::kUserFields + 1, data::kUserFields + 2};
    for (std::size_t r = 0; r < b.rows; ++r) {
      const auto& seq = ptrs[r]->sequence;
      for (std::size_t j = 0; j < seq.size(); ++j) {
        const std::array<std::int64_t, 3> ids{seq[j].item, seq[j].shop, seq[j].category};
        for (std::size_t c = 0; c < 3; ++c) {
          if (ids[c] < 0 || static_cast<std::size_t>(ids[c]) >= schema_.vocab[seq_fields[c]]) {
            throw FeatureError("feature column 'beh_seq' id " + std::to_string(ids[c]) + " outside vocabulary of " +
                               data::field_name(seq_fields[c]));
          }
          b.seq_ids[c][r * l + j] = ids[c];
        }
        b.mask[r * l + j] = 1;
        b.tiers[r * k + similarity_tier(seq[j].similarity, k)] +=
            1.0 / static_cast<double>(schema_.sequence_cap);
      }
    }
    return b;
  }

  ModelOutput forward(nn::Tape& tape, const Batch& batch) const {
    using namespace nn;
    const std::size_t n = batch.rows;
    const std::size_t e = spec_.embedding_dim;
    ModelOutput out;
    out.mechanisms = spec_.mechanisms();

    // Shared bottom: field embeddings, target attention, similarity tiers.
    std::vector<Var> parts;
    for (std::size_t f = 0; f < data::kFieldCount; ++f)
      parts.push_back(embedding_lookup(tape.param(params_.at(embedding_name(f))), batch.fields[f], data::field_name(f)));
    Var query = concat_cols({parts[data::kUserFields], parts[data::kUserFields + 1], parts[data::kUserFields + 2]});
    Var pooled = tape.constant(Tensor({n, 3 * e}));
    if (batch.seq_length > 0) {
      std::vector<Var> keys;
      for (std::size_t c = 0; c < 3; ++c)
        keys.push_back(embedding_lookup(tape.param(params_.at(embedding_name(data::kUserFields + c))),
                                        batch.seq_ids[c], "beh_seq"));
      pooled = target_attention(tape, params_, attention_, query, concat_cols(keys), batch.mask, batch.seq_length);
    }
    Var tiers = tape.constant(Tensor({n, spec_.simtier_tiers}, batch.tiers));
    parts.push_back(pooled);
    parts.push_back(apply(tape, params_, simtier_, tiers, Activation::kIdentity));
    Var bottom = concat_cols(parts);

    // Expert layer: one input per task.
    const auto mechs = spec_.mechanisms();
    std::vector<Var> task_in(mechs.size(), bottom);
    if (spec_.family == Family::kSharedBottom) {
      Var shared = apply(tape, params_, shared_experts_[0], bottom);
      std::fill(task_in.begin(), task_in.end(), shared);
    } else if (spec_.has_experts()) {
      std::vector<Var> shared;
      for (std::size_t k = 0; k < shared_experts_.size(); ++k)
        shared.push_back(expert_output(tape, shared_experts_[k], shared_self_gates_, k, bottom, bottom));
      for (std::size_t t = 0; t < mechs.size(); ++t) {
        std::vector<Var> pool = shared;
        if (!private_experts_.empty()) {
          Var in = bottom;
          if (spec_.family == Family::kHome)
            in = mul(bottom, apply(tape, params_, feature_gates_[t], bottom, Activation::kSigmoid));
          for (std::size_t k = 0; k < private_experts_[t].size(); ++k)
            pool.push_back(expert_output(tape, private_experts_[t][k],
                                         spec_.family == Family::kHome ? private_self_gates_[t] : no_gates_, k, bottom, in));
        }
        Var g = apply(tape, params_, gates_[t], bottom, Activation::kSoftmax);
        out.gates.emplace("gate." + std::string(mechanism_name(mechs[t])), g.value());
        task_in[t] = mix(g, pool);
      }
    }

    // Towers.
    std::vector<Var> z;
    for (std::size_t t = 0; t < mechs.size(); ++t) {
      z.push_back(apply(tape, params_, towers_[t], task_in[t]));
      out.knowledge.emplace("z." + std::string(mechanism_name(mechs[t])), z.back().value());
    }

    // Heads.
    std::optional<Var> cat_input;
    for (std::size_t t = 0; t < mechs.size(); ++t) {
      Var head_in = z[t];
      if (spec_.transfer && t == 0) {
        std::vector<Var> aux_z(z.begin() + 1, z.end());
        Var k = apply(tape, params_, aka_, concat_cols(aux_z), Activation::kRelu);
        out.knowledge.emplace("aka", k.value());
        cat_input = k;
        head_in = concat_cols({z[0], spec_.stop_gradient ? stop_gradient(k) : k});
      }
      Var p = apply(tape, params_, heads_[t], head_in, Activation::kSigmoid);
      out.probabilities.push_back(clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor));
    }
    if (spec_.cat_head) {
      if (!cat_input) cat_input = concat_cols(z);
      out.cat_logits = apply(tape, params_, cat_, *cat_input, Activation::kIdentity);
    }
    return out;
  }

  template <class Range>
  ModelOutput forward(nn::Tape& tape, const Range& samples) const {
    return forward(tape, make_batch(samples));
  }

  /// Frozen-parameter prediction for one mechanism.
  template <class Range>
  std::vector<double> predict(const Range& samples, Mechanism m, std::size_t chunk = 1024) const {
    std::vector<const data::ClickSample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(to_ptr(s));
    std::vector<double> out;
    out.reserve(ptrs.size());
    for (std::size_t begin = 0; begin < ptrs.size(); begin += chunk) {
      const std::size_t end = std::min(ptrs.size(), begin + chunk);
      nn::Tape tape;
      auto o = forward(tape, make_batch(std::span<const data::ClickSample* const>(ptrs.data() + begin, end - begin)));
      for (double v : o.prob(m).value().data()) out.push_back(v);
    }
    return out;
  }

  static std::string embedding_name(std::size_t field) { return "emb." + data::field_name(field); }

 private:
  static const data::ClickSample* to_ptr(const data::ClickSample& s) { return &s; }
  static const data::ClickSample* to_ptr(const data::ClickSample* s) { return s; }

  nn::Var expert_output(nn::Tape& tape, const nn::Mlp& expert, const std::vector<nn::DenseLayer>& self_gates,
                        std::size_t k, nn::Var gate_input, nn::Var input) const {
    nn::Var h = nn::apply(tape, params_, expert, input);
    if (self_gates.empty()) return h;
    return nn::mul_rows(h, nn::apply(tape, params_, self_gates[k], gate_input, nn::Activation::kSigmoid));
  }

  void build() {
    using namespace nn;
    const std::size_t e = spec_.embedding_dim;
    const std::string shared{group::kShared};
    for (std::size_t f = 0; f < data::kFieldCount; ++f)
      params_.add(embedding_name(f), shared, {schema_.vocab[f], e}, Init::kEmbeddingNormal);
    attention_ = add_attention(params_, "attention", shared, 3 * e, spec_.attention_hidden);
    simtier_ = add_dense(params_, "simtier", shared, spec_.simtier_tiers, e);
    const std::size_t bottom = (data::kFieldCount + 3 + 1) * e;

    const auto mechs = spec_.mechanisms();
    const Activation act = spec_.family == Family::kHome ? Activation::kSwish : Activation::kRelu;
    std::size_t tower_in = bottom;
    auto task_group = [](Mechanism m) { return group::task(mechanism_name(m)); };
    auto mech = [](Mechanism m) { return std::string(mechanism_name(m)); };
    if (spec_.family == Family::kSharedBottom) {
      shared_experts_.push_back(add_mlp(params_, "expert.shared.0", shared, bottom, spec_.expert_widths, act));
      tower_in = spec_.expert_widths.back();
    } else if (spec_.has_experts()) {
      const bool cgc = spec_.family != Family::kMmoe;
      const std::size_t n_private = cgc ? spec_.private_experts : 0;
      for (std::size_t k = 0; k < spec_.shared_experts; ++k) {
        const std::string name = "expert.shared." + std::to_string(k);
        shared_experts_.push_back(add_mlp(params_, name, shared, bottom, spec_.expert_widths, act));
        if (spec_.family == Family::kHome)
          shared_self_gates_.push_back(add_dense(params_, "sgate." + name, shared, bottom, 1));
      }
      if (n_private > 0) {
        private_experts_.resize(mechs.size());
        private_self_gates_.resize(mechs.size());
      }
      for (std::size_t t = 0; t < mechs.size(); ++t) {
        const std::string g = task_group(mechs[t]);
        if (spec_.family == Family::kHome && n_private > 0)
          feature_gates_.push_back(add_dense(params_, "fgate." + mech(mechs[t]), g, bottom, bottom));
        for (std::size_t k = 0; k < n_private; ++k) {
          const std::string name = "expert." + mech(mechs[t]) + "." + std::to_string(k);
          private_experts_[t].push_back(add_mlp(params_, name, g, bottom, spec_.expert_widths, act));
          if (spec_.family == Family::kHome)
            private_self_gates_[t].push_back(add_dense(params_, "sgate." + name, g, bottom, 1));
        }
        gates_.push_back(add_dense(params_, "gate." + mech(mechs[t]), g, bottom, spec_.shared_experts + n_private));
      }
      tower_in = spec_.expert_widths.back();
    }
    for (Mechanism m : mechs)
      towers_.push_back(add_mlp(params_, "tower." + mech(m), task_group(m), tower_in, spec_.tower_widths, Activation::kRelu));
    const std::size_t z = spec_.tower_widths.back();
    if (spec_.transfer)
      aka_ = add_dense(params_, "aka", group::head("aka"), z * spec_.aux.size(), spec_.aka_width);
    for (std::size_t t = 0; t < mechs.size(); ++t) {
      const std::size_t in = (spec_.transfer && t == 0) ? z + spec_.aka_width : z;
      heads_.push_back(add_dense(params_, "out." + mech(mechs[t]), task_group(mechs[t]), in, 1));
    }
    if (spec_.cat_head) {
      const std::size_t in = spec_.transfer ? spec_.aka_width : z * mechs.size();
      cat_ = add_dense(params_, "cat", group::head("cat"), in, cat_classes());
    }
  }

  ModelSpec spec_;
  data::FeatureSchema schema_;
  nn::ParamStore params_;

  nn::AttentionNet attention_;
  nn::DenseLayer simtier_;
  std::vector<nn::Mlp> shared_experts_;
  std::vector<nn::DenseLayer> shared_self_gates_;
  std::vector<std::vector<nn::Mlp>> private_experts_;
  std::vector<std::vector<nn::DenseLayer>> private_self_gates_;
  std::vector<nn::DenseLayer> feature_gates_;
  std::vector<nn::DenseLayer> no_gates_;
  std::vector<nn::DenseLayer> gates_;
  std::vector<nn::Mlp> towers_;
  nn::DenseLayer aka_;
  std::vector<nn::DenseLayer> heads_;
  nn::DenseLayer cat_;
};

/// CAT class of one sample over the model's mechanisms: bit i is the binary
/// label of mechanisms[i].
inline std::size_t cat_class(const data::ClickSample& s, std::span<const Mechanism> mechanisms) {
  std::vector<int> labels;
  for (Mechanism m : mechanisms) labels.push_back(s.label(m));
  return attribution::cat_encode(labels);
}

}  // namespace malkit::models
