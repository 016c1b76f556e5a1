#include <gtest/gtest.h>

#include <sstream>
#include <string>

#include "test_support.hpp"

namespace {

using namespace malkit;
using namespace malkit::data;

const Dataset& default_dataset() {
  static const Dataset d = generate(GenConfig{});
  return d;
}

TEST(Generate, SameSeedIsByteIdentical) {
  const auto cfg = testkit::small_gen(17);
  EXPECT_EQ(serialize_dataset(generate(cfg)), serialize_dataset(generate(cfg)));
  auto other = cfg;
  other.seed = 18;
  EXPECT_NE(serialize_dataset(generate(cfg)), serialize_dataset(generate(other)));
}

TEST(Generate, DefaultRatioOrdering) {
  const auto s = summarize(default_dataset());
  EXPECT_GT(s.ratio(Mechanism::kLinear), s.ratio(Mechanism::kDda));
  EXPECT_GT(s.ratio(Mechanism::kDda), s.ratio(Mechanism::kFirst));
  EXPECT_GT(s.ratio(Mechanism::kDda), s.ratio(Mechanism::kLast));
  // first and last stay within 20% of each other
  EXPECT_LT(std::abs(s.ratio(Mechanism::kFirst) - s.ratio(Mechanism::kLast)), 0.2 * s.ratio(Mechanism::kLast));
}

TEST(Generate, DefaultLastClickRateNearTarget) {
  const GenConfig cfg;
  const auto s = summarize(default_dataset());
  EXPECT_NEAR(s.ratio(Mechanism::kLast), cfg.conversion_rate, 0.3 * cfg.conversion_rate);
  EXPECT_GT(s.samples, 35000u);
  EXPECT_LT(s.samples, 65000u);
  EXPECT_EQ(s.days, cfg.days);
}

TEST(Generate, SampleInvariants) {
  const auto& d = default_dataset();
  const GenConfig cfg;
  const auto schema = cfg.schema();
  std::size_t linear = 0;
  std::size_t last = 0;
  const ClickSample* prev = nullptr;
  for (const auto& s : d.samples()) {
    ASSERT_LE(s.sequence.size(), cfg.sequence_cap);
    for (const auto& b : s.sequence) {
      ASSERT_GE(b.similarity, 0.0);
      ASSERT_LE(b.similarity, 1.0);
    }
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      ASSERT_GE(s.field(f), 0);
      ASSERT_LT(static_cast<std::size_t>(s.field(f)), schema.vocab[f]) << field_name(f);
    }
    for (double w : s.weights) ASSERT_GE(w, 0.0);
    if (s.label(Mechanism::kLast) || s.label(Mechanism::kFirst) || s.label(Mechanism::kDda)) {
      ASSERT_EQ(s.label(Mechanism::kLinear), 1);
    }
    linear += s.label(Mechanism::kLinear);
    last += s.label(Mechanism::kLast);
    if (prev) {
      ASSERT_TRUE(prev->day < s.day || (prev->day == s.day && prev->user_id <= s.user_id));
      ASSERT_LE(s.day - prev->day, 1);
    } else {
      ASSERT_EQ(s.day, 0);
    }
    prev = &s;
  }
  EXPECT_GE(linear, last);
  EXPECT_EQ(d.infer_schema().sequence_cap, kDefaultSequenceCap);
}

TEST(Generate, SingleClickPathsCreditEveryMechanismEqually) {
  GenConfig cfg;
  cfg.users = 1;
  cfg.days = 1;
  cfg.items = 5;
  cfg.shops = 2;
  cfg.categories = 2;
  cfg.path_length_max = 1;
  cfg.clicks_per_user_day = 12.0;
  cfg.conversion_rate = 0.999;
  cfg.multi_conversion_prob = 0.0;
  cfg.seed = 3;
  const auto d = generate(cfg);
  ASSERT_FALSE(d.empty());
  std::size_t converted = 0;
  for (const auto& s : d.samples()) {
    for (Mechanism m : kAllMechanisms) EXPECT_EQ(s.weight(m), s.weight(Mechanism::kLast));
    EXPECT_TRUE(s.weight(Mechanism::kLast) == 0.0 || s.weight(Mechanism::kLast) == 1.0);
    converted += s.label(Mechanism::kLast);
  }
  EXPECT_GE(converted, 1u);
}

TEST(Generate, NoPositivesIsGenerationError) {
  GenConfig cfg;
  cfg.users = 1;
  cfg.days = 1;
  cfg.items = 5;
  cfg.shops = 2;
  cfg.categories = 2;
  cfg.clicks_per_user_day = 1.0;
  cfg.conversion_rate = 1e-9;
  EXPECT_THROW(generate(cfg), GenerationError);
}

TEST(Generate, InvalidConfigRejected) {
  GenConfig cfg;
  cfg.conversion_rate = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = GenConfig{};
  cfg.users = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Csv, HeaderMatchesSchema) {
  std::string expected = "day,user_id,item_id";
  for (int i = 1; i <= 7; ++i) expected += ",u" + std::to_string(i);
  for (int i = 1; i <= 10; ++i) expected += ",i" + std::to_string(i);
  for (int i = 1; i <= 3; ++i) expected += ",c" + std::to_string(i);
  expected += ",beh_seq,w_last,w_first,w_linear,w_dda";
  EXPECT_EQ(csv_header_line(), expected);
}

TEST(Csv, EmptyDatasetRoundtrips) {
  const Dataset empty;
  const std::string text = serialize_dataset(empty);
  EXPECT_EQ(text, csv_header_line() + "\n");
  std::istringstream is(text);
  const auto back = read_dataset(is);
  EXPECT_TRUE(back.empty());
  EXPECT_EQ(back.days(), 0u);
}

TEST(Csv, GeneratedDatasetRoundtrips) {
  const auto d = generate(testkit::small_gen(5));
  std::istringstream is(serialize_dataset(d));
  const auto back = read_dataset(is, 6);
  ASSERT_EQ(back.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) ASSERT_EQ(back.samples()[i], d.samples()[i]) << "row " << i;
  EXPECT_EQ(serialize_dataset(back), serialize_dataset(d));
}

TEST(Csv, HandWrittenFixture) {
  const std::string text = csv_header_line() + "\n" +
                           "0,3,7,3,1,0,2,5,1,0,7,2,1,0,4,9,1,2,0,3,1,0,5,4:1:0:0.25|6:2:1:1,1,0,0.5,0.75\n"
                           "1,4,2,4,0,1,0,0,0,1,2,0,1,3,3,3,3,3,3,3,0,2,1,,0,0,0,0\n";
  std::istringstream is(text);
  const auto d = read_dataset(is);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.days(), 2u);
  const auto& a = d.samples()[0];
  EXPECT_EQ(a.day, 0);
  EXPECT_EQ(a.user_id, 3);
  EXPECT_EQ(a.item_id, 7);
  EXPECT_EQ(a.user, (std::array<std::int64_t, 7>{3, 1, 0, 2, 5, 1, 0}));
  EXPECT_EQ(a.item, (std::array<std::int64_t, 10>{7, 2, 1, 0, 4, 9, 1, 2, 0, 3}));
  EXPECT_EQ(a.context, (std::array<std::int64_t, 3>{1, 0, 5}));
  ASSERT_EQ(a.sequence.size(), 2u);
  EXPECT_EQ(a.sequence[0], (BehaviorItem{4, 1, 0, 0.25}));
  EXPECT_EQ(a.sequence[1], (BehaviorItem{6, 2, 1, 1.0}));
  EXPECT_EQ(a.weights, (std::array<double, 4>{1, 0, 0.5, 0.75}));
  EXPECT_EQ(a.label(Mechanism::kFirst), 0);
  EXPECT_EQ(a.label(Mechanism::kDda), 1);
  const auto& b = d.samples()[1];
  EXPECT_EQ(b.day, 1);
  EXPECT_TRUE(b.sequence.empty());
  EXPECT_EQ(b.weights, (std::array<double, 4>{0, 0, 0, 0}));
}

void expect_parse_error(const std::string& row, std::size_t line, const std::string& column) {
  std::istringstream is(csv_header_line() + "\n" + row + "\n");
  try {
    read_dataset(is);
    FAIL() << "expected ParseError for: " << row;
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), line) << e.what();
    EXPECT_EQ(e.column(), column) << e.what();
  }
}

TEST(Csv, MalformedRowsNameLineAndColumn) {
  const std::string good = "0,3,7,3,1,0,2,5,1,0,7,2,1,0,4,9,1,2,0,3,1,0,5,4:1:0:0.25,1,0,0.5,0.75";
  expect_parse_error("0,3,x7,3,1,0,2,5,1,0,7,2,1,0,4,9,1,2,0,3,1,0,5,,1,0,0.5,0.75", 2, "item_id");
  expect_parse_error("0,3,7,3,1,0,2,5,1,0,7,2,1,0,4,9,1,2,0,3,1,0,5,,1,0,0.5,-1", 2, "w_dda");
  expect_parse_error("0,3,7,3,1,0,2,5,1,0,7,2,1,0,4,9,1,2,0,3,1,0,5,4:1:0:1.5,1,0,0.5,0.75", 2, "beh_seq");
  expect_parse_error("0,3,7,3,1,0,2,5,1,0,7,2,1,0,4,9,1,2,0,3,1,0,5,4:1:0,1,0,0.5,0.75", 2, "beh_seq");
  expect_parse_error("0,3,7", 2, "u1");
  {
    std::istringstream is(csv_header_line() + "\n" + good + "\n0,3,7,3,1,0,2,5,1,0,7,2,1,0,4,9,1,2,0,3,1,0,z\n");
    try {
      read_dataset(is);
      FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), 3u);
    }
  }
  std::istringstream bad_header("day,user\n");
  EXPECT_THROW(read_dataset(bad_header), ParseError);
  std::istringstream nothing("");
  EXPECT_THROW(read_dataset(nothing), ParseError);
}

TEST(Split, Examples) {
  const auto eight = split_days(8);
  EXPECT_EQ(eight.train_end, 7u);
  EXPECT_EQ(eight.test_day, 7u);
  EXPECT_EQ(eight.probe_train_end, 6u);
  EXPECT_EQ(eight.probe_day, 6u);
  const auto three = split_days(3);
  EXPECT_EQ(three.train_end, 2u);
  EXPECT_EQ(three.test_day, 2u);
  EXPECT_THROW(split_days(2), ContractError);
}

TEST(Summarize, NoConversionsGivesZeroRatios) {
  auto rows = testkit::random_samples(testkit::tiny_schema(), 10, 1);
  for (auto& r : rows) r.weights = {};
  const auto s = summarize(Dataset(rows));
  for (Mechanism m : kAllMechanisms) EXPECT_EQ(s.ratio(m), 0.0);
  EXPECT_TRUE(s.complexity_ratio.empty());
}

TEST(Summarize, FourClickPathLinearIsFourTimesLast) {
  attribution::ConversionPath p;
  for (int i = 0; i < 4; ++i) p.clicks.push_back({i, 100.0 * i, 0.5});
  p.conversions = {350.0};
  const auto w = attribution::attribute_all(p, 7 * attribution::kSecondsPerDay, 1e-5);
  std::vector<ClickSample> rows(4);
  for (std::size_t k = 0; k < 4; ++k) {
    rows[k].user_id = 9;
    rows[k].item_id = 1;
    for (Mechanism m : kAllMechanisms) rows[k].weights[index_of(m)] = w[m][k];
  }
  const auto s = summarize(Dataset(rows));
  EXPECT_DOUBLE_EQ(s.ratio(Mechanism::kLinear), 4.0 * s.ratio(Mechanism::kLast));
  EXPECT_DOUBLE_EQ(s.complexity_ratio.at(9), 4.0);
  EXPECT_EQ(s.path_length_histogram.at(4), 1u);
}

TEST(NoiseLabel, IndependentColumnAtRate) {
  const auto& d = default_dataset();
  const auto noisy = with_noise_label(d, Mechanism::kDda, 0.1, 7);
  ASSERT_EQ(noisy.size(), d.size());
  std::size_t pos = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& a = d.samples()[i];
    const auto& b = noisy.samples()[i];
    EXPECT_EQ(a.weight(Mechanism::kLast), b.weight(Mechanism::kLast));
    pos += b.label(Mechanism::kDda);
  }
  const double rate = static_cast<double>(pos) / static_cast<double>(d.size());
  EXPECT_NEAR(rate, 0.1, 0.01);
}

}  // namespace
