#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "malkit/attribution.hpp"
#include "malkit/errors.hpp"

namespace malkit::data {

inline constexpr std::size_t kUserFields = 7;
inline constexpr std::size_t kItemFields = 10;
inline constexpr std::size_t kContextFields = 3;
inline constexpr std::size_t kFieldCount = kUserFields + kItemFields + kContextFields;
inline constexpr std::size_t kDefaultSequenceCap = 20;

struct BehaviorItem {
  std::int64_t item = 0;
  std::int64_t shop = 0;
  std::int64_t category = 0;
  double similarity = 0.0;  // to the clicked item, in [0, 1]

  friend bool operator==(const BehaviorItem&, const BehaviorItem&) = default;
};

/// One ad click with its features and per-mechanism attribution weights.
struct ClickSample {
  std::int32_t day = 0;
  std::int64_t user_id = 0;
  std::int64_t item_id = 0;
  std::array<std::int64_t, kUserFields> user{};
  std::array<std::int64_t, kItemFields> item{};
  std::array<std::int64_t, kContextFields> context{};
  std::vector<BehaviorItem> sequence;
  std::array<double, kMechanismCount> weights{};

  double weight(Mechanism m) const { return weights[index_of(m)]; }
  int label(Mechanism m) const { return weights[index_of(m)] > 0.0 ? 1 : 0; }

  // Categorical field f in u1..u7, i1..i10, c1..c3 order.
  std::int64_t field(std::size_t f) const {
    if (f < kUserFields) return user[f];
    if (f < kUserFields + kItemFields) return item[f - kUserFields];
    return context[f - kUserFields - kItemFields];
  }

  friend bool operator==(const ClickSample&, const ClickSample&) = default;
};

inline std::string field_name(std::size_t f) {
  if (f < kUserFields) return "u" + std::to_string(f + 1);
  if (f < kUserFields + kItemFields) return "i" + std::to_string(f - kUserFields + 1);
  return "c" + std::to_string(f - kUserFields - kItemFields + 1);
}

/// Vocabulary size of each categorical field (u1..u7, i1..i10, c1..c3).
struct FeatureSchema {
  std::array<std::size_t, kFieldCount> vocab{};
  std::size_t sequence_cap = kDefaultSequenceCap;

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

/// Click samples ordered by (day, user, click time).
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<ClickSample> samples) : samples_(std::move(samples)) { reindex(); }

  const std::vector<ClickSample>& samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  std::size_t days() const noexcept { return day_offsets_.empty() ? 0 : day_offsets_.size() - 1; }

  std::span<const ClickSample> day(std::size_t d) const {
    return std::span<const ClickSample>(samples_).subspan(
        day_offsets_[d], day_offsets_[d + 1] - day_offsets_[d]);
  }

  // Samples of days [first, last).
  std::span<const ClickSample> days(std::size_t first, std::size_t last) const {
    return std::span<const ClickSample>(samples_).subspan(
        day_offsets_[first], day_offsets_[last] - day_offsets_[first]);
  }

  /// Smallest schema that covers every id in the dataset.
  FeatureSchema infer_schema() const {
    FeatureSchema s;
    s.vocab.fill(1);
    for (const auto& x : samples_) {
      for (std::size_t f = 0; f < kFieldCount; ++f)
        s.vocab[f] = std::max(s.vocab[f], static_cast<std::size_t>(x.field(f)) + 1);
      for (const auto& b : x.sequence) {
        s.vocab[kUserFields + 0] = std::max(s.vocab[kUserFields + 0], static_cast<std::size_t>(b.item) + 1);
        s.vocab[kUserFields + 1] = std::max(s.vocab[kUserFields + 1], static_cast<std::size_t>(b.shop) + 1);
        s.vocab[kUserFields + 2] = std::max(s.vocab[kUserFields + 2], static_cast<std::size_t>(b.category) + 1);
      }
    }
    return s;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) { return a.samples_ == b.samples_; }

 private:
  void reindex() {
    std::int32_t prev = 0;
    std::size_t days = 0;
    for (const auto& s : samples_) {
      if (s.day < 0) throw ContractError("negative day index");
      if (s.day < prev) throw ContractError("samples are not ordered by day");
      prev = s.day;
      days = static_cast<std::size_t>(s.day) + 1;
    }
    day_offsets_.assign(days + 1, 0);
    for (const auto& s : samples_) ++day_offsets_[static_cast<std::size_t>(s.day) + 1];
    for (std::size_t d = 1; d < day_offsets_.size(); ++d) day_offsets_[d] += day_offsets_[d - 1];
  }

  std::vector<ClickSample> samples_;
  std::vector<std::size_t> day_offsets_;
};

// ---------------------------------------------------------------------------
// CSV I/O

inline std::vector<std::string> csv_header() {
  std::vector<std::string> h{"day", "user_id", "item_id"};
  for (std::size_t f = 0; f < kFieldCount; ++f) h.push_back(field_name(f));
  h.insert(h.end(), {"beh_seq", "w_last", "w_first", "w_linear", "w_dda"});
  return h;
}

inline std::string csv_header_line() {
  std::string line;
  for (const auto& c : csv_header()) {
    if (!line.empty()) line += ',';
    line += c;
  }
  return line;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::int64_t parse_int(std::string_view s, std::size_t line, const std::string& col) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(line, col, "expected integer, got '" + std::string(s) + "'");
  if (v < 0) throw ParseError(line, col, "negative id");
  return v;
}

inline double parse_double(std::string_view s, std::size_t line, const std::string& col) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError(line, col, "expected number, got '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

inline void write_sample(std::ostream& os, const ClickSample& s) {
  os << s.day << ',' << s.user_id << ',' << s.item_id;
  for (std::size_t f = 0; f < kFieldCount; ++f) os << ',' << s.field(f);
  os << ',';
  for (std::size_t k = 0; k < s.sequence.size(); ++k) {
    const auto& b = s.sequence[k];
    if (k) os << '|';
    os << b.item << ':' << b.shop << ':' << b.category << ':' << detail::format_double(b.similarity);
  }
  for (double w : s.weights) os << ',' << detail::format_double(w);
  os << '\n';
}

inline void write_dataset(const Dataset& d, std::ostream& os) {
  os << csv_header_line() << '\n';
  for (const auto& s : d.samples()) write_sample(os, s);
}

inline void write_dataset(const Dataset& d, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ContractError("cannot open dataset for writing: " + path);
  write_dataset(d, os);
}

inline std::string serialize_dataset(const Dataset& d) {
  std::ostringstream os;
  write_dataset(d, os);
  return os.str();
}

inline ClickSample parse_sample(std::string_view line, std::size_t line_no,
                                std::size_t sequence_cap = kDefaultSequenceCap) {
  static const std::vector<std::string> header = csv_header();
  const auto cols = detail::split(line, ',');
  if (cols.size() != header.size()) {
    const std::size_t at = std::min(cols.size(), header.size() - 1);
    throw ParseError(line_no, header[at],
                     "expected " + std::to_string(header.size()) + " columns, got " +
                         std::to_string(cols.size()));
  }
  ClickSample s;
  const auto day = detail::parse_int(cols[0], line_no, header[0]);
  if (day > 1'000'000) throw ParseError(line_no, header[0], "day index implausibly large");
  s.day = static_cast<std::int32_t>(day);
  s.user_id = detail::parse_int(cols[1], line_no, header[1]);
  s.item_id = detail::parse_int(cols[2], line_no, header[2]);
  for (std::size_t f = 0; f < kFieldCount; ++f) {
    const auto v = detail::parse_int(cols[3 + f], line_no, header[3 + f]);
    if (f < kUserFields) s.user[f] = v;
    else if (f < kUserFields + kItemFields) s.item[f - kUserFields] = v;
    else s.context[f - kUserFields - kItemFields] = v;
  }
  const std::size_t seq_col = 3 + kFieldCount;
  const std::string& seq_name = header[seq_col];
  if (!cols[seq_col].empty()) {
    for (auto entry : detail::split(cols[seq_col], '|')) {
      const auto parts = detail::split(entry, ':');
      if (parts.size() != 4) throw ParseError(line_no, seq_name, "sequence entry '" + std::string(entry) + "' is not item:shop:cat:sim");
      BehaviorItem b;
      b.item = detail::parse_int(parts[0], line_no, seq_name);
      b.shop = detail::parse_int(parts[1], line_no, seq_name);
      b.category = detail::parse_int(parts[2], line_no, seq_name);
      b.similarity = detail::parse_double(parts[3], line_no, seq_name);
      if (b.similarity < 0.0 || b.similarity > 1.0) throw ParseError(line_no, seq_name, "similarity outside [0, 1]");
      s.sequence.push_back(b);
    }
    if (s.sequence.size() > sequence_cap) {
      throw ParseError(line_no, seq_name, "sequence longer than " + std::to_string(sequence_cap));
    }
  }
  for (std::size_t m = 0; m < kMechanismCount; ++m) {
    const std::size_t c = seq_col + 1 + m;
    s.weights[m] = detail::parse_double(cols[c], line_no, header[c]);
    if (s.weights[m] < 0.0) throw ParseError(line_no, header[c], "negative attribution weight");
  }
  return s;
}

inline Dataset read_dataset(std::istream& is, std::size_t sequence_cap = kDefaultSequenceCap) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(1, "day", "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header_line()) throw ParseError(1, "day", "header does not match the dataset schema");
  std::vector<ClickSample> samples;
  std::size_t line_no = 1;
  std::int32_t prev_day = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    samples.push_back(parse_sample(line, line_no, sequence_cap));
    if (samples.back().day < prev_day) throw ParseError(line_no, "day", "rows are not ordered by day");
    prev_day = samples.back().day;
  }
  return Dataset(std::move(samples));
}

inline Dataset read_dataset(const std::string& path, std::size_t sequence_cap = kDefaultSequenceCap) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open dataset: " + path);
  return read_dataset(is, sequence_cap);
}

// ---------------------------------------------------------------------------
// Day partition

/// Chronological split with validation by the day-ahead convention: the
/// model trained through day T-2 is scored on day T-1, the model trained
/// through day T-1 is scored on the last day T.
struct DaySplit {
  std::size_t days = 0;
  std::size_t train_end = 0;        // training days are [0, train_end)
  std::size_t probe_train_end = 0;  // validation model trains on [0, probe_train_end)
  std::size_t probe_day = 0;        // ...and is evaluated on this day
  std::size_t test_day = 0;
};

inline DaySplit split_days(std::size_t days) {
  if (days < 3) throw ContractError("day split needs at least 3 days, got " + std::to_string(days));
  return {days, days - 1, days - 2, days - 2, days - 1};
}

inline DaySplit split_days(const Dataset& d) { return split_days(d.days()); }

}  // namespace malkit::data
