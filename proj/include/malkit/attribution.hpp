#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "malkit/errors.hpp"

namespace malkit {

/// Attribution mechanisms, in the canonical column order of the dataset.
enum class Mechanism : std::uint8_t { kLast = 0, kFirst = 1, kLinear = 2, kDda = 3 };

inline constexpr std::array<Mechanism, 4> kAllMechanisms = {
    Mechanism::kLast, Mechanism::kFirst, Mechanism::kLinear, Mechanism::kDda};

inline constexpr std::size_t kMechanismCount = kAllMechanisms.size();

inline std::string_view mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::kLast: return "last";
    case Mechanism::kFirst: return "first";
    case Mechanism::kLinear: return "linear";
    case Mechanism::kDda: return "dda";
  }
  return "?";
}

inline Mechanism parse_mechanism(std::string_view s) {
  for (Mechanism m : kAllMechanisms)
    if (mechanism_name(m) == s) return m;
  throw ConfigError("unknown attribution mechanism '" + std::string(s) +
                    "' (expected last, first, linear or dda)");
}

inline std::size_t index_of(Mechanism m) { return static_cast<std::size_t>(m); }

}  // namespace malkit

namespace malkit::attribution {

inline constexpr double kSecondsPerDay = 86400.0;

struct Click {
  std::int64_t id = 0;
  double time = 0.0;        // seconds
  double engagement = 0.0;  // in [0, 1]
};

/// One user's time-ordered clicks on one item, plus conversion times.
struct ConversionPath {
  std::int64_t user = 0;
  std::int64_t item = 0;
  std::vector<Click> clicks;
  std::vector<double> conversions;

  void validate() const {
    if (clicks.empty()) throw ContractError("conversion path has no clicks");
    for (std::size_t i = 1; i < clicks.size(); ++i) {
      if (!(clicks[i].time > clicks[i - 1].time))
        throw ContractError("conversion path clicks are not strictly increasing in time");
    }
    for (const Click& c : clicks) {
      if (!(c.engagement >= 0.0 && c.engagement <= 1.0))
        throw ContractError("click engagement outside [0, 1]");
    }
    for (double t : conversions) {
      if (t < clicks.front().time)
        throw ContractError("conversion precedes the first click of its path");
    }
  }
};

/// Per-click weights for each mechanism, indexed by Mechanism.
struct AttributionWeights {
  std::array<std::vector<double>, kMechanismCount> by_mechanism;

  const std::vector<double>& operator[](Mechanism m) const {
    return by_mechanism[index_of(m)];
  }
  std::vector<double>& operator[](Mechanism m) { return by_mechanism[index_of(m)]; }
};

namespace detail {

// Indices of clicks with 0 <= conversion - click time <= window.
inline std::vector<std::size_t> in_window(const ConversionPath& path, double conversion,
                                          double window) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < path.clicks.size(); ++i) {
    const double lag = conversion - path.clicks[i].time;
    if (lag >= 0.0 && lag <= window) out.push_back(i);
  }
  return out;
}

}  // namespace detail

inline std::vector<double> attribute_last_click(const ConversionPath& path, double window) {
  path.validate();
  std::vector<double> w(path.clicks.size(), 0.0);
  for (double conv : path.conversions) {
    const auto idx = detail::in_window(path, conv, window);
    if (!idx.empty()) w[idx.back()] += 1.0;
  }
  return w;
}

inline std::vector<double> attribute_first_click(const ConversionPath& path, double window) {
  path.validate();
  std::vector<double> w(path.clicks.size(), 0.0);
  for (double conv : path.conversions) {
    const auto idx = detail::in_window(path, conv, window);
    if (!idx.empty()) w[idx.front()] += 1.0;
  }
  return w;
}

inline std::vector<double> attribute_linear(const ConversionPath& path, double window) {
  path.validate();
  std::vector<double> w(path.clicks.size(), 0.0);
  for (double conv : path.conversions) {
    const auto idx = detail::in_window(path, conv, window);
    for (std::size_t i : idx) w[i] += 1.0 / static_cast<double>(idx.size());
  }
  return w;
}

/// Stand-in for a learned data-driven attribution model: each in-window click
/// gets credit proportional to engagement * exp(-decay * lag), normalized per
/// conversion. A conversion whose in-window clicks all have zero engagement
/// is split linearly.
inline std::vector<double> attribute_dda_surrogate(const ConversionPath& path, double window,
                                                   double decay) {
  if (!(decay >= 0.0)) throw ContractError("dda decay must be nonnegative");
  path.validate();
  std::vector<double> w(path.clicks.size(), 0.0);
  for (double conv : path.conversions) {
    const auto idx = detail::in_window(path, conv, window);
    if (idx.empty()) continue;
    // Lags are measured from the latest in-window click so the largest
    // factor is exp(0) and nothing underflows before normalization.
    const double latest = path.clicks[idx.back()].time;
    std::vector<double> raw(idx.size());
    double total = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Click& c = path.clicks[idx[k]];
      raw[k] = c.engagement * std::exp(-decay * (latest - c.time));
      total += raw[k];
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      w[idx[k]] += total > 0.0 ? raw[k] / total : 1.0 / static_cast<double>(idx.size());
    }
  }
  return w;
}

inline AttributionWeights attribute_all(const ConversionPath& path, double window, double decay) {
  AttributionWeights out;
  out[Mechanism::kLast] = attribute_last_click(path, window);
  out[Mechanism::kFirst] = attribute_first_click(path, window);
  out[Mechanism::kLinear] = attribute_linear(path, window);
  out[Mechanism::kDda] = attribute_dda_surrogate(path, window, decay);
  return out;
}

inline int binarize(double w) {
  if (!(w >= 0.0)) throw ContractError("attribution weight must be nonnegative");
  return w > 0.0 ? 1 : 0;
}

/// Joint label over N binary attribution outcomes: O = sum_i A_i * 2^i
/// (little-endian: A_0 is the least significant bit).
inline std::uint32_t cat_encode(std::span<const int> labels) {
  if (labels.empty() || labels.size() > 31)
    throw ContractError("cat_encode expects between 1 and 31 labels");
  std::uint32_t o = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw ContractError("cat_encode label " + std::to_string(i) + " is not in {0,1}");
    o |= static_cast<std::uint32_t>(labels[i]) << i;
  }
  return o;
}

inline std::vector<int> cat_decode(std::uint32_t code, std::size_t n) {
  if (n == 0 || n > 31) throw ContractError("cat_decode expects between 1 and 31 labels");
  if (code >= (std::uint32_t{1} << n))
    throw ContractError("cat_decode code " + std::to_string(code) + " out of range for N=" +
                        std::to_string(n));
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>((code >> i) & 1u);
  return out;
}

}  // namespace malkit::attribution
