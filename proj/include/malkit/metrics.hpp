#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "malkit/attribution.hpp"
#include "malkit/dataset.hpp"
#include "malkit/errors.hpp"

namespace malkit::metrics {

struct ScoredSample {
  std::int64_t user = 0;
  double score = 0.0;
  int label = 0;
  double weight = 1.0;  // attribution weight, used by weighted_auc only
};

namespace detail {

// Average ranks (1-based) of `scores`; tied values share the mean rank.
inline std::vector<double> average_ranks(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> ranks(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Probability that a random positive outscores a random negative, ties
/// counted one half. O(n log n) through the rank-sum statistic.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("auc: " + std::to_string(scores.size()) + " scores, " + std::to_string(labels.size()) + " labels");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("auc: nonfinite score at row " + std::to_string(i));
    if (labels[i] != 0 && labels[i] != 1) throw ContractError("auc: label outside {0,1}");
    pos += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw MetricUndefined("auc needs at least one positive and one negative sample");
  const auto ranks = detail::average_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (labels[i]) rank_sum += ranks[i];
  const double p = static_cast<double>(pos);
  const double n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

inline double auc(std::span<const ScoredSample> samples) {
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& x : samples) {
    s.push_back(x.score);
    y.push_back(x.label);
  }
  return auc(s, y);
}

/// AUC where each positive counts with its attribution weight and each
/// negative with weight 1.
inline double weighted_auc(std::span<const ScoredSample> samples) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].score < samples[b].score; });
  double wpos = 0.0, wneg = 0.0, credit = 0.0, neg_below = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double tie_pos = 0.0, tie_neg = 0.0;
    while (j < order.size() && samples[order[j]].score == samples[order[i]].score) {
      const auto& x = samples[order[j]];
      if (x.label) {
        if (!(x.weight >= 0.0)) throw ContractError("weighted_auc: negative weight");
        tie_pos += x.weight;
      } else {
        tie_neg += 1.0;
      }
      ++j;
    }
    credit += tie_pos * (neg_below + 0.5 * tie_neg);
    neg_below += tie_neg;
    wpos += tie_pos;
    i = j;
  }
  wneg = neg_below;
  if (wpos <= 0.0 || wneg <= 0.0) throw MetricUndefined("weighted_auc needs positive weight mass and a negative");
  return credit / (wpos * wneg);
}

struct UserAuc {
  std::int64_t user = 0;
  std::size_t clicks = 0;
  double auc = 0.0;
};

struct GaucResult {
  double gauc = 0.0;
  std::size_t included = 0;
  std::size_t excluded = 0;
  std::vector<UserAuc> users;  // included users, ascending id
};

/// Click-weighted mean of per-user AUC over users that have both classes.
inline GaucResult gauc(std::span<const ScoredSample> samples) {
  std::map<std::int64_t, std::vector<ScoredSample>> by_user;
  for (const auto& x : samples) by_user[x.user].push_back(x);
  GaucResult r;
  double num = 0.0, den = 0.0;
  for (const auto& [user, rows] : by_user) {
    std::size_t pos = 0;
    for (const auto& x : rows) pos += static_cast<std::size_t>(x.label != 0);
    if (pos == 0 || pos == rows.size()) {
      ++r.excluded;
      continue;
    }
    const double a = auc(rows);
    r.users.push_back({user, rows.size(), a});
    num += static_cast<double>(rows.size()) * a;
    den += static_cast<double>(rows.size());
    ++r.included;
  }
  if (r.included == 0) throw MetricUndefined("gauc: no user has both positive and negative samples");
  r.gauc = num / den;
  return r;
}

/// Mean (w_dda - w_linear) over the positives of `designated`.
inline double mml(std::span<const data::ClickSample> samples, Mechanism designated) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    if (!s.label(designated)) continue;
    total += s.weight(Mechanism::kDda) - s.weight(Mechanism::kLinear);
    ++count;
  }
  if (count == 0)
    throw MetricUndefined("mml: no positives under " + std::string(mechanism_name(designated)));
  return total / static_cast<double>(count);
}

inline double mml(std::span<const double> w_dda, std::span<const double> w_linear) {
  if (w_dda.size() != w_linear.size()) throw DimensionError("mml: weight vectors differ in length");
  if (w_dda.empty()) throw MetricUndefined("mml: empty positive set");
  double total = 0.0;
  for (std::size_t i = 0; i < w_dda.size(); ++i) total += w_dda[i] - w_linear[i];
  return total / static_cast<double>(w_dda.size());
}

struct LiftRow {
  std::size_t bucket = 0;
  double lower = 0.0;  // inclusive
  double upper = 0.0;  // exclusive, except for the last bucket
  std::size_t users = 0;
  double delta = 0.0;  // mean AUC_A - AUC_B
};

/// Buckets users by complexity ratio using `edges` (k+1 ascending values for
/// k buckets) and reports the mean per-user AUC difference of A over B.
/// Users missing from either evaluation or without a ratio are dropped;
/// empty buckets are omitted.
inline std::vector<LiftRow> group_lift(std::span<const UserAuc> a, std::span<const UserAuc> b,
                                       const std::map<std::int64_t, double>& ratio,
                                       std::span<const double> edges) {
  if (edges.size() < 2) throw ContractError("group_lift needs at least two bucket edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw ContractError("group_lift edges must be strictly increasing");
  std::map<std::int64_t, double> auc_b;
  for (const auto& u : b) auc_b[u.user] = u.auc;
  const std::size_t k = edges.size() - 1;
  std::vector<double> sum(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (const auto& u : a) {
    auto ib = auc_b.find(u.user);
    auto ir = ratio.find(u.user);
    if (ib == auc_b.end() || ir == ratio.end()) continue;
    const double x = ir->second;
    if (x < edges.front() || x > edges.back()) continue;
    std::size_t bucket = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin());
    bucket = std::min(bucket == 0 ? 0 : bucket - 1, k - 1);
    sum[bucket] += u.auc - ib->second;
    ++count[bucket];
  }
  std::vector<LiftRow> rows;
  for (std::size_t i = 0; i < k; ++i)
    if (count[i]) rows.push_back({i, edges[i], edges[i + 1], count[i], sum[i] / static_cast<double>(count[i])});
  return rows;
}

/// Edges splitting `values` into `buckets` groups of roughly equal size.
inline std::vector<double> quantile_edges(std::vector<double> values, std::size_t buckets) {
  if (values.empty() || buckets == 0) throw ContractError("quantile_edges needs values and buckets");
  std::sort(values.begin(), values.end());
  std::vector<double> edges{values.front()};
  for (std::size_t q = 1; q < buckets; ++q) {
    const double v = values[q * values.size() / buckets];
    if (v > edges.back()) edges.push_back(v);
  }
  const double top = std::nextafter(values.back(), std::numeric_limits<double>::infinity());
  if (top > edges.back()) edges.push_back(top);
  if (edges.size() < 2) edges.push_back(top + 1.0);
  return edges;
}

struct MetricReport {
  Mechanism target = Mechanism::kLast;
  std::size_t samples = 0;
  double auc = 0.0;
  double gauc = 0.0;
  std::size_t users_included = 0;
  std::size_t users_excluded = 0;
  std::vector<UserAuc> per_user;
  std::optional<double> mml;
};

inline MetricReport evaluate_scores(std::span<const ScoredSample> scored, Mechanism target) {
  MetricReport r;
  r.target = target;
  r.samples = scored.size();
  r.auc = auc(scored);
  auto g = gauc(scored);
  r.gauc = g.gauc;
  r.users_included = g.included;
  r.users_excluded = g.excluded;
  r.per_user = std::move(g.users);
  return r;
}

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["target"] = mechanism_name(r.target);
  j["samples"] = r.samples;
  j["auc"] = r.auc;
  j["gauc"] = r.gauc;
  j["users_included"] = r.users_included;
  j["users_excluded"] = r.users_excluded;
  j["mml"] = r.mml ? nlohmann::ordered_json(*r.mml) : nlohmann::ordered_json(nullptr);
  auto& users = j["per_user"] = nlohmann::ordered_json::array();
  for (const auto& u : r.per_user) users.push_back({{"user", u.user}, {"clicks", u.clicks}, {"auc", u.auc}});
  return j;
}

inline MetricReport metric_report_from_json(const nlohmann::ordered_json& j) {
  MetricReport r;
  r.target = parse_mechanism(j.at("target").get<std::string>());
  r.samples = j.at("samples").get<std::size_t>();
  r.auc = j.at("auc").get<double>();
  r.gauc = j.at("gauc").get<double>();
  r.users_included = j.at("users_included").get<std::size_t>();
  r.users_excluded = j.at("users_excluded").get<std::size_t>();
  if (!j.at("mml").is_null()) r.mml = j.at("mml").get<double>();
  for (const auto& u : j.at("per_user"))
    r.per_user.push_back({u.at("user").get<std::int64_t>(), u.at("clicks").get<std::size_t>(), u.at("auc").get<double>()});
  return r;
}

}  // namespace malkit::metrics
