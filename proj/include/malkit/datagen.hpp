#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "malkit/attribution.hpp"
#include "malkit/dataset.hpp"
#include "malkit/errors.hpp"
#include "malkit/hashing.hpp"

namespace malkit::data {

/// Parameters of the synthetic click-log generator.
struct GenConfig {
  std::size_t users = 600;
  std::size_t items = 1500;
  std::size_t shops = 150;
  std::size_t categories = 30;
  std::size_t days = 8;
  double clicks_per_user_day = 10.0;
  // Target share of clicks that are positive under last-click attribution.
  double conversion_rate = 0.06;
  double path_length_mean = 3.0;
  std::size_t path_length_max = 12;
  double click_gap_hours = 8.0;
  double window_days = 7.0;
  double dda_decay_per_day = 0.6931471805599453;  // credit halves per day of lag
  double heavy_user_share = 0.2;
  double heavy_activity_ratio = 4.0;
  double multi_conversion_prob = 0.15;
  double bounce_prob = 0.3;
  double similarity_concentration = 8.0;
  std::size_t sequence_cap = kDefaultSequenceCap;
  std::array<std::size_t, kUserFields - 1> user_profile_vocab{8, 8, 3, 32, 8, 2};
  std::array<std::size_t, kItemFields - 3> item_profile_vocab{8, 10, 64, 128, 8, 4, 6};
  std::array<std::size_t, kContextFields> context_vocab{4, 5, 6};
  std::uint64_t seed = 1;

  double window_seconds() const { return window_days * attribution::kSecondsPerDay; }
  double dda_decay_per_second() const { return dda_decay_per_day / attribution::kSecondsPerDay; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v < 1) throw ConfigError(std::string("generator: ") + name + " must be >= 1");
    };
    positive(users, "users");
    positive(items, "items");
    positive(shops, "shops");
    positive(categories, "categories");
    positive(days, "days");
    positive(path_length_max, "path_length_max");
    positive(sequence_cap, "sequence_cap");
    auto rate = [](double v, const char* name) {
      if (!(v > 0.0 && v < 1.0)) throw ConfigError(std::string("generator: ") + name + " must be in (0, 1)");
    };
    rate(conversion_rate, "conversion_rate");
    rate(heavy_user_share, "heavy_user_share");
    rate(bounce_prob, "bounce_prob");
    if (!(multi_conversion_prob >= 0.0 && multi_conversion_prob < 1.0))
      throw ConfigError("generator: multi_conversion_prob must be in [0, 1)");
    if (!(clicks_per_user_day > 0.0)) throw ConfigError("generator: clicks_per_user_day must be > 0");
    if (!(path_length_mean >= 1.0)) throw ConfigError("generator: path_length_mean must be >= 1");
    if (!(click_gap_hours > 0.0)) throw ConfigError("generator: click_gap_hours must be > 0");
    if (!(window_days > 0.0)) throw ConfigError("generator: window_days must be > 0");
    if (!(dda_decay_per_day >= 0.0)) throw ConfigError("generator: dda_decay_per_day must be >= 0");
    if (!(heavy_activity_ratio >= 1.0)) throw ConfigError("generator: heavy_activity_ratio must be >= 1");
    if (!(similarity_concentration > 0.0)) throw ConfigError("generator: similarity_concentration must be > 0");
    if (shops < categories) throw ConfigError("generator: need at least one shop per category");
    for (std::size_t v : user_profile_vocab) positive(v, "user_profile_vocab");
    for (std::size_t v : item_profile_vocab) positive(v, "item_profile_vocab");
    for (std::size_t v : context_vocab) positive(v, "context_vocab");
  }

  FeatureSchema schema() const {
    FeatureSchema s;
    s.sequence_cap = sequence_cap;
    s.vocab[0] = users;
    for (std::size_t f = 1; f < kUserFields; ++f) s.vocab[f] = user_profile_vocab[f - 1];
    s.vocab[kUserFields + 0] = items;
    s.vocab[kUserFields + 1] = shops;
    s.vocab[kUserFields + 2] = categories;
    for (std::size_t f = 3; f < kItemFields; ++f) s.vocab[kUserFields + f] = item_profile_vocab[f - 3];
    for (std::size_t f = 0; f < kContextFields; ++f) s.vocab[kUserFields + kItemFields + f] = context_vocab[f];
    return s;
  }
};

namespace gen_detail {

inline constexpr std::size_t kLatentDim = 4;
using Latent = std::array<double, kLatentDim>;

inline double dot(const Latent& a, const Latent& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < kLatentDim; ++k) s += a[k] * b[k];
  return s;
}

inline double cosine(const Latent& a, const Latent& b) {
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  return na > 0 && nb > 0 ? dot(a, b) / (na * nb) : 0.0;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Index of the dominant latent direction, with sign: 2 * kLatentDim buckets.
inline std::int64_t taste_cluster(const Latent& v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < kLatentDim; ++k)
    if (std::abs(v[k]) > std::abs(v[best])) best = k;
  return static_cast<std::int64_t>(2 * best + (v[best] < 0 ? 1 : 0));
}

inline std::int64_t bucket(double x, double width, std::size_t vocab) {
  const double b = std::floor(x / width + static_cast<double>(vocab) / 2.0);
  return static_cast<std::int64_t>(std::clamp(b, 0.0, static_cast<double>(vocab - 1)));
}

inline std::int64_t clamp_id(std::int64_t v, std::size_t vocab) {
  return std::clamp<std::int64_t>(v, 0, static_cast<std::int64_t>(vocab) - 1);
}

inline double sample_beta(std::mt19937_64& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x + y > 0 ? x / (x + y) : 0.5;
}

struct Item {
  Latent latent{};
  double appeal = 0.0;
  std::int64_t shop = 0;
  std::int64_t category = 0;
  std::array<std::int64_t, kItemFields> features{};
};

struct User {
  Latent latent{};
  double propensity = 0.0;
  double activity = 1.0;
  std::array<std::int64_t, kUserFields> features{};
  std::vector<std::int64_t> initial_history;  // oldest first
};

struct PendingClick {
  double time = 0.0;
  double engagement = 0.0;
  std::array<std::int64_t, kContextFields> context{};
};

struct Episode {
  std::int64_t item = 0;
  std::vector<PendingClick> clicks;  // clicks beyond the horizon already removed
  std::size_t full_length = 0;       // path length before truncation
  double score = 0.0;                // conversion logit without the intercept
};

}  // namespace gen_detail

/// Synthesizes a multi-day click log whose labels come from the attribution
/// module. Users carry a latent taste and conversion propensity, items a
/// latent profile and appeal; each user-item episode is a click path whose
/// conversion probability grows with propensity, appeal, taste match and the
/// similarity of the user's purchase history to the item.
inline Dataset generate(const GenConfig& cfg) {
  using namespace gen_detail;
  cfg.validate();
  const FeatureSchema schema = cfg.schema();
  const double horizon = static_cast<double>(cfg.days) * attribution::kSecondsPerDay;
  const double gap_mean = cfg.click_gap_hours * 3600.0;

  // Catalogue.
  std::mt19937_64 item_rng(derive_seed(cfg.seed, "items"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Latent> centers(cfg.categories);
  for (auto& c : centers)
    for (double& v : c) v = normal(item_rng);
  std::vector<std::vector<std::int64_t>> shops_of_category(cfg.categories);
  for (std::size_t s = 0; s < cfg.shops; ++s) shops_of_category[s % cfg.categories].push_back(static_cast<std::int64_t>(s));
  std::vector<Item> items(cfg.items);
  for (std::size_t i = 0; i < cfg.items; ++i) {
    Item& it = items[i];
    it.category = static_cast<std::int64_t>(item_rng() % cfg.categories);
    const auto& shops = shops_of_category[static_cast<std::size_t>(it.category)];
    it.shop = shops[item_rng() % shops.size()];
    for (std::size_t k = 0; k < kLatentDim; ++k)
      it.latent[k] = centers[static_cast<std::size_t>(it.category)][k] + 0.6 * normal(item_rng);
    it.appeal = 0.6 * normal(item_rng);
    const auto& pv = cfg.item_profile_vocab;
    it.features[0] = static_cast<std::int64_t>(i);
    it.features[1] = it.shop;
    it.features[2] = it.category;
    it.features[3] = bucket(it.appeal + 0.2 * normal(item_rng), 0.3, pv[0]);
    it.features[4] = static_cast<std::int64_t>(item_rng() % pv[1]);
    it.features[5] = static_cast<std::int64_t>(item_rng() % pv[2]);
    it.features[6] = static_cast<std::int64_t>(item_rng() % pv[3]);
    it.features[7] = clamp_id(taste_cluster(it.latent), pv[4]);
    it.features[8] = static_cast<std::int64_t>(item_rng() % pv[5]);
    it.features[9] = static_cast<std::int64_t>(item_rng() % pv[6]);
  }

  auto affinity = [&](const User& u, std::int64_t item) {
    return dot(u.latent, items[static_cast<std::size_t>(item)].latent) / std::sqrt(double(kLatentDim));
  };
  // Taste-driven choice among a random handful of candidates.
  auto choose_item = [&](std::mt19937_64& rng, const User& u) {
    constexpr std::size_t kCandidates = 24;
    std::array<std::int64_t, kCandidates> cand{};
    std::array<double, kCandidates> logit{};
    double mx = -1e300;
    for (std::size_t c = 0; c < kCandidates; ++c) {
      cand[c] = static_cast<std::int64_t>(rng() % cfg.items);
      logit[c] = affinity(u, cand[c]) + 0.5 * items[static_cast<std::size_t>(cand[c])].appeal;
      mx = std::max(mx, logit[c]);
    }
    std::array<double, kCandidates> p{};
    for (std::size_t c = 0; c < kCandidates; ++c) p[c] = std::exp(logit[c] - mx);
    std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
    return cand[pick(rng)];
  };

  // Activity levels: heavy users click heavy_activity_ratio times as often,
  // normalized so the population mean stays at clicks_per_user_day.
  const double light = 1.0 / (cfg.heavy_user_share * cfg.heavy_activity_ratio + 1.0 - cfg.heavy_user_share);

  // Phase 1: users and their click episodes.
  std::vector<User> users(cfg.users);
  std::vector<std::vector<Episode>> episodes(cfg.users);
  std::size_t total_clicks = 0;
  for (std::size_t u = 0; u < cfg.users; ++u) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "user:" + std::to_string(u)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    User& user = users[u];
    for (double& v : user.latent) v = 0.9 * normal(rng);
    user.propensity = 0.6 * normal(rng);
    const bool heavy = unit(rng) < cfg.heavy_user_share;
    user.activity = heavy ? light * cfg.heavy_activity_ratio : light;
    const auto& pv = cfg.user_profile_vocab;
    user.features[0] = static_cast<std::int64_t>(u);
    user.features[1] = bucket(user.propensity + 0.3 * normal(rng), 0.25, pv[0]);
    user.features[2] = static_cast<std::int64_t>(rng() % pv[1]);
    user.features[3] = static_cast<std::int64_t>(rng() % pv[2]);
    user.features[4] = static_cast<std::int64_t>(rng() % pv[3]);
    user.features[5] = clamp_id(taste_cluster(user.latent), pv[4]);
    user.features[6] = clamp_id(heavy ? 1 : 0, pv[5]);
    for (std::size_t k = 0; k < cfg.sequence_cap; ++k) user.initial_history.push_back(choose_item(rng, user));

    const double mean_episodes = user.activity * cfg.clicks_per_user_day / cfg.path_length_mean;
    std::poisson_distribution<int> n_episodes(mean_episodes);
    std::geometric_distribution<int> extra_clicks(1.0 / cfg.path_length_mean);
    std::exponential_distribution<double> gap(1.0 / gap_mean);
    for (std::size_t d = 0; d < cfg.days; ++d) {
      const int count = n_episodes(rng);
      for (int e = 0; e < count; ++e) {
        Episode ep;
        ep.item = choose_item(rng, user);
        ep.full_length = std::min<std::size_t>(1 + static_cast<std::size_t>(extra_clicks(rng)), cfg.path_length_max);
        double t = (static_cast<double>(d) + unit(rng)) * attribution::kSecondsPerDay;
        const std::int64_t scenario = static_cast<std::int64_t>(rng() % cfg.context_vocab[0]);
        for (std::size_t k = 0; k < ep.full_length; ++k) {
          if (k) t += 60.0 + gap(rng);
          PendingClick c;
          c.time = t;
          c.engagement = unit(rng) < cfg.bounce_prob ? 0.0 : sample_beta(rng, 2.0, 2.0);
          c.context[0] = unit(rng) < 0.7 ? scenario : static_cast<std::int64_t>(rng() % cfg.context_vocab[0]);
          c.context[1] = clamp_id(static_cast<std::int64_t>(k), cfg.context_vocab[1]);
          const double hour = std::fmod(t, attribution::kSecondsPerDay) / 3600.0;
          c.context[2] = clamp_id(static_cast<std::int64_t>(hour / 24.0 * static_cast<double>(cfg.context_vocab[2])),
                                  cfg.context_vocab[2]);
          if (t < horizon) ep.clicks.push_back(c);
        }
        double hist_sim = 0.0;
        for (std::int64_t h : user.initial_history)
          hist_sim += cosine(items[static_cast<std::size_t>(h)].latent, items[static_cast<std::size_t>(ep.item)].latent);
        hist_sim /= static_cast<double>(user.initial_history.size());
        ep.score = user.propensity + items[static_cast<std::size_t>(ep.item)].appeal + 1.2 * affinity(user, ep.item) +
                   0.8 * hist_sim + 0.3 * std::log(static_cast<double>(ep.full_length));
        total_clicks += ep.clicks.size();
        if (!ep.clicks.empty()) episodes[u].push_back(std::move(ep));
      }
    }
  }
  if (total_clicks == 0) throw GenerationError("generator produced no clicks; increase clicks_per_user_day or users");

  // Phase 2: intercept so that expected converting episodes per click match
  // the configured last-click positive rate.
  auto expected_rate = [&](double intercept) {
    double conv = 0.0;
    for (const auto& eps : episodes)
      for (const auto& ep : eps) conv += logistic(ep.score + intercept);
    return conv / static_cast<double>(total_clicks);
  };
  double lo = -30.0, hi = 30.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (expected_rate(mid) < cfg.conversion_rate ? lo : hi) = mid;
  }
  const double intercept = 0.5 * (lo + hi);

  // Phase 3: conversions, attribution and sample assembly.
  const double window = cfg.window_seconds();
  const double decay = cfg.dda_decay_per_second();
  std::vector<ClickSample> samples;
  samples.reserve(total_clicks);
  for (std::size_t u = 0; u < cfg.users; ++u) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "conv:" + std::to_string(u)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::exponential_distribution<double> after(1.0 / 3600.0);
    const User& user = users[u];

    struct Emitted {
      double time;
      std::int64_t item;
      std::array<std::int64_t, kContextFields> context;
      std::array<double, kMechanismCount> weights;
    };
    std::vector<Emitted> clicks;
    std::vector<std::pair<double, std::int64_t>> purchases;
    for (std::size_t k = 0; k < user.initial_history.size(); ++k)
      purchases.emplace_back(-1e9 + static_cast<double>(k), user.initial_history[k]);

    for (const auto& ep : episodes[u]) {
      attribution::ConversionPath path;
      path.user = static_cast<std::int64_t>(u);
      path.item = ep.item;
      for (std::size_t k = 0; k < ep.clicks.size(); ++k)
        path.clicks.push_back({static_cast<std::int64_t>(k), ep.clicks[k].time, ep.clicks[k].engagement});
      const std::size_t n = path.clicks.size();
      if (unit(rng) < logistic(ep.score + intercept)) {
        auto conversion_after = [&](std::size_t k) {
          const double start = path.clicks[k].time;
          if (k + 1 < n) return start + (0.05 + 0.9 * unit(rng)) * (path.clicks[k + 1].time - start);
          return start + 60.0 + after(rng);
        };
        const std::size_t pos = unit(rng) < 0.65 ? n - 1 : static_cast<std::size_t>(rng() % n);
        const double first_conv = conversion_after(pos);
        path.conversions.push_back(first_conv);
        if (unit(rng) < cfg.multi_conversion_prob) {
          if (pos + 1 < n) {
            const std::size_t pos2 = pos + 1 + static_cast<std::size_t>(rng() % (n - pos - 1));
            path.conversions.push_back(conversion_after(pos2));
          } else {
            path.conversions.push_back(first_conv + 60.0 + after(rng));
          }
        }
        for (double t : path.conversions) purchases.emplace_back(t, ep.item);
      }
      const auto w = attribution::attribute_all(path, window, decay);
      for (std::size_t k = 0; k < n; ++k) {
        Emitted e{path.clicks[k].time, ep.item, ep.clicks[k].context, {}};
        for (Mechanism m : kAllMechanisms) e.weights[index_of(m)] = w[m][k];
        clicks.push_back(e);
      }
    }
    std::sort(purchases.begin(), purchases.end());
    std::stable_sort(clicks.begin(), clicks.end(), [](const Emitted& a, const Emitted& b) { return a.time < b.time; });

    for (const auto& c : clicks) {
      ClickSample s;
      s.day = static_cast<std::int32_t>(c.time / attribution::kSecondsPerDay);
      s.user_id = static_cast<std::int64_t>(u);
      s.item_id = c.item;
      s.user = user.features;
      s.item = items[static_cast<std::size_t>(c.item)].features;
      s.context = c.context;
      s.weights = c.weights;
      // Most recent purchases strictly before the click, oldest first.
      const auto end = std::lower_bound(purchases.begin(), purchases.end(), std::make_pair(c.time, std::int64_t{-1}));
      const auto count = std::min<std::ptrdiff_t>(end - purchases.begin(), static_cast<std::ptrdiff_t>(cfg.sequence_cap));
      const Item& target = items[static_cast<std::size_t>(c.item)];
      for (auto it = end - count; it != end; ++it) {
        const Item& h = items[static_cast<std::size_t>(it->second)];
        const double mean = std::clamp(0.5 + 0.4 * cosine(h.latent, target.latent), 0.02, 0.98);
        const double sim = sample_beta(rng, mean * cfg.similarity_concentration, (1.0 - mean) * cfg.similarity_concentration);
        s.sequence.push_back({it->second, h.shop, h.category, std::clamp(sim, 0.0, 1.0)});
      }
      samples.push_back(std::move(s));
    }
  }
  std::stable_sort(samples.begin(), samples.end(),
                   [](const ClickSample& a, const ClickSample& b) { return a.day < b.day; });

  for (Mechanism m : kAllMechanisms) {
    const bool any = std::any_of(samples.begin(), samples.end(), [m](const ClickSample& s) { return s.label(m) == 1; });
    if (!any) {
      throw GenerationError("no positive samples under " + std::string(mechanism_name(m)) +
                            " attribution; increase conversion_rate or clicks_per_user_day");
    }
  }
  (void)schema;
  return Dataset(std::move(samples));
}

// ---------------------------------------------------------------------------
// Summary statistics

struct DatasetSummary {
  std::size_t samples = 0;
  std::size_t users = 0;
  std::size_t days = 0;
  std::array<std::size_t, kMechanismCount> positives{};
  std::array<double, kMechanismCount> positive_ratio{};
  std::map<std::int64_t, std::size_t> clicks_per_user;
  // Number of clicks on a (user, item) pair with at least one linear
  // positive -> count of such pairs.
  std::map<std::size_t, std::size_t> path_length_histogram;
  // Per-user linear positives / last-click positives, for users with at
  // least one last-click positive.
  std::map<std::int64_t, double> complexity_ratio;

  double ratio(Mechanism m) const { return positive_ratio[index_of(m)]; }
};

inline DatasetSummary summarize(const Dataset& d) {
  DatasetSummary s;
  s.samples = d.size();
  s.days = d.days();
  std::map<std::int64_t, std::array<std::size_t, kMechanismCount>> per_user_pos;
  std::map<std::pair<std::int64_t, std::int64_t>, std::pair<std::size_t, bool>> pairs;
  for (const auto& x : d.samples()) {
    ++s.clicks_per_user[x.user_id];
    auto& up = per_user_pos[x.user_id];
    for (Mechanism m : kAllMechanisms) {
      if (x.label(m)) {
        ++s.positives[index_of(m)];
        ++up[index_of(m)];
      }
    }
    auto& pr = pairs[{x.user_id, x.item_id}];
    ++pr.first;
    pr.second = pr.second || x.label(Mechanism::kLinear);
  }
  s.users = s.clicks_per_user.size();
  for (std::size_t m = 0; m < kMechanismCount; ++m)
    s.positive_ratio[m] = s.samples ? static_cast<double>(s.positives[m]) / static_cast<double>(s.samples) : 0.0;
  for (const auto& [key, v] : pairs)
    if (v.second) ++s.path_length_histogram[v.first];
  for (const auto& [user, pos] : per_user_pos) {
    const std::size_t last = pos[index_of(Mechanism::kLast)];
    if (last > 0)
      s.complexity_ratio[user] = static_cast<double>(pos[index_of(Mechanism::kLinear)]) / static_cast<double>(last);
  }
  return s;
}

}  // namespace malkit::data

namespace malkit::data {

/// Copy of `d` whose `column` weights are replaced by independent
/// Bernoulli(rate) labels, unrelated to anything else in the data.
inline Dataset with_noise_label(const Dataset& d, Mechanism column, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("noise rate must be in (0, 1)");
  std::mt19937_64 rng(derive_seed(seed, "noise:" + std::string(mechanism_name(column))));
  std::bernoulli_distribution coin(rate);
  std::vector<ClickSample> rows = d.samples();
  for (auto& s : rows) s.weights[index_of(column)] = coin(rng) ? 1.0 : 0.0;
  return Dataset(std::move(rows));
}

}  // namespace malkit::data
