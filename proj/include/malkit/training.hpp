#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "malkit/attribution.hpp"
#include "malkit/autograd.hpp"
#include "malkit/dataset.hpp"
#include "malkit/errors.hpp"
#include "malkit/hashing.hpp"
#include "malkit/metrics.hpp"
#include "malkit/models.hpp"
#include "malkit/params.hpp"

namespace malkit::training {

enum class AtlMode : std::uint8_t { kNone, kGcs, kPcgrad };
enum class Weighting : std::uint8_t { kBinary, kWeighted };

inline std::string_view atl_name(AtlMode m) {
  switch (m) {
    case AtlMode::kNone: return "none";
    case AtlMode::kGcs: return "gcs";
    case AtlMode::kPcgrad: return "pcgrad";
  }
  return "?";
}

inline AtlMode parse_atl(std::string_view s) {
  for (AtlMode m : {AtlMode::kNone, AtlMode::kGcs, AtlMode::kPcgrad})
    if (atl_name(m) == s) return m;
  throw ConfigError("unknown atl_mode '" + std::string(s) + "' (expected none, gcs or pcgrad)");
}

inline std::string_view weighting_name(Weighting w) { return w == Weighting::kBinary ? "binary" : "weighted"; }

inline Weighting parse_weighting(std::string_view s) {
  if (s == "binary") return Weighting::kBinary;
  if (s == "weighted") return Weighting::kWeighted;
  throw ConfigError("unknown weighting '" + std::string(s) + "' (expected binary or weighted)");
}

struct TrainConfig {
  double lr = 0.003;
  double lambda = 0.2;
  std::size_t batch_size = 256;
  std::uint64_t seed = 1;
  AtlMode atl = AtlMode::kNone;
  Weighting weighting = Weighting::kBinary;
  Mechanism target = Mechanism::kLast;
  // Auxiliary losses to train; unset means every auxiliary head of the model.
  std::optional<std::vector<Mechanism>> aux;
  bool cat = true;  // train the CAT head when the model has one
  bool pcgrad_mean = false;
  bool stop_after_validation = false;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be > 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train: lambda must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Losses

inline const data::ClickSample& deref(const data::ClickSample& s) { return s; }
inline const data::ClickSample& deref(const data::ClickSample* s) { return *s; }

/// Sample weights for one mechanism: negatives weigh 1; positives weigh 1 in
/// binary mode and their attribution weight in weighted mode.
template <class Range>
std::vector<double> sample_weights(const Range& samples, Mechanism m, Weighting mode) {
  std::vector<double> w;
  for (const auto& s : samples) {
    const data::ClickSample& x = deref(s);
    w.push_back(mode == Weighting::kWeighted && x.label(m) ? x.weight(m) : 1.0);
  }
  return w;
}

template <class Range>
std::vector<double> binary_labels(const Range& samples, Mechanism m) {
  std::vector<double> y;
  for (const auto& s : samples) y.push_back(static_cast<double>(deref(s).label(m)));
  return y;
}

inline nn::Var bce_loss(nn::Var p, std::span<const double> labels, std::span<const double> weights) {
  return nn::binary_cross_entropy(p, labels, weights);
}

/// L_primary + lambda * sum_k L_k.
inline nn::Var total_loss(nn::Var primary, const std::vector<nn::Var>& aux, double lambda) {
  std::vector<nn::Var> terms{primary};
  std::vector<double> coeffs{1.0};
  for (nn::Var a : aux) {
    terms.push_back(a);
    coeffs.push_back(lambda);
  }
  return nn::weighted_sum(terms, coeffs);
}

inline double total_loss(double primary, std::span<const double> aux, double lambda) {
  double s = 0.0;
  for (double a : aux) s += a;
  return primary + lambda * s;
}

// ---------------------------------------------------------------------------
// Auxiliary-task learning

inline constexpr double kCosineEpsilon = 1e-12;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("gradient vectors differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / (norm(a) * norm(b) + kCosineEpsilon);
}

/// alpha_k = sigmoid(cos(g_p, g_k)).
inline std::vector<double> gcs_weights(std::span<const double> primary,
                                       const std::vector<std::vector<double>>& aux) {
  std::vector<double> alpha;
  for (const auto& g : aux) alpha.push_back(nn::detail::sigmoid(cosine_similarity(primary, g)));
  return alpha;
}

struct Projection {
  std::size_t i = 0;  // projected gradient
  std::size_t j = 0;  // gradient it was projected against
  double inner_before = 0.0;
  double inner_after = 0.0;  // <g~_i, g_j> right after the projection
  double norm_i = 0.0;       // |g_i| going into the projection
  double norm_j = 0.0;
};

struct PcgradResult {
  std::vector<double> merged;
  std::vector<std::vector<double>> modified;
  std::vector<Projection> projections;
  std::size_t conflicts() const { return projections.size(); }
};

inline constexpr double kZeroNormSquared = 1e-300;

/// Projects each gradient off every other gradient it conflicts with, in a
/// random order per gradient, then sums (or averages) the results.
inline PcgradResult pcgrad_surgery(const std::vector<std::vector<double>>& grads, std::mt19937_64& rng,
                                   bool mean = false) {
  if (grads.size() < 2) throw ContractError("pcgrad_surgery needs at least two gradients");
  const std::size_t dim = grads.front().size();
  for (const auto& g : grads)
    if (g.size() != dim) throw DimensionError("pcgrad_surgery: gradients differ in length");
  PcgradResult r;
  r.merged.assign(dim, 0.0);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    std::vector<double> gi = grads[i];
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < grads.size(); ++j)
      if (j != i) others.push_back(j);
    std::shuffle(others.begin(), others.end(), rng);
    for (std::size_t j : others) {
      const auto& gj = grads[j];
      const double inner = dot(gi, gj);
      const double nj2 = dot(gj, gj);
      if (inner >= 0.0 || nj2 < kZeroNormSquared) continue;
      const double c = inner / nj2;
      const double ni = norm(gi);
      for (std::size_t k = 0; k < dim; ++k) gi[k] -= c * gj[k];
      r.projections.push_back({i, j, inner, dot(gi, gj), ni, std::sqrt(nj2)});
    }
    for (std::size_t k = 0; k < dim; ++k) r.merged[k] += gi[k];
    r.modified.push_back(std::move(gi));
  }
  if (mean)
    for (double& v : r.merged) v /= static_cast<double>(grads.size());
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

template <class Range>
std::vector<metrics::ScoredSample> score(const models::Model& model, const Range& samples, Mechanism label_mechanism,
                                         Mechanism head) {
  const auto p = model.predict(samples, head);
  std::vector<metrics::ScoredSample> out;
  std::size_t i = 0;
  for (const auto& s : samples) {
    const data::ClickSample& x = deref(s);
    out.push_back({x.user_id, p[i++], x.label(label_mechanism), x.weight(label_mechanism)});
  }
  return out;
}

/// AUC / GAUC of the model's target head against the target labels, plus
/// the MML of the evaluated samples.
inline metrics::MetricReport evaluate(const models::Model& model, std::span<const data::ClickSample> samples) {
  const Mechanism t = model.spec().target;
  const auto scored = score(model, samples, t, t);
  auto r = metrics::evaluate_scores(scored, t);
  try {
    r.mml = metrics::mml(samples, t);
  } catch (const MetricUndefined&) {
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

struct StepLog {
  std::size_t step = 0;
  std::size_t day = 0;
  double loss_primary = 0.0;
  std::vector<double> loss_aux;  // auxiliary mechanisms in order, then CAT
  std::vector<double> alpha;     // gcs only
  std::size_t conflicts = 0;     // pcgrad only
  std::optional<double> val_gauc;
};

struct TrainResult {
  std::vector<StepLog> log;
  std::vector<std::string> aux_names;  // labels of loss_aux entries
  std::optional<double> val_gauc;
  std::size_t steps = 0;
};

namespace detail {

inline std::vector<Mechanism> resolve_aux(const models::ModelSpec& spec, const TrainConfig& cfg) {
  if (!cfg.aux) return spec.aux;
  for (Mechanism m : *cfg.aux) {
    if (std::find(spec.aux.begin(), spec.aux.end(), m) == spec.aux.end())
      throw ContractError("train: auxiliary mechanism '" + std::string(mechanism_name(m)) +
                          "' has no head in the model");
  }
  return *cfg.aux;
}

inline void require_finite(double v, std::size_t step, std::string_view what) {
  if (!std::isfinite(v))
    throw NumericError("nonfinite loss at step " + std::to_string(step) + " for " + std::string(what));
}

}  // namespace detail

class Trainer {
 public:
  Trainer(models::Model& model, const TrainConfig& cfg)
      : model_(model), cfg_(cfg), pcgrad_rng_(derive_seed(cfg.seed, "pcgrad")) {
    cfg_.validate();
    if (cfg_.target != model_.spec().target)
      throw ContractError("train: config target '" + std::string(mechanism_name(cfg_.target)) +
                          "' differs from the model target '" +
                          std::string(mechanism_name(model_.spec().target)) + "'");
    aux_ = detail::resolve_aux(model_.spec(), cfg_);
    use_cat_ = cfg_.cat && model_.spec().cat_head;
    for (Mechanism m : aux_) aux_names_.emplace_back(mechanism_name(m));
    if (use_cat_) aux_names_.emplace_back("cat");
  }

  const std::vector<std::string>& aux_names() const { return aux_names_; }

  /// One optimizer step on a mini-batch.
  StepLog step(std::span<const data::ClickSample* const> batch, std::size_t day) {
    StepLog log;
    log.step = step_++;
    log.day = day;
    nn::Tape tape;
    const auto out = model_.forward(tape, model_.make_batch(batch));
    const auto losses = compute_losses(out, batch, log);

    nn::GradientSet grads;
    const std::string shared{nn::group::kShared};
    if (cfg_.atl == AtlMode::kNone || losses.size() == 1) {
      std::vector<nn::Var> aux(losses.begin() + 1, losses.end());
      grads = tape.backward(total_loss(losses.front(), aux, cfg_.lambda));
    } else {
      std::vector<nn::GradientSet> per_task;
      for (nn::Var l : losses) per_task.push_back(tape.backward(l));
      const auto& store = model_.params();
      const auto gp = per_task.front().flatten(store, shared);
      if (cfg_.atl == AtlMode::kGcs) {
        std::vector<std::vector<double>> gk;
        for (std::size_t k = 1; k < per_task.size(); ++k) gk.push_back(per_task[k].flatten(store, shared));
        log.alpha = gcs_weights(gp, gk);
        grads = per_task.front();
        for (std::size_t k = 1; k < per_task.size(); ++k) grads.add(per_task[k], log.alpha[k - 1]);
      } else {
        std::vector<std::vector<double>> g{gp};
        grads = per_task.front();
        for (std::size_t k = 1; k < per_task.size(); ++k) {
          auto flat = per_task[k].flatten(store, shared);
          for (double& v : flat) v *= cfg_.lambda;
          g.push_back(std::move(flat));
          grads.add(per_task[k], cfg_.lambda);
        }
        const auto surgery = pcgrad_surgery(g, pcgrad_rng_, cfg_.pcgrad_mean);
        log.conflicts = surgery.conflicts();
        grads.unflatten(store, shared, surgery.merged);
      }
    }
    nn::adam_step(model_.params(), grads, nn::AdamConfig{cfg_.lr});
    return log;
  }

 private:
  std::vector<nn::Var> compute_losses(const models::ModelOutput& out, std::span<const data::ClickSample* const> batch,
                                      StepLog& log) const {
    std::vector<nn::Var> losses;
    auto bce = [&](Mechanism m) {
      const auto y = binary_labels(batch, m);
      const auto w = sample_weights(batch, m, cfg_.weighting);
      try {
        return bce_loss(out.prob(m), y, w);
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(log.step) + ", mechanism " + std::string(mechanism_name(m)) +
                           ": " + e.what());
      }
    };
    losses.push_back(bce(cfg_.target));
    log.loss_primary = losses.back().value().item();
    detail::require_finite(log.loss_primary, log.step, mechanism_name(cfg_.target));
    for (Mechanism m : aux_) {
      losses.push_back(bce(m));
      log.loss_aux.push_back(losses.back().value().item());
      detail::require_finite(log.loss_aux.back(), log.step, mechanism_name(m));
    }
    if (use_cat_) {
      const auto mechs = model_.spec().mechanisms();
      std::vector<std::size_t> classes;
      for (const auto* s : batch) classes.push_back(models::cat_class(*s, mechs));
      losses.push_back(nn::softmax_cross_entropy(*out.cat_logits, classes));
      log.loss_aux.push_back(losses.back().value().item());
      detail::require_finite(log.loss_aux.back(), log.step, "cat");
    }
    return losses;
  }

  models::Model& model_;
  TrainConfig cfg_;
  std::vector<Mechanism> aux_;
  std::vector<std::string> aux_names_;
  bool use_cat_ = false;
  std::size_t step_ = 0;
  std::mt19937_64 pcgrad_rng_;
};

using StepCallback = std::function<void(const StepLog&)>;

/// One chronological pass. Days before the probe day are trained first, the
/// model is scored on the probe day (validation GAUC), then training
/// continues on the probe day; the last day is never trained on.
inline TrainResult train(models::Model& model, const data::Dataset& d, const TrainConfig& cfg,
                         const StepCallback& on_step = {}) {
  const auto split = data::split_days(d);
  Trainer trainer(model, cfg);
  TrainResult result;
  result.aux_names = trainer.aux_names();

  auto run_day = [&](std::size_t day) {
    const auto rows = d.day(day);
    std::vector<const data::ClickSample*> order;
    for (const auto& s : rows) order.push_back(&s);
    std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle:" + std::to_string(day)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      auto log = trainer.step(std::span<const data::ClickSample* const>(order.data() + begin, end - begin), day);
      result.log.push_back(std::move(log));
      if (on_step) on_step(result.log.back());
    }
  };

  for (std::size_t day = 0; day < split.probe_train_end; ++day) run_day(day);
  try {
    result.val_gauc = evaluate(model, d.day(split.probe_day)).gauc;
  } catch (const MetricUndefined&) {
    result.val_gauc.reset();
  }
  if (!result.log.empty()) result.log.back().val_gauc = result.val_gauc;
  if (!cfg.stop_after_validation)
    for (std::size_t day = split.probe_train_end; day < split.train_end; ++day) run_day(day);
  result.steps = result.log.size();
  return result;
}

// ---------------------------------------------------------------------------
// Greedy auxiliary-objective search

inline constexpr std::string_view kCatCandidate = "cat";

struct SearchRound {
  std::vector<std::string> selected_before;
  std::vector<std::pair<std::string, double>> candidates;  // name, validation GAUC
  std::optional<std::string> added;
  double best_gauc = 0.0;
};

struct SearchResult {
  std::vector<std::string> selected;
  std::vector<double> trace;  // validation GAUC of the primary-only model, then after each addition
  std::vector<SearchRound> rounds;
};

struct SearchConfig {
  std::vector<std::string> candidates;  // mechanism names and/or "cat"
  double min_gain = 0.0;                // improvement must exceed this
  std::size_t threads = 1;
};

namespace detail {

// Runs job(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Forward selection of auxiliary objectives. The model is built once with a
/// head for every candidate; a candidate set is realized by which auxiliary
/// losses are trained, so every trial shares architecture, initialization and
/// data order. Each round trains one model per remaining candidate on the
/// validation protocol and keeps the best one if it improves the current
/// validation GAUC by more than `min_gain`.
inline SearchResult greedy_aux_search(const models::ModelSpec& base_spec, const data::Dataset& d,
                                      const TrainConfig& cfg, const SearchConfig& search) {
  models::ModelSpec spec = base_spec;
  spec.aux.clear();
  spec.cat_head = false;
  for (const auto& c : search.candidates) {
    if (c == kCatCandidate) {
      spec.cat_head = true;
      continue;
    }
    const Mechanism m = parse_mechanism(c);
    if (m == spec.target) throw ConfigError("search candidate '" + c + "' is the target mechanism");
    if (std::find(spec.aux.begin(), spec.aux.end(), m) != spec.aux.end())
      throw ConfigError("duplicate search candidate '" + c + "'");
    spec.aux.push_back(m);
  }
  if (search.candidates.empty()) throw ConfigError("search needs at least one candidate");
  if (spec.aux.empty()) throw ConfigError("search needs at least one mechanism candidate");
  const auto schema = d.infer_schema();

  auto trial = [&](const std::vector<std::string>& selected) {
    TrainConfig c = cfg;
    c.stop_after_validation = true;
    c.aux = std::vector<Mechanism>{};
    c.cat = false;
    for (const auto& s : selected) {
      if (s == kCatCandidate) {
        c.cat = true;
      } else {
        c.aux->push_back(parse_mechanism(s));
      }
    }
    models::Model model(spec, schema, cfg.seed);
    const auto r = train(model, d, c);
    if (!r.val_gauc) throw MetricUndefined("search: validation GAUC undefined on the probe day");
    return *r.val_gauc;
  };

  SearchResult result;
  result.trace.push_back(trial({}));
  std::vector<std::string> remaining = search.candidates;
  while (!remaining.empty()) {
    SearchRound round;
    round.selected_before = result.selected;
    const bool has_mechanism = std::any_of(result.selected.begin(), result.selected.end(),
                                           [](const std::string& s) { return s != kCatCandidate; });
    std::vector<std::string> eligible;
    for (const auto& c : remaining)
      if (c != kCatCandidate || has_mechanism) eligible.push_back(c);
    if (eligible.empty()) break;
    std::vector<double> scores(eligible.size());
    detail::parallel_for(eligible.size(), search.threads, [&](std::size_t i) {
      auto sel = result.selected;
      sel.push_back(eligible[i]);
      scores[i] = trial(sel);
    });
    std::size_t best = 0;
    for (std::size_t i = 0; i < eligible.size(); ++i) {
      round.candidates.emplace_back(eligible[i], scores[i]);
      if (scores[i] > scores[best]) best = i;
    }
    round.best_gauc = scores[best];
    const double current = result.trace.back();
    if (scores[best] > current + search.min_gain) {
      round.added = eligible[best];
      result.selected.push_back(eligible[best]);
      result.trace.push_back(scores[best]);
      remaining.erase(std::find(remaining.begin(), remaining.end(), eligible[best]));
      result.rounds.push_back(std::move(round));
    } else {
      result.rounds.push_back(std::move(round));
      break;
    }
  }
  return result;
}

}  // namespace malkit::training
