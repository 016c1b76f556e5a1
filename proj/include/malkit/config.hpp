#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "malkit/attribution.hpp"
#include "malkit/datagen.hpp"
#include "malkit/errors.hpp"
#include "malkit/models.hpp"
#include "malkit/training.hpp"

namespace malkit::config {

using Json = nlohmann::ordered_json;

/// Typed access to one JSON object with error messages that carry the full
/// path of the offending field. `finish()` rejects keys nobody asked for.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const std::string& path() const { return path_; }
  bool has(const std::string& key) const { return j_.contains(key); }

  double number(const std::string& key, double def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_number()) fail(key, "expected a number");
    return v->get<double>();
  }

  std::uint64_t unsigned_int(const std::string& key, std::uint64_t def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
      fail(key, "expected a nonnegative integer");
    return v->get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_boolean()) fail(key, "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_string()) fail(key, "expected a string");
    return v->get<std::string>();
  }

  std::vector<std::size_t> sizes(const std::string& key, std::vector<std::size_t> def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_array()) fail(key, "expected an array of nonnegative integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const Json& e = (*v)[i];
      if (!e.is_number_unsigned()) fail(key + "[" + std::to_string(i) + "]", "expected a nonnegative integer");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_array()) fail(key, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number()) fail(key + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back((*v)[i].get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key, std::vector<std::string> def) {
    const Json* v = take(key);
    if (!v) return def;
    if (!v->is_array()) fail(key, "expected an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_string()) fail(key + "[" + std::to_string(i) + "]", "expected a string");
      out.push_back((*v)[i].get<std::string>());
    }
    return out;
  }

  std::optional<Reader> child(const std::string& key) {
    const Json* v = take(key);
    if (!v) return std::nullopt;
    return Reader(*v, path_ + "." + key);
  }

  /// Runs `parse` on the value and rethrows its ConfigError with the path.
  template <class F>
  auto convert(const std::string& key, F parse) {
    try {
      return parse();
    } catch (const ConfigError& e) {
      fail(key, e.what());
    } catch (const SpecError& e) {
      fail(key, e.what());
    }
    throw ConfigError("unreachable");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError(path_ + "." + key + ": " + why);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(path_ + "." + key + ": unknown key");
    }
  }

 private:
  const Json* take(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    return &*it;
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// ---------------------------------------------------------------------------
// Generator config

template <std::size_t N>
std::array<std::size_t, N> to_array(Reader& r, const std::string& key, const std::array<std::size_t, N>& def) {
  const auto v = r.sizes(key, std::vector<std::size_t>(def.begin(), def.end()));
  if (v.size() != N) r.fail(key, "expected " + std::to_string(N) + " entries");
  std::array<std::size_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (v[i] < 1) r.fail(key + "[" + std::to_string(i) + "]", "must be >= 1");
    out[i] = v[i];
  }
  return out;
}

inline data::GenConfig parse_gen(Reader r) {
  data::GenConfig c;
  auto count = [&](const std::string& key, std::size_t def) {
    const auto v = r.unsigned_int(key, def);
    if (v < 1) r.fail(key, "must be >= 1");
    return static_cast<std::size_t>(v);
  };
  auto open_rate = [&](const std::string& key, double def) {
    const double v = r.number(key, def);
    if (!(v > 0.0 && v < 1.0)) r.fail(key, "must be in (0, 1)");
    return v;
  };
  auto positive = [&](const std::string& key, double def, double lo) {
    const double v = r.number(key, def);
    if (!(v >= lo)) r.fail(key, "must be >= " + std::to_string(lo));
    return v;
  };
  c.users = count("users", c.users);
  c.items = count("items", c.items);
  c.shops = count("shops", c.shops);
  c.categories = count("categories", c.categories);
  c.days = count("days", c.days);
  c.clicks_per_user_day = r.number("clicks_per_user_day", c.clicks_per_user_day);
  if (!(c.clicks_per_user_day > 0.0)) r.fail("clicks_per_user_day", "must be > 0");
  c.conversion_rate = open_rate("conversion_rate", c.conversion_rate);
  c.path_length_mean = positive("path_length_mean", c.path_length_mean, 1.0);
  c.path_length_max = count("path_length_max", c.path_length_max);
  c.click_gap_hours = r.number("click_gap_hours", c.click_gap_hours);
  if (!(c.click_gap_hours > 0.0)) r.fail("click_gap_hours", "must be > 0");
  c.window_days = r.number("window_days", c.window_days);
  if (!(c.window_days > 0.0)) r.fail("window_days", "must be > 0");
  c.dda_decay_per_day = positive("dda_decay_per_day", c.dda_decay_per_day, 0.0);
  c.heavy_user_share = open_rate("heavy_user_share", c.heavy_user_share);
  c.heavy_activity_ratio = positive("heavy_activity_ratio", c.heavy_activity_ratio, 1.0);
  c.multi_conversion_prob = r.number("multi_conversion_prob", c.multi_conversion_prob);
  if (!(c.multi_conversion_prob >= 0.0 && c.multi_conversion_prob < 1.0))
    r.fail("multi_conversion_prob", "must be in [0, 1)");
  c.bounce_prob = open_rate("bounce_prob", c.bounce_prob);
  c.similarity_concentration = r.number("similarity_concentration", c.similarity_concentration);
  if (!(c.similarity_concentration > 0.0)) r.fail("similarity_concentration", "must be > 0");
  c.sequence_cap = count("sequence_cap", c.sequence_cap);
  c.user_profile_vocab = to_array(r, "user_profile_vocab", c.user_profile_vocab);
  c.item_profile_vocab = to_array(r, "item_profile_vocab", c.item_profile_vocab);
  c.context_vocab = to_array(r, "context_vocab", c.context_vocab);
  c.seed = r.unsigned_int("seed", c.seed);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.path() + ": " + e.what());
  }
  return c;
}

inline Json to_json(const data::GenConfig& c) {
  Json j;
  j["users"] = c.users;
  j["items"] = c.items;
  j["shops"] = c.shops;
  j["categories"] = c.categories;
  j["days"] = c.days;
  j["clicks_per_user_day"] = c.clicks_per_user_day;
  j["conversion_rate"] = c.conversion_rate;
  j["path_length_mean"] = c.path_length_mean;
  j["path_length_max"] = c.path_length_max;
  j["click_gap_hours"] = c.click_gap_hours;
  j["window_days"] = c.window_days;
  j["dda_decay_per_day"] = c.dda_decay_per_day;
  j["heavy_user_share"] = c.heavy_user_share;
  j["heavy_activity_ratio"] = c.heavy_activity_ratio;
  j["multi_conversion_prob"] = c.multi_conversion_prob;
  j["bounce_prob"] = c.bounce_prob;
  j["similarity_concentration"] = c.similarity_concentration;
  j["sequence_cap"] = c.sequence_cap;
  j["user_profile_vocab"] = c.user_profile_vocab;
  j["item_profile_vocab"] = c.item_profile_vocab;
  j["context_vocab"] = c.context_vocab;
  j["seed"] = c.seed;
  return j;
}

// ---------------------------------------------------------------------------
// Model spec

inline std::vector<Mechanism> parse_mechanisms(Reader& r, const std::string& key, const std::vector<Mechanism>& def) {
  std::vector<std::string> names;
  for (Mechanism m : def) names.emplace_back(mechanism_name(m));
  std::vector<Mechanism> out;
  const auto v = r.strings(key, names);
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(r.convert(key + "[" + std::to_string(i) + "]", [&] { return parse_mechanism(v[i]); }));
  return out;
}

/// Starts from the family defaults for the target and applies overrides.
inline models::ModelSpec parse_model(Reader r, std::optional<models::Family> family_override = std::nullopt,
                                     std::optional<Mechanism> target_override = std::nullopt) {
  const std::string fam = r.string("family", "base");
  const models::Family family =
      family_override ? *family_override : r.convert("family", [&] { return models::parse_family(fam); });
  const std::string tgt = r.string("target", "last");
  const Mechanism target = target_override ? *target_override : r.convert("target", [&] { return parse_mechanism(tgt); });
  models::ModelSpec s = models::ModelSpec::defaults_for(family, target);
  auto count = [&](const std::string& key, std::size_t def) { return static_cast<std::size_t>(r.unsigned_int(key, def)); };
  s.embedding_dim = count("embedding_dim", s.embedding_dim);
  s.shared_experts = count("shared_experts", s.shared_experts);
  s.private_experts = count("private_experts", s.private_experts);
  s.expert_widths = r.sizes("expert_widths", s.expert_widths);
  s.tower_widths = r.sizes("tower_widths", s.tower_widths);
  s.attention_hidden = count("attention_hidden", s.attention_hidden);
  s.simtier_tiers = count("simtier_tiers", s.simtier_tiers);
  s.transfer = r.boolean("transfer", s.transfer);
  s.stop_gradient = r.boolean("stop_gradient", s.stop_gradient);
  s.aka_width = count("aka_width", s.aka_width);
  s.cat_head = r.boolean("cat_head", s.cat_head);
  // In sweeps the family varies per cell, so an explicit auxiliary list only
  // applies to families that accept one.
  if (r.has("aux") && !(family_override && family == models::Family::kBase)) {
    s.aux = parse_mechanisms(r, "aux", s.aux);
    s.aux.erase(std::remove(s.aux.begin(), s.aux.end(), target), s.aux.end());
  } else {
    r.strings("aux", {});
  }
  if (family_override && family == models::Family::kBase) {
    s.transfer = false;
    s.cat_head = false;
  }
  r.finish();
  r.convert("family", [&] {
    s.validate();
    return 0;
  });
  return s;
}

inline Json to_json(const models::ModelSpec& s) {
  Json j;
  j["family"] = models::family_name(s.family);
  j["target"] = mechanism_name(s.target);
  j["embedding_dim"] = s.embedding_dim;
  j["shared_experts"] = s.shared_experts;
  j["private_experts"] = s.private_experts;
  j["expert_widths"] = s.expert_widths;
  j["tower_widths"] = s.tower_widths;
  j["attention_hidden"] = s.attention_hidden;
  j["simtier_tiers"] = s.simtier_tiers;
  j["transfer"] = s.transfer;
  j["stop_gradient"] = s.stop_gradient;
  j["aka_width"] = s.aka_width;
  j["cat_head"] = s.cat_head;
  auto& aux = j["aux"] = Json::array();
  for (Mechanism m : s.aux) aux.push_back(mechanism_name(m));
  return j;
}

// ---------------------------------------------------------------------------
// Train config

inline training::TrainConfig parse_train(Reader r, Mechanism model_target) {
  training::TrainConfig c;
  c.lr = r.number("lr", c.lr);
  if (!(c.lr > 0.0)) r.fail("lr", "must be > 0");
  c.lambda = r.number("lambda", c.lambda);
  if (!(c.lambda >= 0.0)) r.fail("lambda", "must be >= 0");
  c.batch_size = static_cast<std::size_t>(r.unsigned_int("batch_size", c.batch_size));
  if (c.batch_size < 1) r.fail("batch_size", "must be >= 1");
  c.seed = r.unsigned_int("seed", c.seed);
  const std::string atl = r.string("atl_mode", "none");
  c.atl = r.convert("atl_mode", [&] { return training::parse_atl(atl); });
  const std::string w = r.string("weighting", "binary");
  c.weighting = r.convert("weighting", [&] { return training::parse_weighting(w); });
  const std::string tgt = r.string("target", std::string(mechanism_name(model_target)));
  c.target = r.convert("target", [&] { return parse_mechanism(tgt); });
  if (c.target != model_target) r.fail("target", "differs from $.model.target");
  if (r.has("aux")) c.aux = parse_mechanisms(r, "aux", {});
  c.cat = r.boolean("cat", c.cat);
  c.pcgrad_mean = r.boolean("pcgrad_mean", c.pcgrad_mean);
  r.finish();
  return c;
}

inline Json to_json(const training::TrainConfig& c) {
  Json j;
  j["lr"] = c.lr;
  j["lambda"] = c.lambda;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["atl_mode"] = training::atl_name(c.atl);
  j["weighting"] = training::weighting_name(c.weighting);
  j["target"] = mechanism_name(c.target);
  if (c.aux) {
    auto& aux = j["aux"] = Json::array();
    for (Mechanism m : *c.aux) aux.push_back(mechanism_name(m));
  }
  j["cat"] = c.cat;
  j["pcgrad_mean"] = c.pcgrad_mean;
  return j;
}

// ---------------------------------------------------------------------------
// Experiment config

struct SweepAxes {
  std::vector<models::Family> families;
  std::vector<Mechanism> targets;
  std::vector<double> lambdas;
  std::vector<double> lrs;
  std::vector<training::AtlMode> atl_modes;
};

struct NoiseSpec {
  Mechanism column = Mechanism::kDda;
  double rate = 0.1;
  std::uint64_t seed = 1;
};

struct SearchSpec {
  std::vector<std::string> candidates;
  double min_gain = 0.0;
  std::optional<NoiseSpec> noise;
};

struct ExperimentConfig {
  std::optional<data::GenConfig> generate;
  std::optional<std::string> dataset_path;
  models::ModelSpec model;
  training::TrainConfig train;
  std::string out = "runs";
  std::optional<SweepAxes> sweep;
  std::optional<SearchSpec> search;
  Json model_json = Json::object();  // raw overrides, reapplied per sweep cell
  Json train_json = Json::object();
};

inline SweepAxes parse_sweep(Reader r, const ExperimentConfig& base) {
  SweepAxes a;
  std::vector<std::string> fam_names;
  for (auto f : models::kAllFamilies) fam_names.emplace_back(models::family_name(f));
  const auto fams = r.strings("families", fam_names);
  for (std::size_t i = 0; i < fams.size(); ++i)
    a.families.push_back(r.convert("families[" + std::to_string(i) + "]", [&] { return models::parse_family(fams[i]); }));
  a.targets = parse_mechanisms(r, "targets", {kAllMechanisms.begin(), kAllMechanisms.end()});
  a.lambdas = r.numbers("lambdas", {base.train.lambda});
  for (double l : a.lambdas)
    if (!(l >= 0.0)) r.fail("lambdas", "values must be >= 0");
  a.lrs = r.numbers("lrs", {base.train.lr});
  for (double l : a.lrs)
    if (!(l > 0.0)) r.fail("lrs", "values must be > 0");
  const auto atl = r.strings("atl_modes", {std::string(training::atl_name(base.train.atl))});
  for (std::size_t i = 0; i < atl.size(); ++i)
    a.atl_modes.push_back(r.convert("atl_modes[" + std::to_string(i) + "]", [&] { return training::parse_atl(atl[i]); }));
  if (a.families.empty()) r.fail("families", "must be nonempty");
  if (a.targets.empty()) r.fail("targets", "must be nonempty");
  if (a.lambdas.empty()) r.fail("lambdas", "must be nonempty");
  if (a.lrs.empty()) r.fail("lrs", "must be nonempty");
  if (a.atl_modes.empty()) r.fail("atl_modes", "must be nonempty");
  r.finish();
  return a;
}

inline SearchSpec parse_search(Reader r) {
  SearchSpec s;
  s.candidates = r.strings("candidates", {"last", "first", "linear", "dda", "cat"});
  for (std::size_t i = 0; i < s.candidates.size(); ++i) {
    if (s.candidates[i] != "cat") r.convert("candidates[" + std::to_string(i) + "]", [&] { return parse_mechanism(s.candidates[i]); });
  }
  if (s.candidates.empty()) r.fail("candidates", "must be nonempty");
  s.min_gain = r.number("min_gain", s.min_gain);
  if (!(s.min_gain >= 0.0)) r.fail("min_gain", "must be >= 0");
  if (auto n = r.child("noise")) {
    NoiseSpec ns;
    const std::string col = n->string("column", "dda");
    ns.column = n->convert("column", [&] { return parse_mechanism(col); });
    ns.rate = n->number("rate", ns.rate);
    if (!(ns.rate > 0.0 && ns.rate < 1.0)) n->fail("rate", "must be in (0, 1)");
    ns.seed = n->unsigned_int("seed", ns.seed);
    n->finish();
    s.noise = ns;
  }
  r.finish();
  return s;
}

inline ExperimentConfig parse_experiment(const Json& j) {
  Reader root(j, "$");
  ExperimentConfig c;
  if (auto ds = root.child("dataset")) {
    if (auto g = ds->child("generate")) c.generate = parse_gen(*g);
    const std::string path = ds->string("path", "");
    if (!path.empty()) c.dataset_path = path;
    if (c.generate && c.dataset_path) ds->fail("path", "give either generate or path, not both");
    ds->finish();
  }
  if (!c.generate && !c.dataset_path) c.generate = data::GenConfig{};
  if (j.contains("model")) {
    if (!j["model"].is_object()) throw ConfigError("$.model: expected an object");
    c.model_json = j["model"];
  }
  c.model = parse_model(Reader(c.model_json, "$.model"));
  root.child("model");
  if (j.contains("train")) {
    if (!j["train"].is_object()) throw ConfigError("$.train: expected an object");
    c.train_json = j["train"];
  }
  c.train = parse_train(Reader(c.train_json, "$.train"), c.model.target);
  root.child("train");
  c.out = root.string("out", c.out);
  if (auto s = root.child("sweep")) c.sweep = parse_sweep(*s, c);
  if (auto s = root.child("search")) c.search = parse_search(*s);
  root.finish();
  return c;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

inline ExperimentConfig load_experiment(const std::string& path) { return parse_experiment(read_json_file(path)); }

/// Fully resolved snapshot of one run; feeding it back reproduces the run.
inline Json snapshot(const ExperimentConfig& c) {
  Json j;
  if (c.generate) {
    j["dataset"]["generate"] = to_json(*c.generate);
  } else {
    j["dataset"]["path"] = *c.dataset_path;
  }
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  return j;
}

}  // namespace malkit::config
