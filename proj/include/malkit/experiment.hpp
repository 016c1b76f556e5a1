#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "malkit/checkpoint.hpp"
#include "malkit/config.hpp"
#include "malkit/datagen.hpp"
#include "malkit/dataset.hpp"
#include "malkit/hashing.hpp"
#include "malkit/metrics.hpp"
#include "malkit/models.hpp"
#include "malkit/training.hpp"

namespace malkit::experiment {

namespace fs = std::filesystem;
using config::Json;

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Worker count: MALKIT_THREADS if set, else the hardware concurrency.
inline std::size_t thread_budget() {
  if (const char* env = std::getenv("MALKIT_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (...) {
    }
    throw ConfigError("MALKIT_THREADS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Dataset resolution

struct LoadedData {
  data::Dataset dataset;
  data::FeatureSchema schema;
  std::string fingerprint;
};

inline std::string fingerprint(const data::Dataset& d) { return hex16(fnv1a64(data::serialize_dataset(d))); }

inline LoadedData load_data(const config::ExperimentConfig& c) {
  LoadedData out;
  if (c.generate) {
    out.dataset = data::generate(*c.generate);
    out.schema = c.generate->schema();
  } else {
    if (!fs::exists(*c.dataset_path)) throw ConfigError("$.dataset.path: file '" + *c.dataset_path + "' does not exist");
    out.dataset = data::read_dataset(*c.dataset_path);
    out.schema = out.dataset.infer_schema();
  }
  out.fingerprint = fingerprint(out.dataset);
  return out;
}

// ---------------------------------------------------------------------------
// Single runs

struct RunOutcome {
  fs::path dir;
  Json report;  // contents of report.json
  bool reused = false;
};

inline Json step_json(const training::StepLog& s) {
  Json j;
  j["step"] = s.step;
  j["day"] = s.day;
  j["loss_primary"] = s.loss_primary;
  j["loss_aux"] = s.loss_aux;
  j["alpha"] = s.alpha;
  j["conflicts"] = s.conflicts;
  j["val_gauc"] = s.val_gauc ? Json(*s.val_gauc) : Json(nullptr);
  return j;
}

/// Trains and evaluates one configuration into <out>/run-<hash>/. The hash
/// covers the resolved config and the dataset content, so an existing run
/// directory is returned as is and never rewritten.
inline RunOutcome run_one(const config::ExperimentConfig& c, const LoadedData& data, const fs::path& out_root,
                          std::ostream* progress = nullptr) {
  const Json snap = config::snapshot(c);
  const std::string key = hex16(fnv1a64(snap.dump() + "|" + data.fingerprint));
  RunOutcome outcome;
  outcome.dir = out_root / ("run-" + key);
  if (fs::exists(outcome.dir / "report.json")) {
    outcome.report = Json::parse(read_text(outcome.dir / "report.json"));
    outcome.reused = true;
    return outcome;
  }
  fs::create_directories(out_root);
  const fs::path tmp = out_root / (".tmp-run-" + key + "-" + hex16(std::hash<std::thread::id>{}(std::this_thread::get_id())));
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  try {
    const auto split = data::split_days(data.dataset);
    models::Model model(c.model, data.schema, c.train.seed);
    std::ostringstream log;
    const auto result = training::train(model, data.dataset, c.train, [&](const training::StepLog& s) {
      log << step_json(s).dump() << "\n";
    });
    auto report = training::evaluate(model, data.dataset.day(split.test_day));
    const auto summary = data::summarize(data.dataset);

    Json r;
    r["family"] = models::family_name(c.model.family);
    r["target"] = mechanism_name(c.model.target);
    r["lambda"] = c.train.lambda;
    r["lr"] = c.train.lr;
    r["atl_mode"] = training::atl_name(c.train.atl);
    r["aux"] = result.aux_names;
    r["dataset"] = data.fingerprint;
    r["steps"] = result.steps;
    r["val_gauc"] = result.val_gauc ? Json(*result.val_gauc) : Json(nullptr);
    r["test"] = metrics::to_json(report);
    auto& cx = r["complexity"] = Json::array();
    for (const auto& [user, ratio] : summary.complexity_ratio) cx.push_back({user, ratio});

    write_text(tmp / "config.json", snap.dump(2) + "\n");
    nn::write_checkpoint(model.params(), (tmp / "checkpoint.bin").string());
    write_text(tmp / "report.json", r.dump(2) + "\n");
    write_text(tmp / "log.jsonl", log.str());
    Json artifact;
    artifact["config"] = "config.json";
    artifact["config_hash"] = hex16(fnv1a64(snap.dump()));
    artifact["dataset_fingerprint"] = data.fingerprint;
    artifact["seed"] = c.train.seed;
    artifact["checkpoint"] = "checkpoint.bin";
    artifact["report"] = "report.json";
    artifact["log"] = "log.jsonl";
    write_text(tmp / "artifact.json", artifact.dump(2) + "\n");
    std::error_code ec;
    fs::rename(tmp, outcome.dir, ec);
    if (ec) {
      // Another worker finished the same run first; keep its copy.
      fs::remove_all(tmp);
      if (!fs::exists(outcome.dir / "report.json")) throw std::runtime_error("cannot create " + outcome.dir.string());
    }
    outcome.report = std::move(r);
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }
  if (progress) {
    *progress << outcome.dir.filename().string() << " " << models::family_name(c.model.family) << "/"
              << mechanism_name(c.model.target) << " test gauc " << fixed(outcome.report["test"]["gauc"].get<double>())
              << "\n";
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
  models::Family family;
  Mechanism target;
  double lambda;
  double lr;
  training::AtlMode atl;

  std::string key() const {
    std::ostringstream os;
    os << models::family_name(family) << "/" << mechanism_name(target) << "/lambda=" << lambda << "/lr=" << lr
       << "/atl=" << training::atl_name(atl);
    return os.str();
  }
};

struct SweepRow {
  SweepCell cell;
  fs::path run;
  double val_gauc = 0.0;
  double test_auc = 0.0;
  double test_gauc = 0.0;
};

struct SweepResult {
  fs::path dir;
  std::vector<SweepRow> rows;
  std::string table;
};

inline config::ExperimentConfig cell_config(const config::ExperimentConfig& base, const SweepCell& cell) {
  config::ExperimentConfig c = base;
  c.model = config::parse_model(config::Reader(base.model_json, "$.model"), cell.family, cell.target);
  Json tj = base.train_json;
  tj.erase("target");
  c.train = config::parse_train(config::Reader(tj, "$.train"), cell.target);
  c.train.lambda = cell.lambda;
  c.train.lr = cell.lr;
  c.train.atl = cell.atl;
  const std::uint64_t seed = derive_seed(base.train.seed, cell.key());
  c.train.seed = seed;
  c.sweep.reset();
  c.search.reset();
  return c;
}

inline std::vector<SweepCell> sweep_cells(const config::SweepAxes& a) {
  std::vector<SweepCell> cells;
  for (auto f : a.families)
    for (auto t : a.targets)
      for (double l : a.lambdas)
        for (double lr : a.lrs)
          for (auto atl : a.atl_modes) cells.push_back({f, t, l, lr, atl});
  return cells;
}

/// Best cell per (family, target) by validation GAUC, ties to the earlier cell.
inline std::map<std::pair<models::Family, Mechanism>, const SweepRow*> best_cells(const std::vector<SweepRow>& rows) {
  std::map<std::pair<models::Family, Mechanism>, const SweepRow*> best;
  for (const auto& r : rows) {
    auto& b = best[{r.cell.family, r.cell.target}];
    if (!b || r.val_gauc > b->val_gauc) b = &r;
  }
  return best;
}

inline std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

/// Aligned text table: one row per family with AUC / GAUC per target, then a
/// difference-to-BASE row per family.
inline std::string sweep_table(const std::vector<SweepRow>& rows, const std::vector<models::Family>& families,
                               const std::vector<Mechanism>& targets) {
  const auto best = best_cells(rows);
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> head{"model"};
  for (Mechanism t : targets) {
    head.push_back(std::string(mechanism_name(t)) + " AUC");
    head.push_back(std::string(mechanism_name(t)) + " GAUC");
  }
  grid.push_back(head);
  auto value = [&](models::Family f, Mechanism t) -> const SweepRow* {
    auto it = best.find({f, t});
    return it == best.end() ? nullptr : it->second;
  };
  for (auto f : families) {
    std::vector<std::string> line{std::string(models::family_name(f))};
    for (Mechanism t : targets) {
      const auto* r = value(f, t);
      line.push_back(r ? fixed(r->test_auc, 4) : "-");
      line.push_back(r ? fixed(r->test_gauc, 4) : "-");
    }
    grid.push_back(line);
  }
  const bool have_base = std::find(families.begin(), families.end(), models::Family::kBase) != families.end();
  if (have_base) {
    for (auto f : families) {
      std::vector<std::string> line{"delta " + std::string(models::family_name(f)) + " vs base"};
      for (Mechanism t : targets) {
        const auto* r = value(f, t);
        const auto* b = value(models::Family::kBase, t);
        line.push_back(r && b ? fixed(r->test_auc - b->test_auc, 4) : "-");
        line.push_back(r && b ? fixed(r->test_gauc - b->test_gauc, 4) : "-");
      }
      grid.push_back(line);
    }
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : grid)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream os;
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) os << (i ? "  " : "") << pad(line[i], width[i]);
    os << "\n";
  }
  return os.str();
}

inline SweepResult run_sweep(const config::ExperimentConfig& c, const LoadedData& data, const fs::path& out_root,
                             std::size_t threads, std::ostream* progress = nullptr) {
  if (!c.sweep) throw ConfigError("$.sweep: missing (required by the sweep command)");
  const auto cells = sweep_cells(*c.sweep);
  std::vector<config::ExperimentConfig> configs;
  for (const auto& cell : cells) configs.push_back(cell_config(c, cell));
  std::vector<SweepRow> rows(cells.size());
  std::mutex mu;
  training::detail::parallel_for(cells.size(), threads, [&](std::size_t i) {
    auto o = run_one(configs[i], data, out_root);
    SweepRow r;
    r.cell = cells[i];
    r.run = o.dir.filename();
    r.val_gauc = o.report["val_gauc"].is_null() ? 0.0 : o.report["val_gauc"].get<double>();
    r.test_auc = o.report["test"]["auc"].get<double>();
    r.test_gauc = o.report["test"]["gauc"].get<double>();
    rows[i] = r;
    if (progress) {
      std::lock_guard lock(mu);
      *progress << cells[i].key() << " -> " << r.run.string() << " test gauc " << fixed(r.test_gauc) << "\n";
    }
  });

  std::ostringstream csv;
  csv << "family,target,lambda,lr,atl_mode,run,val_gauc,test_auc,test_gauc\n";
  for (const auto& r : rows) {
    csv << models::family_name(r.cell.family) << "," << mechanism_name(r.cell.target) << "," << r.cell.lambda << ","
        << r.cell.lr << "," << training::atl_name(r.cell.atl) << "," << r.run.string() << "," << fixed(r.val_gauc, 8)
        << "," << fixed(r.test_auc, 8) << "," << fixed(r.test_gauc, 8) << "\n";
  }
  SweepResult result;
  result.rows = rows;
  result.table = sweep_table(rows, c.sweep->families, c.sweep->targets);
  Json key;
  for (const auto& r : rows) key.push_back(r.run.string());
  result.dir = out_root / ("sweep-" + hex16(fnv1a64(key.dump())));
  if (!fs::exists(result.dir / "sweep.csv")) {
    fs::create_directories(result.dir);
    write_text(result.dir / "sweep.csv", csv.str());
    write_text(result.dir / "table.txt", result.table);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Greedy search

struct SearchOutcome {
  fs::path dir;
  training::SearchResult result;
};

inline Json to_json(const training::SearchResult& r) {
  Json j;
  j["selected"] = r.selected;
  j["trace"] = r.trace;
  auto& rounds = j["rounds"] = Json::array();
  for (const auto& round : r.rounds) {
    Json rj;
    rj["selected_before"] = round.selected_before;
    auto& cands = rj["candidates"] = Json::array();
    for (const auto& [name, g] : round.candidates) cands.push_back({{"candidate", name}, {"val_gauc", g}});
    rj["added"] = round.added ? Json(*round.added) : Json(nullptr);
    rj["best_gauc"] = round.best_gauc;
    rounds.push_back(rj);
  }
  return j;
}

inline SearchOutcome run_search(const config::ExperimentConfig& c, const LoadedData& loaded, const fs::path& out_root,
                                std::size_t threads) {
  if (!c.search) throw ConfigError("$.search: missing (required by the search command)");
  const data::Dataset* d = &loaded.dataset;
  std::optional<data::Dataset> noisy;
  if (c.search->noise) {
    noisy = data::with_noise_label(loaded.dataset, c.search->noise->column, c.search->noise->rate, c.search->noise->seed);
    d = &*noisy;
  }
  training::SearchConfig sc;
  sc.candidates = c.search->candidates;
  sc.candidates.erase(std::remove(sc.candidates.begin(), sc.candidates.end(), std::string(mechanism_name(c.model.target))),
                      sc.candidates.end());
  sc.min_gain = c.search->min_gain;
  sc.threads = threads;
  models::ModelSpec spec = c.model;
  if (spec.family == models::Family::kBase)
    throw ConfigError("$.model.family: search needs a multi-task family");
  SearchOutcome out;
  out.result = training::greedy_aux_search(spec, *d, c.train, sc);

  Json snap = config::snapshot(c);
  Json sj;
  sj["candidates"] = c.search->candidates;
  sj["min_gain"] = c.search->min_gain;
  if (c.search->noise) {
    sj["noise"] = {{"column", mechanism_name(c.search->noise->column)},
                   {"rate", c.search->noise->rate},
                   {"seed", c.search->noise->seed}};
  }
  snap["search"] = sj;
  out.dir = out_root / ("search-" + hex16(fnv1a64(snap.dump() + "|" + loaded.fingerprint)));
  if (!fs::exists(out.dir / "trace.json")) {
    fs::create_directories(out.dir);
    write_text(out.dir / "config.json", snap.dump(2) + "\n");
    write_text(out.dir / "trace.json", to_json(out.result).dump(2) + "\n");
    std::ostringstream csv;
    csv << "round,added,val_gauc\n";
    csv << "0,," << fixed(out.result.trace.front(), 8) << "\n";
    for (std::size_t i = 0; i < out.result.selected.size(); ++i)
      csv << i + 1 << "," << out.result.selected[i] << "," << fixed(out.result.trace[i + 1], 8) << "\n";
    write_text(out.dir / "trace.csv", csv.str());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct RunRecord {
  std::string run;
  std::string family;
  std::string target;
  double lambda = 0.0;
  double lr = 0.0;
  std::string atl;
  std::optional<double> val_gauc;
  double auc = 0.0;
  double gauc = 0.0;
  std::vector<metrics::UserAuc> users;
  std::map<std::int64_t, double> complexity;
  std::string dataset;
};

inline std::vector<RunRecord> collect_runs(const fs::path& dir) {
  std::vector<fs::path> found;
  if (fs::exists(dir))
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory() && e.path().filename().string().rfind("run-", 0) == 0 && fs::exists(e.path() / "report.json"))
        found.push_back(e.path());
  std::sort(found.begin(), found.end());
  std::vector<RunRecord> out;
  for (const auto& p : found) {
    const Json j = Json::parse(read_text(p / "report.json"));
    RunRecord r;
    r.run = p.filename().string();
    r.family = j.at("family").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.lambda = j.at("lambda").get<double>();
    r.lr = j.at("lr").get<double>();
    r.atl = j.at("atl_mode").get<std::string>();
    if (!j.at("val_gauc").is_null()) r.val_gauc = j.at("val_gauc").get<double>();
    const auto m = metrics::metric_report_from_json(j.at("test"));
    r.auc = m.auc;
    r.gauc = m.gauc;
    r.users = m.per_user;
    for (const auto& e : j.at("complexity")) r.complexity[e[0].get<std::int64_t>()] = e[1].get<double>();
    r.dataset = j.at("dataset").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

struct ReportFiles {
  std::string markdown;
  std::string group_lift_csv;
};

namespace detail {

inline const RunRecord* pick_best(const std::vector<const RunRecord*>& runs) {
  const RunRecord* best = nullptr;
  for (const auto* r : runs) {
    const double v = r->val_gauc.value_or(-1.0);
    if (!best || v > best->val_gauc.value_or(-1.0)) best = r;
  }
  return best;
}

inline std::vector<std::string> ordered_families(const std::vector<RunRecord>& runs) {
  std::vector<std::string> out;
  for (auto f : models::kAllFamilies) {
    const std::string name(models::family_name(f));
    if (std::any_of(runs.begin(), runs.end(), [&](const RunRecord& r) { return r.family == name; })) out.push_back(name);
  }
  return out;
}

inline std::vector<std::string> ordered_targets(const std::vector<RunRecord>& runs) {
  std::vector<std::string> out;
  for (auto m : kAllMechanisms) {
    const std::string name(mechanism_name(m));
    if (std::any_of(runs.begin(), runs.end(), [&](const RunRecord& r) { return r.target == name; })) out.push_back(name);
  }
  return out;
}

}  // namespace detail

/// Markdown tables built only from run artifacts, plus the group-lift CSV.
/// Output is a pure function of the artifacts.
inline ReportFiles build_report(const std::vector<RunRecord>& runs) {
  ReportFiles out;
  std::ostringstream md;
  std::ostringstream csv;
  csv << "target,bucket,lower,upper,users,delta_auc\n";
  md << "# Experiment report\n\n";
  if (runs.empty()) {
    md << "No run artifacts found.\n";
    out.markdown = md.str();
    out.group_lift_csv = csv.str();
    return out;
  }
  const auto families = detail::ordered_families(runs);
  const auto targets = detail::ordered_targets(runs);
  auto select = [&](const std::function<bool(const RunRecord&)>& pred) {
    std::vector<const RunRecord*> v;
    for (const auto& r : runs)
      if (pred(r)) v.push_back(&r);
    return detail::pick_best(v);
  };
  auto main_cell = [&](const std::string& f, const std::string& t) {
    return select([&](const RunRecord& r) {
      return r.family == f && r.target == t && r.atl == "none" && (r.lambda > 0.0 || f == "base");
    });
  };

  // Model comparison across target mechanisms.
  md << "## Ranking performance by target mechanism\n\n";
  md << "Best run per cell by validation GAUC (ATL none, lambda > 0). Test-day AUC / GAUC.\n\n";
  md << "| model |";
  for (const auto& t : targets) md << " " << t << " AUC | " << t << " GAUC |";
  md << "\n|---|";
  for (std::size_t i = 0; i < targets.size(); ++i) md << "---|---|";
  md << "\n";
  for (const auto& f : families) {
    md << "| " << f << " |";
    for (const auto& t : targets) {
      const auto* r = main_cell(f, t);
      md << " " << (r ? fixed(r->auc) : "-") << " | " << (r ? fixed(r->gauc) : "-") << " |";
    }
    md << "\n";
  }
  if (std::find(families.begin(), families.end(), "base") != families.end()) {
    for (const auto& f : families) {
      md << "| delta " << f << " vs base |";
      for (const auto& t : targets) {
        const auto* r = main_cell(f, t);
        const auto* b = main_cell("base", t);
        md << " " << (r && b ? fixed(r->auc - b->auc) : "-") << " | " << (r && b ? fixed(r->gauc - b->gauc) : "-")
           << " |";
      }
      md << "\n";
    }
  }

  // Auxiliary-task learning study.
  md << "\n## Auxiliary-task learning\n\n";
  md << "Test GAUC per ATL mode (best lambda/lr by validation GAUC).\n\n";
  md << "| model | atl_mode |";
  for (const auto& t : targets) md << " " << t << " GAUC |";
  md << "\n|---|---|";
  for (std::size_t i = 0; i < targets.size(); ++i) md << "---|";
  md << "\n";
  for (const auto& f : families) {
    if (f == "base") continue;
    for (const std::string atl : {"none", "gcs", "pcgrad"}) {
      bool any = false;
      std::ostringstream line;
      line << "| " << f << " | " << atl << " |";
      for (const auto& t : targets) {
        const auto* r = select([&](const RunRecord& x) {
          return x.family == f && x.target == t && x.atl == atl && x.lambda > 0.0;
        });
        any = any || r;
        line << " " << (r ? fixed(r->gauc) : "-") << " |";
      }
      if (any) md << line.str() << "\n";
    }
  }

  // Auxiliary-weight ablation.
  md << "\n## Ablation: auxiliary weights set to zero\n\n";
  md << "| model | variant |";
  for (const auto& t : targets) md << " " << t << " GAUC |";
  md << "\n|---|---|";
  for (std::size_t i = 0; i < targets.size(); ++i) md << "---|";
  md << "\n";
  for (const auto& f : families) {
    if (f == "base") continue;
    for (const bool zero : {false, true}) {
      bool any = false;
      std::ostringstream line;
      line << "| " << f << " | " << (zero ? "w/o mal (lambda=0)" : "full") << " |";
      for (const auto& t : targets) {
        const auto* r = zero ? select([&](const RunRecord& x) {
          return x.family == f && x.target == t && x.atl == "none" && x.lambda == 0.0;
        })
                             : main_cell(f, t);
        any = any || r;
        line << " " << (r ? fixed(r->gauc) : "-") << " |";
      }
      if (any) md << line.str() << "\n";
    }
  }

  // Group lift of MoAE over BASE by conversion-path complexity.
  md << "\n## Group lift by conversion-path complexity\n\n";
  bool lift_any = false;
  for (const auto& t : targets) {
    const auto* a = main_cell("moae", t);
    const auto* b = main_cell("base", t);
    if (!a || !b || a->dataset != b->dataset) continue;
    std::vector<double> ratios;
    std::map<std::int64_t, double> auc_b;
    for (const auto& u : b->users) auc_b[u.user] = u.auc;
    for (const auto& u : a->users) {
      auto it = a->complexity.find(u.user);
      if (auc_b.contains(u.user) && it != a->complexity.end()) ratios.push_back(it->second);
    }
    if (ratios.empty()) continue;
    const auto edges = metrics::quantile_edges(ratios, 4);
    const auto rows = metrics::group_lift(a->users, b->users, a->complexity, edges);
    if (!lift_any) {
      md << "| target | bucket | ratio range | users | delta AUC (moae - base) |\n|---|---|---|---|---|\n";
      lift_any = true;
    }
    for (const auto& row : rows) {
      md << "| " << t << " | " << row.bucket << " | [" << fixed(row.lower, 3) << ", " << fixed(row.upper, 3) << ") | "
         << row.users << " | " << fixed(row.delta) << " |\n";
      csv << t << "," << row.bucket << "," << fixed(row.lower, 6) << "," << fixed(row.upper, 6) << "," << row.users
          << "," << fixed(row.delta, 8) << "\n";
    }
  }
  if (!lift_any) md << "Needs a moae and a base run on the same dataset and target.\n";

  md << "\n## Runs\n\n| run | family | target | lambda | lr | atl_mode | val GAUC | test AUC | test GAUC |\n"
     << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : runs) {
    md << "| " << r.run << " | " << r.family << " | " << r.target << " | " << r.lambda << " | " << r.lr << " | " << r.atl
       << " | " << (r.val_gauc ? fixed(*r.val_gauc) : "-") << " | " << fixed(r.auc) << " | " << fixed(r.gauc) << " |\n";
  }
  out.markdown = md.str();
  out.group_lift_csv = csv.str();
  return out;
}

inline ReportFiles write_report(const fs::path& dir) {
  const auto files = build_report(collect_runs(dir));
  fs::create_directories(dir);
  write_text(dir / "report.md", files.markdown);
  write_text(dir / "group_lift.csv", files.group_lift_csv);
  return files;
}

}  // namespace malkit::experiment
