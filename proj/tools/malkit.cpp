// Command-line runner: gen, train, sweep, search, report.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "malkit/malkit.hpp"

namespace {

namespace fs = std::filesystem;
using namespace malkit;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kMetric = 4 };

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  std::string report_dir;
};

config::ExperimentConfig load(const Options& o) {
  config::ExperimentConfig c;
  if (o.config.empty()) {
    c = config::parse_experiment(config::Json::object());
  } else {
    c = config::load_experiment(o.config);
  }
  if (o.seed) {
    c.train.seed = *o.seed;
    if (c.generate) c.generate->seed = *o.seed;
  }
  return c;
}

fs::path out_root(const Options& o, const config::ExperimentConfig& c) { return o.out.empty() ? fs::path(c.out) : fs::path(o.out); }

std::ostream* progress(const Options& o) { return o.quiet ? nullptr : &std::cerr; }

int cmd_gen(const Options& o) {
  const auto c = load(o);
  if (!c.generate) throw ConfigError("$.dataset.generate: the gen command needs a generator config");
  const auto d = data::generate(*c.generate);
  const fs::path path = o.out.empty() ? fs::path("dataset.csv") : fs::path(o.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::write_dataset(d, path.string());
  const auto s = data::summarize(d);
  std::cout << "wrote " << path.string() << " (" << s.samples << " clicks, " << s.users << " users, " << s.days
            << " days, fingerprint " << experiment::fingerprint(d) << ")\n";
  std::cout << "mechanism  positives  ratio\n";
  for (Mechanism m : kAllMechanisms) {
    std::cout << experiment::pad(std::string(mechanism_name(m)), 9) << "  " << experiment::pad(std::to_string(s.positives[index_of(m)]), 9)
              << "  " << experiment::fixed(100.0 * s.ratio(m), 3) << "%\n";
  }
  return kOk;
}

int cmd_train(const Options& o) {
  const auto c = load(o);
  const auto data = experiment::load_data(c);
  const auto run = experiment::run_one(c, data, out_root(o, c), progress(o));
  const auto& t = run.report["test"];
  std::cout << run.dir.string() << (run.reused ? " (existing)" : "") << "\n"
            << "test auc " << experiment::fixed(t["auc"].get<double>()) << " gauc "
            << experiment::fixed(t["gauc"].get<double>()) << "\n";
  return kOk;
}

int cmd_sweep(const Options& o) {
  const auto c = load(o);
  const auto data = experiment::load_data(c);
  const auto r = experiment::run_sweep(c, data, out_root(o, c), experiment::thread_budget(), progress(o));
  std::cout << r.table << r.dir.string() << "\n";
  return kOk;
}

int cmd_search(const Options& o) {
  const auto c = load(o);
  const auto data = experiment::load_data(c);
  const auto r = experiment::run_search(c, data, out_root(o, c), experiment::thread_budget());
  std::cout << "selected:";
  for (const auto& s : r.result.selected) std::cout << " " << s;
  if (r.result.selected.empty()) std::cout << " (none)";
  std::cout << "\ntrace:";
  for (double g : r.result.trace) std::cout << " " << experiment::fixed(g);
  std::cout << "\n" << r.dir.string() << "\n";
  return kOk;
}

int cmd_report(const Options& o) {
  fs::path dir = !o.report_dir.empty() ? fs::path(o.report_dir) : !o.out.empty() ? fs::path(o.out) : fs::path("runs");
  experiment::write_report(dir);
  std::cout << (dir / "report.md").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"malkit: multi-attribution conversion-rate modeling toolkit"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "Experiment config (JSON)");
  app.add_option("--out", o.out, "Output directory (gen: output CSV path)");
  app.add_option("--seed", o.seed, "Override train and generator seeds");
  app.add_flag("--quiet", o.quiet, "Suppress progress output");
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  auto* train = app.add_subcommand("train", "Train and evaluate one model");
  auto* sweep = app.add_subcommand("sweep", "Run the family x target grid");
  auto* search = app.add_subcommand("search", "Greedy auxiliary-objective search");
  auto* report = app.add_subcommand("report", "Summarize run artifacts");
  report->add_option("dir", o.report_dir, "Artifact directory");
  for (auto* sub : {gen, train, sweep, search, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfig;
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*train) return cmd_train(o);
    if (*sweep) return cmd_sweep(o);
    if (*search) return cmd_search(o);
    if (*report) return cmd_report(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const SpecError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ParseError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kConfig;
  } catch (const FeatureError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kConfig;
  } catch (const GenerationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const MetricUndefined& e) {
    std::cerr << "metric undefined: " << e.what() << "\n";
    return kMetric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
