#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "test_support.hpp"

namespace {

namespace fs = std::filesystem;
using namespace malkit;
using config::Json;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("malkit-cli-" + std::to_string(::getpid()) + "-" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(MALKIT_CLI_PATH) + " " + args + " 2>" + err.string();
    Result r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = experiment::read_text(err);
    return r;
  }

  static fs::path source(const std::string& rel) { return fs::path(MALKIT_SOURCE_DIR) / rel; }
  static std::string fixture() { return source("tests/fixtures/tiny.csv").string(); }

  // Tiny-fixture config with `edit` applied, written into the test directory.
  fs::path config(const std::string& name, const std::function<void(Json&)>& edit = {}) const {
    Json j = config::read_json_file(source("configs/tiny.json").string());
    j["dataset"] = {{"path", fixture()}};
    j["out"] = (dir_ / "runs").string();
    if (edit) edit(j);
    const fs::path p = dir_ / name;
    experiment::write_text(p, j.dump(2));
    return p;
  }

  std::vector<fs::path> runs(const fs::path& root) const {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(root))
      if (e.path().filename().string().rfind("run-", 0) == 0) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
  }

  fs::path dir_;
};

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

TEST_F(Cli, GenWritesSchemaHeaderAndIsDeterministic) {
  const auto cfg = source("configs/tiny.json").string();
  const auto a = run("gen --config " + cfg + " --out " + (dir_ / "a.csv").string());
  const auto b = run("gen --config " + cfg + " --out " + (dir_ / "b.csv").string());
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  const auto text_a = experiment::read_text(dir_ / "a.csv");
  EXPECT_EQ(first_line(text_a), data::csv_header_line());
  EXPECT_EQ(fnv1a64(text_a), fnv1a64(experiment::read_text(dir_ / "b.csv")));
  // The checked-in fixture is this config's output.
  EXPECT_EQ(text_a, experiment::read_text(fixture()));
}

TEST_F(Cli, GenSummaryMatchesRecomputation) {
  const auto r = run("gen --config " + source("configs/tiny.json").string() + " --out " + (dir_ / "d.csv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = data::summarize(data::read_dataset((dir_ / "d.csv").string()));
  for (Mechanism m : kAllMechanisms) {
    const std::regex line("\n" + std::string(mechanism_name(m)) + " +([0-9]+) +([0-9.]+)%");
    std::smatch match;
    ASSERT_TRUE(std::regex_search(r.out, match, line)) << r.out;
    EXPECT_EQ(std::stoull(match[1]), s.positives[index_of(m)]);
    EXPECT_EQ(match[2].str(), experiment::fixed(100.0 * s.ratio(m), 3));
  }
}

TEST_F(Cli, TrainOnTinyFixtureIsFastAndComplete) {
  const auto cfg = config("base.json");
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run("train --quiet --config " + cfg.string());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LT(secs, 5.0);
  const auto dirs = runs(dir_ / "runs");
  ASSERT_EQ(dirs.size(), 1u);
  for (const char* f : {"artifact.json", "config.json", "checkpoint.bin", "report.json", "log.jsonl"})
    EXPECT_TRUE(fs::exists(dirs[0] / f)) << f;
  const Json artifact = Json::parse(experiment::read_text(dirs[0] / "artifact.json"));
  const auto d = data::read_dataset(fixture());
  EXPECT_EQ(artifact["dataset_fingerprint"].get<std::string>(), experiment::fingerprint(d));
  const Json report = Json::parse(experiment::read_text(dirs[0] / "report.json"));
  const auto m = metrics::metric_report_from_json(report["test"]);
  EXPECT_GT(m.auc, 0.0);
  EXPECT_LT(m.auc, 1.0);
  // Log records carry the per-step fields.
  std::istringstream log(experiment::read_text(dirs[0] / "log.jsonl"));
  std::string line;
  std::size_t steps = 0;
  while (std::getline(log, line)) {
    const Json j = Json::parse(line);
    for (const char* k : {"step", "day", "loss_primary", "loss_aux", "alpha", "conflicts", "val_gauc"})
      EXPECT_TRUE(j.contains(k)) << k;
    ++steps;
  }
  EXPECT_EQ(steps, report["steps"].get<std::size_t>());
}

TEST_F(Cli, SnapshotReproducesRun) {
  const auto cfg = config("moae.json", [](Json& j) { j["model"]["family"] = "moae"; });
  const auto a = run("train --quiet --config " + cfg.string() + " --out " + (dir_ / "a").string());
  ASSERT_EQ(a.code, 0) << a.err;
  const auto da = runs(dir_ / "a");
  ASSERT_EQ(da.size(), 1u);
  const auto b = run("train --quiet --config " + (da[0] / "config.json").string() + " --out " + (dir_ / "b").string());
  ASSERT_EQ(b.code, 0) << b.err;
  const auto db = runs(dir_ / "b");
  ASSERT_EQ(db.size(), 1u);
  EXPECT_EQ(da[0].filename(), db[0].filename());
  for (const char* f : {"report.json", "checkpoint.bin", "log.jsonl", "config.json"})
    EXPECT_EQ(experiment::read_text(da[0] / f), experiment::read_text(db[0] / f)) << f;
  // Re-running into the same root reuses the artifact and leaves it untouched.
  const auto before = fs::last_write_time(da[0] / "report.json");
  const auto again = run("train --quiet --config " + cfg.string() + " --out " + (dir_ / "a").string());
  ASSERT_EQ(again.code, 0);
  EXPECT_NE(again.out.find("(existing)"), std::string::npos);
  EXPECT_EQ(fs::last_write_time(da[0] / "report.json"), before);
}

TEST_F(Cli, ZeroLambdaMatchesAuxRemovedCheckpoint) {
  const auto zero = config("zero.json", [](Json& j) {
    j["model"]["family"] = "moae";
    j["train"]["lambda"] = 0.0;
  });
  const auto removed = config("removed.json", [](Json& j) {
    j["model"]["family"] = "moae";
    j["train"]["aux"] = Json::array();
    j["train"]["cat"] = false;
  });
  ASSERT_EQ(run("train --quiet --config " + zero.string() + " --out " + (dir_ / "zero").string()).code, 0);
  ASSERT_EQ(run("train --quiet --config " + removed.string() + " --out " + (dir_ / "removed").string()).code, 0);
  const auto a = nn::read_checkpoint((runs(dir_ / "zero")[0] / "checkpoint.bin").string());
  const auto b = nn::read_checkpoint((runs(dir_ / "removed")[0] / "checkpoint.bin").string());
  const auto names = a.names_in_group(nn::group::kShared);
  ASSERT_FALSE(names.empty());
  for (const auto& n : names) {
    const auto& x = a.at(n).value;
    const auto& y = b.at(n).value;
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(x[i], y[i]) << n;
  }
}

TEST_F(Cli, ConfigErrorsExitTwoWithFieldPath) {
  const auto unknown = config("unknown.json", [](Json& j) { j["train"]["lrr"] = 0.1; });
  auto r = run("train --quiet --config " + unknown.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("$.train.lrr"), std::string::npos) << r.err;

  const auto bad = config("bad.json", [](Json& j) { j["train"]["lr"] = -1; });
  r = run("train --quiet --config " + bad.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("$.train.lr"), std::string::npos) << r.err;

  const auto family = config("family.json", [](Json& j) { j["model"]["family"] = "esmm"; });
  r = run("train --quiet --config " + family.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("$.model.family"), std::string::npos) << r.err;

  const auto gen = config("gen.json", [](Json& j) { j["dataset"] = {{"generate", {{"conversion_rate", 1.5}}}}; });
  r = run("gen --config " + gen.string() + " --out " + (dir_ / "x.csv").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("$.dataset.generate.conversion_rate"), std::string::npos) << r.err;

  EXPECT_EQ(run("train --config " + (dir_ / "missing.json").string()).code, 2);
  EXPECT_EQ(run("fly").code, 2);
  EXPECT_EQ(run("train --seed abc").code, 2);
}

TEST_F(Cli, NonfiniteLossExitsThree) {
  const auto cfg = config("nan.json", [](Json& j) { j["train"]["lr"] = 1e300; });
  const auto r = run("train --quiet --config " + cfg.string());
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("mechanism last"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "runs") && !runs(dir_ / "runs").empty());
}

TEST_F(Cli, SingleClassTestDayExitsFour) {
  auto samples = data::read_dataset(fixture()).samples();
  const auto last = samples.back().day;
  for (auto& s : samples)
    if (s.day == last) s.weights.fill(0.0);
  const fs::path csv = dir_ / "flat.csv";
  data::write_dataset(data::Dataset(std::move(samples)), csv.string());
  const auto cfg = config("flat.json", [&](Json& j) { j["dataset"] = {{"path", csv.string()}}; });
  const auto r = run("train --quiet --config " + cfg.string());
  EXPECT_EQ(r.code, 4) << r.err;
}

TEST_F(Cli, SweepTwoByTwo) {
  const auto cfg = config("sweep.json", [](Json& j) {
    j["sweep"] = {{"families", {"base", "moae"}}, {"targets", {"last", "first"}}};
  });
  const auto r = run("sweep --quiet --config " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(runs(dir_ / "runs").size(), 4u);
  std::istringstream table(r.out);
  std::string line;
  bool saw_delta = false;
  while (std::getline(table, line)) {
    if (line.rfind("delta base vs base", 0) != 0) continue;
    saw_delta = true;
    std::istringstream cells(line.substr(std::string("delta base vs base").size()));
    std::string v;
    std::size_t n = 0;
    while (cells >> v) {
      EXPECT_EQ(v, "0.0000");
      ++n;
    }
    EXPECT_EQ(n, 4u);
  }
  EXPECT_TRUE(saw_delta) << r.out;
  std::size_t csv_files = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "runs"))
    if (e.path().filename().string().rfind("sweep-", 0) == 0) {
      ++csv_files;
      const auto csv = experiment::read_text(e.path() / "sweep.csv");
      EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    }
  EXPECT_EQ(csv_files, 1u);
}

TEST_F(Cli, ReportOnEmptyDirectory) {
  const auto r = run("report " + (dir_ / "empty").string());
  EXPECT_EQ(r.code, 0) << r.err;
  const auto md = experiment::read_text(dir_ / "empty" / "report.md");
  EXPECT_NE(md.find("No run artifacts found."), std::string::npos);
  EXPECT_EQ(experiment::read_text(dir_ / "empty" / "group_lift.csv"), "target,bucket,lower,upper,users,delta_auc\n");
}

TEST_F(Cli, ReportIsIdempotentAndMatchesArtifacts) {
  const auto cfg = config("sweep.json", [](Json& j) {
    j["sweep"] = {{"families", {"base", "moae"}}, {"targets", {"last"}}, {"lambdas", {0.0, 0.2}}};
  });
  ASSERT_EQ(run("sweep --quiet --config " + cfg.string()).code, 0);
  const auto root = dir_ / "runs";
  ASSERT_EQ(run("report " + root.string()).code, 0);
  const auto md1 = experiment::read_text(root / "report.md");
  const auto csv1 = experiment::read_text(root / "group_lift.csv");
  ASSERT_EQ(run("report " + root.string()).code, 0);
  EXPECT_EQ(experiment::read_text(root / "report.md"), md1);
  EXPECT_EQ(experiment::read_text(root / "group_lift.csv"), csv1);

  // Parse the runs table back and compare with each report.json.
  std::size_t parsed = 0;
  for (const auto& dir : runs(root)) {
    const Json j = Json::parse(experiment::read_text(dir / "report.json"));
    const std::string name = dir.filename().string();
    const auto at = md1.find("| " + name + " |");
    ASSERT_NE(at, std::string::npos) << name;
    const std::string row = md1.substr(at, md1.find('\n', at) - at);
    std::vector<std::string> cells;
    std::istringstream is(row);
    std::string cell;
    while (std::getline(is, cell, '|')) {
      const auto b = cell.find_first_not_of(' ');
      if (b == std::string::npos) continue;
      cells.push_back(cell.substr(b, cell.find_last_not_of(' ') - b + 1));
    }
    ASSERT_EQ(cells.size(), 9u) << row;
    EXPECT_EQ(cells[1], j["family"].get<std::string>());
    EXPECT_EQ(std::stod(cells[3]), j["lambda"].get<double>());
    EXPECT_NEAR(std::stod(cells[7]), j["test"]["auc"].get<double>(), 5e-7);
    EXPECT_NEAR(std::stod(cells[8]), j["test"]["gauc"].get<double>(), 5e-7);
    ++parsed;
  }
  EXPECT_EQ(parsed, 4u);
  // The ablation table lists the lambda = 0 run of moae.
  EXPECT_NE(md1.find("| moae | w/o mal (lambda=0) |"), std::string::npos);
  EXPECT_NE(md1.find("| moae | full |"), std::string::npos);
}

TEST_F(Cli, SearchWritesMonotoneTrace) {
  const auto cfg = config("search.json", [](Json& j) {
    j["dataset"] = {{"generate", config::to_json(testkit::small_gen(2))}};
    j["model"]["family"] = "moae";
    j["search"] = {{"candidates", {"first", "linear", "cat"}}};
  });
  const auto r = run("search --quiet --config " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<fs::path> found;
  for (const auto& e : fs::directory_iterator(dir_ / "runs"))
    if (e.path().filename().string().rfind("search-", 0) == 0) found.push_back(e.path());
  ASSERT_EQ(found.size(), 1u);
  const Json trace = Json::parse(experiment::read_text(found[0] / "trace.json"));
  const auto t = trace["trace"].get<std::vector<double>>();
  ASSERT_EQ(t.size(), trace["selected"].size() + 1);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_GT(t[i], t[i - 1]);
  EXPECT_NE(r.out.find("selected:"), std::string::npos);
}

TEST_F(Cli, SearchStopsWhenExhaustedOrStalled) {
  // Either every candidate was added, or the final round added nothing.
  const auto cfg = config("search.json", [](Json& j) {
    j["dataset"] = {{"generate", config::to_json(testkit::small_gen(2))}};
    j["model"]["family"] = "moae";
    j["search"] = {{"candidates", {"first", "linear", "dda", "cat"}}};
  });
  const auto r = run("search --quiet --config " + cfg.string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& e : fs::directory_iterator(dir_ / "runs")) {
    const Json trace = Json::parse(experiment::read_text(e.path() / "trace.json"));
    const auto& rounds = trace["rounds"];
    const auto& selected = trace["selected"];
    if (selected.size() == 4) {
      EXPECT_EQ(rounds.size(), 4u);
    } else {
      EXPECT_TRUE(rounds.back()["added"].is_null());
    }
  }
}

TEST_F(Cli, SeedFlagOverridesConfig) {
  const auto cfg = source("configs/tiny.json").string();
  const auto a = run("gen --seed 11 --config " + cfg + " --out " + (dir_ / "a.csv").string());
  const auto b = run("gen --config " + cfg + " --out " + (dir_ / "b.csv").string());
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_NE(experiment::read_text(dir_ / "a.csv"), experiment::read_text(dir_ / "b.csv"));
}

}  // namespace
