/*
 * Copyright 2026 The modfed Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "modfed/cli.hpp"

namespace modfed {
namespace {

namespace fs = std::filesystem;

fs::path TempDir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("modfed_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void WriteFile(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

std::string ReadFile(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int RunModfed(std::vector<std::string> args) {
  args.insert(args.begin(), "modfed");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return RunCli(int(argv.size()), argv.data());
}

std::vector<Json> ReadJsonl(const fs::path& p) {
  std::vector<Json> out;
  std::ifstream f(p);
  std::string line;
  while (std::getline(f, line)) out.push_back(Json::parse(line));
  return out;
}

TEST(LoadCsv, ToyRoundTrip) {
  const fs::path dir = TempDir("toy");
  WriteFile(dir / "toy.csv", "a,y,b\n1,10,2\n3,20,4\n5.5,30,-6e-1\n");
  const Dataset d = LoadCsv(dir / "toy.csv", "y");
  ASSERT_EQ(d.num_clients(), 3);
  ASSERT_EQ(d.dim(), 2);
  Matrix X(3, 2);
  X << 1, 2, 3, 4, 5.5, -0.6;
  EXPECT_EQ(d.X, X);
  EXPECT_EQ(d.Y, Vector::LinSpaced(3, 10, 30));
}

TEST(LoadCsv, HandlesCrlfAndBom) {
  const fs::path dir = TempDir("crlf");
  WriteFile(dir / "t.csv", "\xEF\xBB\xBFx,y\r\n1,2\r\n3,4\r\n");
  const Dataset d = LoadCsv(dir / "t.csv", "x");
  EXPECT_EQ(d.Y(1), 3.0);
  EXPECT_EQ(d.X(1, 0), 4.0);
}

TEST(LoadCsv, Errors) {
  const fs::path dir = TempDir("csv_errors");
  WriteFile(dir / "t.csv", "a,b\n1,2\n");
  try {
    LoadCsv(dir / "t.csv", "y");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'y'"), std::string::npos);
  }
  std::string text = "a,y\n";
  for (int i = 1; i <= 6; ++i) text += std::to_string(i) + ",1\n";
  text += "7,abc\n";
  WriteFile(dir / "bad.csv", text);
  try {
    LoadCsv(dir / "bad.csv", "y");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 7"), std::string::npos) << e.what();
  }
  WriteFile(dir / "ragged.csv", "a,y\n1,2\n3\n");
  EXPECT_THROW(LoadCsv(dir / "ragged.csv", "y"), DataError);
  try {
    LoadCsv(dir / "missing.csv", "y");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.csv"), std::string::npos);
  }
}

TEST(Config, RejectsUnknownKeysAndBadSchema) {
  EXPECT_THROW(ParseConfig(Json::parse(R"({"bogus": 1})")), ConfigError);
  EXPECT_THROW(ParseConfig(Json::parse(R"({"protocol": {"alpah": 0.5}})")),
               ConfigError);
  EXPECT_THROW(ParseConfig(Json::parse(R"({"schema_version": 2})")), ConfigError);
  EXPECT_THROW(ParseConfig(Json::parse(R"({"protocol": {"alpha": "x"}})")),
               ConfigError);
  EXPECT_THROW(ParseConfig(Json::parse(R"({"sweep": {"methods": ["nope"]}})")),
               ConfigError);
  const RunConfig c = ParseConfig(Json::parse(
      R"({"schema_version": 1, "protocol": {"alpha": 0.3, "step": {"kind": "fixed", "value": 0.1}},
          "sweep": {"methods": ["dpsgd"], "eps_grid": [1, 2]}})"));
  EXPECT_EQ(c.protocol.alpha, 0.3);
  EXPECT_EQ(c.protocol.step.kind, StepKind::kFixed);
  EXPECT_EQ(c.sweep.methods.size(), 1u);
}

TEST(Fnv1a, KnownValue) {
  // FNV-1a of the empty input is the offset basis.
  EXPECT_EQ(Fnv1aHash(Vector(0)), "cbf29ce484222325");
  Vector a(2), b(2);
  a << 1.0, 2.0;
  b << 1.0, 2.0000000000000004;
  EXPECT_NE(Fnv1aHash(a), Fnv1aHash(b));
}

TEST(Cli, ExitCodes) {
  const fs::path dir = TempDir("exit");
  EXPECT_EQ(RunModfed({"nosuch"}), kExitConfig);
  EXPECT_EQ(RunModfed({"simulate", "--rounds", "0", "--out", dir.string()}), kExitConfig);
  EXPECT_EQ(RunModfed({"simulate", "--data", (dir / "absent.csv").string(), "--target",
                 "y", "--out", dir.string()}),
            kExitData);
  WriteFile(dir / "bad.json", R"({"unknown_key": true})");
  EXPECT_EQ(RunModfed({"bounds", "--config", (dir / "bad.json").string(), "--out",
                 dir.string()}),
            kExitConfig);
  EXPECT_EQ(RunModfed({"bounds", "--config", (dir / "none.json").string()}), kExitConfig);
}

TEST(Cli, SimulateIsDeterministicAndWellFormed) {
  const fs::path a = TempDir("sim_a"), b = TempDir("sim_b");
  WriteFile(a / "cfg.json", R"({"data": {"K": 400, "d": 3}, "privacy": {"epsilon": 5}})");
  ASSERT_EQ(RunModfed({"simulate", "--config", (a / "cfg.json").string(), "--seed", "4",
                 "--rounds", "4", "--out", a.string()}),
            kExitOk);
  ASSERT_EQ(RunModfed({"simulate", "--config", (a / "cfg.json").string(), "--seed", "4",
                 "--rounds", "4", "--out", b.string()}),
            kExitOk);
  EXPECT_EQ(ReadFile(a / "results.jsonl"), ReadFile(b / "results.jsonl"));
  const auto recs = ReadJsonl(a / "results.jsonl");
  ASSERT_EQ(recs.size(), 1u + 4u + 1u);
  for (const auto& r : recs) {
    EXPECT_EQ(r["schema_version"], kSchemaVersion);
    EXPECT_TRUE(r.contains("payload"));
  }
  EXPECT_EQ(recs[1]["record_type"], "round");
  EXPECT_EQ(recs[1]["payload"]["beta_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(recs.back()["payload"]["ledger_entries"], 4);
  EXPECT_LE(recs.back()["payload"]["ledger_epsilon"].get<double>(), 5.0 + 1e-9);
}

TEST(Cli, CsvInputIsNotModified) {
  const fs::path dir = TempDir("csv_in");
  std::string text = "x1,x2,target\n";
  RngStream rng(1);
  for (int i = 0; i < 60; ++i) {
    const double x1 = rng.normal(), x2 = rng.normal();
    text += std::to_string(x1) + "," + std::to_string(x2) + "," +
            std::to_string(x1 - 0.5 * x2 + 0.1 * rng.normal()) + "\n";
  }
  WriteFile(dir / "data.csv", text);
  ASSERT_EQ(RunModfed({"oneshot", "--data", (dir / "data.csv").string(), "--target",
                 "target", "--out", (dir / "out").string()}),
            kExitOk);
  EXPECT_EQ(ReadFile(dir / "data.csv"), text);
  const auto recs = ReadJsonl(dir / "out" / "results.jsonl");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1]["payload"]["ledger_entries"], 1);
}

TEST(Cli, SweepEmitsPlotDataAndIsByteStable) {
  const fs::path a = TempDir("sweep_a"), b = TempDir("sweep_b");
  WriteFile(a / "cfg.json", R"({
    "data": {"K": 500, "d": 3},
    "sweep": {"eps_grid": [1, 5], "replicates": 2, "c_factors": [0.5],
              "ridge_gammas": [0.1], "clip_cs": [1], "learning_rates": [4]}})");
  ASSERT_EQ(RunModfed({"sweep", "--config", (a / "cfg.json").string(), "--out", a.string()}),
            kExitOk);
  ASSERT_EQ(RunModfed({"sweep", "--config", (a / "cfg.json").string(), "--out",
                 b.string(), "--jobs", "2"}),
            kExitOk);
  EXPECT_EQ(ReadFile(a / "results.jsonl"), ReadFile(b / "results.jsonl"));
  for (const char* m : {"modulated_iterative", "modulated_oneshot", "dpsgd"}) {
    const std::string csv = ReadFile(a / (std::string("plot_") + m + ".csv"));
    EXPECT_EQ(csv.rfind("epsilon,mean_r2,sd_r2,method\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    EXPECT_EQ(csv, ReadFile(b / (std::string("plot_") + m + ".csv")));
  }
  int cells = 0;
  bool crossover = false;
  for (const auto& r : ReadJsonl(a / "results.jsonl")) {
    cells += r["record_type"] == "cell";
    crossover = crossover || r["record_type"] == "crossover";
    EXPECT_FALSE(r["payload"].contains("wall_seconds"));
  }
  EXPECT_EQ(cells, 3 * 2 * 2);
  EXPECT_TRUE(crossover);
  EXPECT_TRUE(fs::exists(a / "timing.jsonl"));
}

TEST(Cli, OutDirFromEnvironment) {
  const fs::path dir = TempDir("env");
  setenv("MODFED_OUT_DIR", dir.string().c_str(), 1);
  EXPECT_EQ(RunModfed({"bounds"}), kExitOk);
  unsetenv("MODFED_OUT_DIR");
  EXPECT_TRUE(fs::exists(dir / "results.jsonl"));
}

TEST(Cli, BoundsGoldenSnapshot) {
  const fs::path dir = TempDir("bounds");
  ASSERT_EQ(RunModfed({"bounds", "--config", MODFED_TEST_DATA "/bounds_config.json",
                 "--out", dir.string()}),
            kExitOk);
  EXPECT_EQ(ReadFile(dir / "results.jsonl"),
            ReadFile(MODFED_TEST_DATA "/bounds_golden.jsonl"));
}

TEST(Cli, BoundsWithoutBetaStarHasNoLeakage) {
  const fs::path dir = TempDir("bounds_zero");
  WriteFile(dir / "cfg.json", R"({"bounds": {"beta_star_norm": 0, "sigma_dp": 1.0}})");
  ASSERT_EQ(RunModfed({"bounds", "--config", (dir / "cfg.json").string(), "--out",
                 dir.string()}),
            kExitOk);
  const auto recs = ReadJsonl(dir / "results.jsonl");
  EXPECT_EQ(recs[1]["payload"]["crb_leakage_term"], 0.0);
  WriteFile(dir / "bad.json", R"({"bounds": {"K": 0}})");
  EXPECT_EQ(RunModfed({"bounds", "--config", (dir / "bad.json").string(), "--out",
                 dir.string()}),
            kExitConfig);
}

TEST(Cli, ValidateSelectsAndReports) {
  const fs::path dir = TempDir("validate");
  EXPECT_EQ(RunModfed({"validate", "--validator", "centering", "--validator",
                 "phase_c1", "--samples", "2000", "--out", dir.string()}),
            kExitOk);
  std::set<std::string> names;
  for (const auto& r : ReadJsonl(dir / "results.jsonl")) {
    if (r["record_type"] == "validation") names.insert(r["payload"]["validator"]);
  }
  EXPECT_EQ(names, (std::set<std::string>{"centering", "phase_c1"}));
  EXPECT_EQ(RunModfed({"validate", "--validator", "nope", "--out", dir.string()}),
            kExitConfig);
}

TEST(Cli, ValidateTinySampleIsStructurallyValid) {
  const fs::path dir = TempDir("validate_tiny");
  const int code = RunModfed({"validate", "--samples", "10", "--out", dir.string()});
  EXPECT_TRUE(code == kExitOk || code == kExitValidationFailed);
  const auto recs = ReadJsonl(dir / "results.jsonl");
  EXPECT_EQ(recs.back()["record_type"], "validation_summary");
  for (const auto& r : recs) {
    if (r["record_type"] != "validation") continue;
    for (const char* k : {"name", "closed_form", "estimate", "std_error", "passed"}) {
      EXPECT_TRUE(r["payload"].contains(k));
    }
  }
}

}  // namespace
}  // namespace modfed
