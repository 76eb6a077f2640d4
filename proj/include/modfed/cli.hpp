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
#pragma once

// Command-line front end. Everything the `modfed` binary does lives here so
// tests can drive RunCli with an argv array.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "modfed/analysis_bounds.hpp"
#include "modfed/core_model.hpp"
#include "modfed/errors.hpp"
#include "modfed/estimators.hpp"
#include "modfed/privacy_accounting.hpp"
#include "modfed/server_protocol.hpp"
#include "modfed/simulator.hpp"
#include "modfed/validators.hpp"

namespace modfed {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidationFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitAccounting = 4;

// ---------------------------------------------------------------------------
// Small helpers

/// 64-bit FNV-1a over the IEEE-754 bytes of `v`, as 16 hex digits.
inline std::string Fnv1aHash(const Vector& v) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < std::size_t(v.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline Json ToJson(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json Record(const std::string& type, Json payload) {
  Json r;
  r["record_type"] = type;
  r["payload"] = std::move(payload);
  r["schema_version"] = kSchemaVersion;
  return r;
}

/// Line-delimited record writer. Lines are flushed on Close.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path) : path_(path) {}

  void Add(const Json& record) { buf_ << record.dump() << '\n'; }

  void Close() {
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path_.string());
    out << buf_.str();
    if (!out) throw DataError("write failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ostringstream buf_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

namespace internal {

inline std::string Trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(Trim(std::string_view(line).substr(
        start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::optional<double> ParseNumber(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace internal

/// Reads a header-plus-numeric CSV. The target column becomes Y and every
/// other column a feature, in file order. Errors cite the 1-based data row.
inline Dataset LoadCsv(const std::filesystem::path& path,
                       const std::string& target) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError("data file '" + path.string() + "' is empty");
  }
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const std::vector<std::string> header = internal::SplitCsvLine(line);
  std::size_t target_idx = header.size();
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty()) {
      throw DataError("empty column name in header of '" + path.string() + "'");
    }
    if (header[j] == target) {
      if (target_idx != header.size()) {
        throw DataError("target column '" + target + "' appears twice");
      }
      target_idx = j;
    }
  }
  if (target_idx == header.size()) {
    throw DataError("target column '" + target + "' not found in '" +
                    path.string() + "'");
  }
  if (header.size() < 2) throw DataError("CSV needs at least one feature column");

  std::vector<std::vector<double>> rows;
  std::size_t file_line = 1;
  while (std::getline(in, line)) {
    ++file_line;
    if (internal::Trim(line).empty()) continue;
    const std::size_t row_no = rows.size() + 1;
    const auto cells = internal::SplitCsvLine(line);
    if (cells.size() != header.size()) {
      throw DataError("row " + std::to_string(row_no) + " (line " +
                      std::to_string(file_line) + ") has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    std::vector<double> vals(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const auto v = internal::ParseNumber(cells[j]);
      if (!v) {
        throw DataError("row " + std::to_string(row_no) + " (line " +
                        std::to_string(file_line) + "): non-numeric cell '" +
                        cells[j] + "' in column '" + header[j] + "'");
      }
      vals[j] = *v;
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw DataError("data file '" + path.string() + "' has no rows");

  const auto k = Eigen::Index(rows.size());
  const auto d = Eigen::Index(header.size() - 1);
  Matrix X(k, d);
  Vector Y(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    Eigen::Index c = 0;
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j == target_idx) {
        Y(i) = rows[std::size_t(i)][j];
      } else {
        X(i, c++) = rows[std::size_t(i)][j];
      }
    }
  }
  return MakeDataset(std::move(X), std::move(Y));
}

// ---------------------------------------------------------------------------
// Configuration

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "csv"
  std::string path;
  std::string target;
  Eigen::Index K = 5000;
  Eigen::Index d = 5;
  double beta_star_norm = 1.0;
  double noise_sd = 0.3;
  double conditioning = 2.0;
  std::uint64_t data_seed = 7;
  SplitFractions split;
  std::uint64_t split_seed = 11;
};

struct PrivacyConfig {
  BudgetMode mode = BudgetMode::kZcdp;
  double epsilon = 1.0;
  double delta = kDefaultConversionDelta;
};

struct BoundsConfig {
  Eigen::Index K = 1000;
  Eigen::Index d = 5;
  BoundConstants constants;
  int T = 10;
  std::optional<double> sigma_dp;  // calibrated from the privacy block if unset
  double beta_star_norm = 1.0;
  double sigma_y = 1.0;
  double beta0_dist_sq = 1.0;
  double l_dp = 1.0;
  std::optional<VarianceInputs> variance;
  int tradeoff_points = 11;
};

struct ValidateConfig {
  int samples = 20000;
  Eigen::Index K = 200;
  Eigen::Index d = 5;
  double sigma_dp = 0.5;
  double beta_norm = 1.0;
  std::uint64_t instance_seed = 3;
  std::vector<std::string> validators;  // empty selects all
};

struct RunConfig {
  std::uint64_t seed = 1;
  int jobs = 1;
  ProtocolParams protocol;
  bool clip_radius_set = false;
  double clip_radius_factor = 10.0;
  PrivacyConfig privacy;
  DataConfig data;
  SweepConfig sweep;
  bool sweep_seeds_set = false;
  int replicates = 5;
  double ridge_gamma = 0.1;
  BoundsConfig bounds;
  ValidateConfig validate;
};

inline const std::vector<std::string>& ValidatorNames() {
  static const std::vector<std::string> names{
      "unbiasedness",     "covariance",   "variance",
      "second_moment",    "centering",    "block_norms",
      "scalar_moments",   "expected_expansion", "phase_c1"};
  return names;
}

namespace internal {

inline void CheckKeys(const Json& j, std::initializer_list<const char*> allowed,
                      const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void Read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline void ReadIndex(const Json& j, const char* key, Eigen::Index& out,
                      const std::string& where) {
  long long v = out;
  Read(j, key, v, where);
  out = Eigen::Index(v);
}

inline BudgetMode ParseBudgetMode(const std::string& s) {
  if (s == "zcdp") return BudgetMode::kZcdp;
  if (s == "eps_delta") return BudgetMode::kEpsDelta;
  throw ConfigError("budget mode must be 'zcdp' or 'eps_delta', got '" + s + "'");
}

inline const char* BudgetModeName(BudgetMode m) {
  return m == BudgetMode::kZcdp ? "zcdp" : "eps_delta";
}

inline void ParseProtocol(const Json& j, RunConfig& c) {
  const std::string w = "protocol";
  CheckKeys(j, {"alpha", "lambda", "omega", "m", "clip_radius",
                "clip_radius_factor", "step", "rounds"},
            w);
  auto& p = c.protocol;
  Read(j, "alpha", p.alpha, w);
  Read(j, "lambda", p.lambda, w);
  Read(j, "omega", p.omega, w);
  Read(j, "m", p.m, w);
  Read(j, "rounds", p.rounds, w);
  Read(j, "clip_radius_factor", c.clip_radius_factor, w);
  if (j.contains("clip_radius")) {
    Read(j, "clip_radius", p.clip_radius, w);
    c.clip_radius_set = true;
  }
  if (j.contains("step")) {
    const Json& s = j.at("step");
    CheckKeys(s, {"kind", "value"}, "protocol.step");
    std::string kind = "adaptive";
    Read(s, "kind", kind, "protocol.step");
    Read(s, "value", p.step.value, "protocol.step");
    if (kind == "adaptive") {
      p.step.kind = StepKind::kAdaptive;
    } else if (kind == "fixed") {
      p.step.kind = StepKind::kFixed;
    } else {
      throw ConfigError("protocol.step.kind must be 'adaptive' or 'fixed'");
    }
  }
}

inline void ParseData(const Json& j, DataConfig& d) {
  const std::string w = "data";
  CheckKeys(j, {"source", "path", "target", "K", "d", "beta_star_norm",
                "noise_sd", "conditioning", "data_seed", "split", "split_seed"},
            w);
  Read(j, "source", d.source, w);
  Read(j, "path", d.path, w);
  Read(j, "target", d.target, w);
  ReadIndex(j, "K", d.K, w);
  ReadIndex(j, "d", d.d, w);
  Read(j, "beta_star_norm", d.beta_star_norm, w);
  Read(j, "noise_sd", d.noise_sd, w);
  Read(j, "conditioning", d.conditioning, w);
  Read(j, "data_seed", d.data_seed, w);
  Read(j, "split_seed", d.split_seed, w);
  if (j.contains("split")) {
    const Json& s = j.at("split");
    CheckKeys(s, {"train", "val", "test"}, "data.split");
    Read(s, "train", d.split.train, "data.split");
    Read(s, "val", d.split.val, "data.split");
    Read(s, "test", d.split.test, "data.split");
  }
  if (d.source != "synthetic" && d.source != "csv") {
    throw ConfigError("data.source must be 'synthetic' or 'csv'");
  }
}

inline void ParseSweep(const Json& j, RunConfig& c) {
  const std::string w = "sweep";
  CheckKeys(j, {"eps_grid", "delta", "rounds", "budget_mode", "methods",
                "c_factors", "ridge_gammas", "clip_cs", "learning_rates",
                "seeds", "replicates", "clip_radius_factor"},
            w);
  auto& s = c.sweep;
  Read(j, "eps_grid", s.eps_grid, w);
  Read(j, "delta", s.delta, w);
  Read(j, "rounds", s.rounds, w);
  Read(j, "c_factors", s.c_factors, w);
  Read(j, "ridge_gammas", s.ridge_gammas, w);
  Read(j, "clip_cs", s.clip_cs, w);
  Read(j, "learning_rates", s.learning_rates, w);
  Read(j, "clip_radius_factor", s.clip_radius_factor, w);
  Read(j, "replicates", c.replicates, w);
  if (j.contains("seeds")) {
    Read(j, "seeds", s.seeds, w);
    c.sweep_seeds_set = true;
  }
  if (j.contains("budget_mode")) {
    std::string m;
    Read(j, "budget_mode", m, w);
    s.budget_mode = ParseBudgetMode(m);
  }
  if (j.contains("methods")) {
    std::vector<std::string> names;
    Read(j, "methods", names, w);
    s.methods.clear();
    for (const auto& n : names) s.methods.push_back(ParseMethod(n));
  }
}

inline void ParseBounds(const Json& j, BoundsConfig& b) {
  const std::string w = "bounds";
  CheckKeys(j, {"K", "d", "B", "R", "M", "T", "sigma_dp", "beta_star_norm",
                "sigma_y", "beta0_dist_sq", "l_dp", "variance_inputs",
                "tradeoff_points"},
            w);
  ReadIndex(j, "K", b.K, w);
  ReadIndex(j, "d", b.d, w);
  Read(j, "B", b.constants.B, w);
  Read(j, "R", b.constants.R, w);
  Read(j, "M", b.constants.M, w);
  Read(j, "T", b.T, w);
  if (j.contains("sigma_dp")) {
    double s = 0.0;
    Read(j, "sigma_dp", s, w);
    b.sigma_dp = s;
  }
  Read(j, "beta_star_norm", b.beta_star_norm, w);
  Read(j, "sigma_y", b.sigma_y, w);
  Read(j, "beta0_dist_sq", b.beta0_dist_sq, w);
  Read(j, "l_dp", b.l_dp, w);
  Read(j, "tradeoff_points", b.tradeoff_points, w);
  if (j.contains("variance_inputs")) {
    const Json& v = j.at("variance_inputs");
    const std::string wv = "bounds.variance_inputs";
    CheckKeys(v, {"S_r_sq", "beta_sigma_rx", "tr_sigma_x", "beta_norm_sq"}, wv);
    VarianceInputs in;
    Read(v, "S_r_sq", in.S_r_sq, wv);
    Read(v, "beta_sigma_rx", in.beta_sigma_rx, wv);
    Read(v, "tr_sigma_x", in.tr_sigma_x, wv);
    Read(v, "beta_norm_sq", in.beta_norm_sq, wv);
    b.variance = in;
  }
}

inline void ParseValidate(const Json& j, ValidateConfig& v) {
  const std::string w = "validate";
  CheckKeys(j, {"samples", "K", "d", "sigma_dp", "beta_norm", "instance_seed",
                "validators"},
            w);
  Read(j, "samples", v.samples, w);
  ReadIndex(j, "K", v.K, w);
  ReadIndex(j, "d", v.d, w);
  Read(j, "sigma_dp", v.sigma_dp, w);
  Read(j, "beta_norm", v.beta_norm, w);
  Read(j, "instance_seed", v.instance_seed, w);
  Read(j, "validators", v.validators, w);
}

}  // namespace internal

/// Parses a config document. Unknown keys anywhere are rejected.
inline RunConfig ParseConfig(const Json& j) {
  internal::CheckKeys(j, {"schema_version", "seed", "jobs", "protocol",
                          "privacy", "data", "sweep", "oneshot", "bounds",
                          "validate"},
                      "config");
  RunConfig c;
  if (j.contains("schema_version")) {
    int v = 0;
    internal::Read(j, "schema_version", v, "config");
    if (v != kSchemaVersion) {
      throw ConfigError("unsupported schema_version " + std::to_string(v));
    }
  }
  internal::Read(j, "seed", c.seed, "config");
  internal::Read(j, "jobs", c.jobs, "config");
  if (j.contains("protocol")) internal::ParseProtocol(j.at("protocol"), c);
  if (j.contains("privacy")) {
    const Json& p = j.at("privacy");
    internal::CheckKeys(p, {"mode", "epsilon", "delta"}, "privacy");
    std::string mode = "zcdp";
    internal::Read(p, "mode", mode, "privacy");
    c.privacy.mode = internal::ParseBudgetMode(mode);
    internal::Read(p, "epsilon", c.privacy.epsilon, "privacy");
    internal::Read(p, "delta", c.privacy.delta, "privacy");
  }
  if (j.contains("data")) internal::ParseData(j.at("data"), c.data);
  if (j.contains("sweep")) internal::ParseSweep(j.at("sweep"), c);
  if (j.contains("oneshot")) {
    internal::CheckKeys(j.at("oneshot"), {"ridge_gamma"}, "oneshot");
    internal::Read(j.at("oneshot"), "ridge_gamma", c.ridge_gamma, "oneshot");
  }
  if (j.contains("bounds")) internal::ParseBounds(j.at("bounds"), c.bounds);
  if (j.contains("validate")) internal::ParseValidate(j.at("validate"), c.validate);
  return c;
}

inline RunConfig LoadConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " +
                      e.what());
  }
  return ParseConfig(j);
}

/// Final checks once command-line overrides have been applied.
inline void FinalizeConfig(RunConfig& c) {
  if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
  if (c.replicates < 1) throw ConfigError("replicates must be >= 1");
  if (!c.sweep_seeds_set) {
    c.sweep.seeds.clear();
    for (int i = 0; i < c.replicates; ++i) c.sweep.seeds.push_back(c.seed + i);
  }
  if (!(c.clip_radius_factor > 0.0)) {
    throw ConfigError("clip_radius_factor must be > 0");
  }
  if (!(c.privacy.epsilon > 0.0)) throw ConfigError("privacy.epsilon must be > 0");
  CheckDelta(c.privacy.delta);
  if (c.validate.samples < 2) throw ConfigError("validate.samples must be >= 2");
  for (const auto& n : c.validate.validators) {
    const auto& all = ValidatorNames();
    if (std::find(all.begin(), all.end(), n) == all.end()) {
      throw ConfigError("unknown validator '" + n + "'");
    }
  }
  c.protocol.Validate();
}

inline Json ProtocolJson(const ProtocolParams& p) {
  Json j;
  j["alpha"] = p.alpha;
  j["lambda"] = p.lambda;
  j["omega"] = p.omega;
  j["m"] = p.m;
  j["clip_radius"] = std::isfinite(p.clip_radius) ? Json(p.clip_radius) : Json();
  j["step"] = {{"kind", p.step.kind == StepKind::kAdaptive ? "adaptive" : "fixed"},
               {"value", p.step.value}};
  j["rounds"] = p.rounds;
  return j;
}

inline Json BudgetJson(const PrivacyBudget& b) {
  return {{"mode", internal::BudgetModeName(b.mode)},
          {"epsilon", b.epsilon},
          {"delta", b.delta},
          {"rounds", b.rounds},
          {"rho_total", b.rho_total},
          {"rho_per_round", b.rho_per_round},
          {"eps_per_round", b.eps_per_round},
          {"delta_per_round", b.delta_per_round},
          {"sensitivity", b.sensitivity},
          {"sigma_dp", b.sigma_dp}};
}

inline Json HyperJson(Method m, const Hyperparams& h) {
  switch (m) {
    case Method::kModulatedIterative:
      return {{"c_factor", h.c_factor}};
    case Method::kModulatedOneShot:
      return {{"ridge_gamma", h.ridge_gamma}};
    case Method::kDpSgd:
      return {{"clip_c", h.clip_c}, {"lr", h.lr}};
  }
  return Json::object();
}

// ---------------------------------------------------------------------------
// Commands

inline Dataset LoadRawData(const DataConfig& d) {
  if (d.source == "csv") {
    if (d.path.empty()) throw ConfigError("csv data source needs a path (--data)");
    if (d.target.empty()) throw ConfigError("csv data source needs --target");
    return LoadCsv(d.path, d.target);
  }
  return GenerateSynthetic(d.K, d.d, d.beta_star_norm, d.noise_sd,
                           d.conditioning, d.data_seed)
      .data;
}

inline DataSplits LoadSplits(const DataConfig& d) {
  return PrepareSplits(LoadRawData(d), d.split, d.split_seed);
}

inline Json DataJson(const DataConfig& d, const DataSplits& s) {
  Json j{{"source", d.source},
         {"train_rows", s.train.num_clients()},
         {"val_rows", s.val.num_clients()},
         {"test_rows", s.test.num_clients()},
         {"d", s.train.dim()},
         {"norm_divisor", FeatureDivisor(s.train)},
         {"split_seed", d.split_seed}};
  if (d.source == "csv") {
    j["path"] = d.path;
    j["target"] = d.target;
  } else {
    j["K"] = d.K;
    j["beta_star_norm"] = d.beta_star_norm;
    j["noise_sd"] = d.noise_sd;
    j["conditioning"] = d.conditioning;
    j["data_seed"] = d.data_seed;
  }
  return j;
}

inline std::filesystem::path PrepareOutDir(const std::filesystem::path& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory '" + out.string() + "'");
  return out;
}

inline int CmdSimulate(RunConfig cfg, const std::filesystem::path& out) {
  const DataSplits s = LoadSplits(cfg.data);
  ProtocolParams p = cfg.protocol;
  if (!cfg.clip_radius_set) {
    p.clip_radius = cfg.clip_radius_factor * FeatureDivisor(s.train);
  }
  p.Validate(s.train.dim());
  const PrivacyBudget budget = Calibrate(cfg.privacy.mode, cfg.privacy.epsilon,
                                         cfg.privacy.delta, p.rounds,
                                         LipschitzConstant(p));
  JsonlWriter w(PrepareOutDir(out) / "results.jsonl");
  w.Add(Record("run_config", {{"command", "simulate"},
                              {"seed", cfg.seed},
                              {"protocol", ProtocolJson(p)},
                              {"budget", BudgetJson(budget)},
                              {"data", DataJson(cfg.data, s)}}));
  ModelState state{Vector::Zero(s.train.dim()), 0};
  PrivacyLedger ledger;
  for (int t = 0; t < p.rounds; ++t) {
    RoundOutcome o = RunRound(state, s.train, p, budget, cfg.seed, ledger, cfg.jobs);
    ledger.CheckWithin(budget);
    w.Add(Record("round", {{"round", o.record.round},
                           {"grad_norm", o.record.moments.G.norm()},
                           {"step", o.record.step},
                           {"beta_hash", Fnv1aHash(o.record.beta_after)},
                           {"beta_norm", o.record.beta_after.norm()},
                           {"rho_spent", o.record.rho_spent},
                           {"rho_cumulative", o.record.rho_cumulative},
                           {"ledger_entries", ledger.size()},
                           {"ledger_epsilon", ledger.epsilon(budget.delta)}}));
    state = std::move(o.state);
  }
  const Vector ols = Ols(s.train);
  w.Add(Record("final", {{"beta", ToJson(state.beta)},
                         {"beta_hash", Fnv1aHash(state.beta)},
                         {"train_r2", RSquared(state.beta, s.train)},
                         {"val_r2", RSquared(state.beta, s.val)},
                         {"test_r2", RSquared(state.beta, s.test)},
                         {"ols_test_r2", RSquared(ols, s.test)},
                         {"ledger_entries", ledger.size()},
                         {"declared_epsilon", budget.epsilon},
                         {"ledger_epsilon", ledger.epsilon(budget.delta)}}));
  w.Close();
  std::cout << "simulate: " << p.rounds << " rounds, test R^2 "
            << RSquared(state.beta, s.test) << ", results in " << out.string()
            << "\n";
  return kExitOk;
}

inline int CmdOneShot(RunConfig cfg, const std::filesystem::path& out) {
  const DataSplits s = LoadSplits(cfg.data);
  ProtocolParams p = cfg.protocol;
  p.rounds = 1;
  p.Validate(s.train.dim());
  const PrivacyBudget budget = Calibrate(cfg.privacy.mode, cfg.privacy.epsilon,
                                         cfg.privacy.delta, 1,
                                         LipschitzConstant(p));
  RngStream vrng = OrthonormalStream(cfg.seed, 0);
  const OrthonormalSet V = MakeOrthonormalSet(s.train.dim(), p.m, nullptr, vrng);
  const PayloadBatch batch = SimulateClients(s.train, V, p, budget.sigma_dp,
                                             cfg.seed, 0, nullptr, cfg.jobs);
  PrivacyLedger ledger;
  ledger.Record(0, budget);
  ledger.CheckWithin(budget);
  const OneShotResult r =
      OneShotEstimate(batch, V, p, budget.sigma_dp, cfg.ridge_gamma);
  JsonlWriter w(PrepareOutDir(out) / "results.jsonl");
  w.Add(Record("run_config", {{"command", "oneshot"},
                              {"seed", cfg.seed},
                              {"protocol", ProtocolJson(p)},
                              {"ridge_gamma", cfg.ridge_gamma},
                              {"budget", BudgetJson(budget)},
                              {"data", DataJson(cfg.data, s)}}));
  w.Add(Record("oneshot", {{"beta", ToJson(r.beta_hat)},
                           {"beta_hash", Fnv1aHash(r.beta_hat)},
                           {"used_least_squares", r.used_least_squares},
                           {"val_r2", RSquared(r.beta_hat, s.val)},
                           {"test_r2", RSquared(r.beta_hat, s.test)},
                           {"ols_test_r2", RSquared(Ols(s.train), s.test)},
                           {"ledger_entries", ledger.size()},
                           {"declared_epsilon", budget.epsilon},
                           {"ledger_epsilon", ledger.epsilon(budget.delta)}}));
  w.Close();
  std::cout << "oneshot: test R^2 " << RSquared(r.beta_hat, s.test)
            << ", results in " << out.string() << "\n";
  return kExitOk;
}

/// Writes one "epsilon,mean_r2,sd_r2,method" file per method.
inline void WritePlotData(const SweepResult& r, const std::filesystem::path& dir) {
  for (Method m : r.methods) {
    std::ofstream f(dir / (std::string("plot_") + MethodName(m) + ".csv"),
                    std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write plot data in " + dir.string());
    f << "epsilon,mean_r2,sd_r2,method\n";
    f << std::setprecision(17);
    for (double e : r.eps_grid) {
      double sum = 0.0, sq = 0.0;
      int n = 0;
      for (const auto& row : r.rows) {
        if (row.method == m && row.epsilon == e) {
          sum += row.test_r2;
          sq += row.test_r2 * row.test_r2;
          ++n;
        }
      }
      const double mean = sum / n;
      const double sd = n > 1 ? std::sqrt(std::max(0.0, (sq - n * mean * mean) / (n - 1))) : 0.0;
      f << e << ',' << mean << ',' << sd << ',' << MethodName(m) << '\n';
    }
  }
}

inline Json SweepConfigJson(const SweepConfig& s) {
  Json methods = Json::array();
  for (Method m : s.methods) methods.push_back(MethodName(m));
  return {{"eps_grid", s.eps_grid},
          {"delta", s.delta},
          {"rounds", s.rounds},
          {"budget_mode", internal::BudgetModeName(s.budget_mode)},
          {"methods", methods},
          {"protocol", ProtocolJson(s.protocol)},
          {"clip_radius_factor", s.clip_radius_factor},
          {"c_factors", s.c_factors},
          {"ridge_gammas", s.ridge_gammas},
          {"clip_cs", s.clip_cs},
          {"learning_rates", s.learning_rates},
          {"seeds", s.seeds}};
}

inline int CmdSweep(RunConfig cfg, const std::filesystem::path& out) {
  const DataSplits s = LoadSplits(cfg.data);
  cfg.sweep.protocol = cfg.protocol;
  cfg.sweep.Validate();
  const SweepResult r = RunSweep(cfg.sweep, s, cfg.jobs);
  const auto dir = PrepareOutDir(out);
  JsonlWriter w(dir / "results.jsonl");
  JsonlWriter timing(dir / "timing.jsonl");
  w.Add(Record("run_config", {{"command", "sweep"},
                              {"sweep", SweepConfigJson(cfg.sweep)},
                              {"data", DataJson(cfg.data, s)}}));
  w.Add(Record("ols_reference", {{"test_r2", r.ols_test_r2}}));
  for (const auto& t : r.tuning) {
    w.Add(Record("tuning", {{"method", MethodName(t.method)},
                            {"hyperparams", HyperJson(t.method, t.hyper)},
                            {"mean_val_r2", t.mean_val_r2}}));
  }
  for (const auto& row : r.rows) {
    if (row.ledger_eps > row.epsilon + 1e-9) {
      throw AccountingError("sweep row exceeds its declared epsilon");
    }
    w.Add(Record("cell", {{"method", MethodName(row.method)},
                          {"epsilon", row.epsilon},
                          {"seed", row.seed},
                          {"hyperparams", HyperJson(row.method, row.hyper)},
                          {"val_r2", row.val_r2},
                          {"test_r2", row.test_r2},
                          {"sigma_dp", row.sigma_dp},
                          {"ledger_entries", row.ledger_entries},
                          {"ledger_rho", row.ledger_rho},
                          {"ledger_epsilon", row.ledger_eps}}));
    timing.Add(Record("cell_timing", {{"method", MethodName(row.method)},
                                      {"epsilon", row.epsilon},
                                      {"seed", row.seed},
                                      {"wall_seconds", row.wall_seconds}}));
  }
  const bool both =
      std::count(r.methods.begin(), r.methods.end(), Method::kModulatedIterative) &&
      std::count(r.methods.begin(), r.methods.end(), Method::kModulatedOneShot);
  if (both) {
    const CrossoverReport c = MakeCrossoverReport(r);
    w.Add(Record("crossover", {{"eps", c.eps},
                               {"median_oneshot", c.median_oneshot},
                               {"median_iterative", c.median_iterative},
                               {"dominant", c.dominant},
                               {"crossover", c.crossover},
                               {"crossover_eps", c.crossover_eps
                                                     ? Json(*c.crossover_eps)
                                                     : Json()},
                               {"summary", c.summary}}));
    std::cout << "crossover: " << c.summary << "\n";
  }
  w.Close();
  timing.Close();
  WritePlotData(r, dir);
  std::cout << "sweep: " << r.rows.size() << " cells, OLS test R^2 "
            << r.ols_test_r2 << ", results in " << out.string() << "\n";
  return kExitOk;
}

inline int CmdBounds(RunConfig cfg, const std::filesystem::path& out) {
  const auto& b = cfg.bounds;
  if (b.K < 1 || b.d < 1) throw ConfigError("bounds.K and bounds.d must be >= 1");
  if (b.tradeoff_points < 2) throw ConfigError("bounds.tradeoff_points must be >= 2");
  const ProtocolParams& p = cfg.protocol;
  p.Validate(b.d);
  const double L = LipschitzConstant(p);
  const double sigma =
      b.sigma_dp ? *b.sigma_dp
                 : Calibrate(cfg.privacy.mode, cfg.privacy.epsilon,
                             cfg.privacy.delta, b.T, L)
                       .sigma_dp;
  if (!(sigma > 0.0)) throw ConfigError("sigma_dp must be > 0");

  Json payload;
  payload["sensitivity"] = L;
  payload["sigma_dp"] = sigma;
  const double ubound = UniformVarianceBound(b.constants, p, sigma, b.K, b.d);
  payload["uniform_variance_bound"] = ubound;
  if (b.variance) {
    VarianceInputs in = *b.variance;
    in.K = b.K;
    in.d = b.d;
    in.alpha = p.alpha;
    in.lambda = p.lambda;
    in.sigma_dp = sigma;
    payload["gradient_variance"] = GradientVariance(in);
  }
  payload["convergence_bound"] =
      ConvergenceBound(b.l_dp, b.beta0_dist_sq, b.T, ubound, b.K);

  ReconstructionContext ctx;
  ctx.params = p;
  ctx.sigma_dp = sigma;
  ctx.sigma_y = b.sigma_y;
  ctx.beta_star = Vector::Zero(b.d);
  ctx.v = Vector::Zero(b.d);
  ctx.v(0) = 1.0;
  if (b.d > 1) {
    ctx.beta_star(1) = b.beta_star_norm;
  } else {
    ctx.beta_star(0) = b.beta_star_norm;
  }
  payload["crb_leakage_term"] =
      b.beta_star_norm * b.beta_star_norm / (double(b.d) * b.sigma_y * b.sigma_y);
  payload["crb_phase_averaged"] = CrbPhaseAveraged(ctx);
  Json crb = Json::array();
  const Vector x0 = Vector::Zero(b.d);
  for (int q = 0; q < 4; ++q) {
    const double theta = 0.5 * std::numbers::pi * q;
    crb.push_back({{"theta", theta}, {"crb", CrbConditional(x0, theta, ctx)}});
  }
  payload["crb_conditional"] = crb;
  Json curve = Json::array();
  for (int i = 0; i < b.tradeoff_points; ++i) {
    const double a = double(i) / double(b.tradeoff_points - 1);
    curve.push_back({{"alpha", a},
                     {"f", TradeoffCurve(cfg.privacy.epsilon, cfg.privacy.delta, a)}});
  }
  payload["tradeoff_curve"] = curve;

  JsonlWriter w(PrepareOutDir(out) / "results.jsonl");
  w.Add(Record("run_config", {{"command", "bounds"},
                              {"protocol", ProtocolJson(p)},
                              {"K", b.K},
                              {"d", b.d},
                              {"T", b.T},
                              {"epsilon", cfg.privacy.epsilon},
                              {"delta", cfg.privacy.delta}}));
  w.Add(Record("bounds", payload));
  w.Close();

  auto line = [](const std::string& k, double v) {
    std::cout << std::left << std::setw(32) << k << std::setprecision(10) << v
              << "\n";
  };
  line("sensitivity", L);
  line("sigma_dp", sigma);
  if (b.variance) line("gradient_variance", payload["gradient_variance"]);
  line("uniform_variance_bound", ubound);
  line("convergence_bound", payload["convergence_bound"]);
  line("crb_phase_averaged", payload["crb_phase_averaged"]);
  line("crb_leakage_term", payload["crb_leakage_term"]);
  for (const auto& c : crb) {
    line("crb_conditional(theta=" + std::to_string(double(c["theta"])).substr(0, 6) + ")",
         c["crb"]);
  }
  for (const auto& c : curve) {
    line("tradeoff f(" + std::to_string(double(c["alpha"])).substr(0, 4) + ")", c["f"]);
  }
  return kExitOk;
}

inline Json ValidationJson(const ValidationRecord& r) {
  return {{"name", r.name},
          {"closed_form", r.closed_form},
          {"estimate", r.estimate},
          {"std_error", r.std_error},
          {"tolerance", r.tolerance},
          {"tolerance_kind", r.absolute ? "absolute" : "standard_errors"},
          {"passed", r.passed}};
}

/// Runs the selected Monte-Carlo validators on a random instance.
inline std::vector<std::pair<std::string, std::vector<ValidationRecord>>>
RunValidators(const RunConfig& cfg) {
  const auto& v = cfg.validate;
  ProtocolParams p = cfg.protocol;
  p.Validate(v.d, true);
  const ProtocolInstance inst =
      RandomInstance(v.K, v.d, p, v.sigma_dp, v.instance_seed, v.beta_norm);
  ProtocolParams p1 = p;
  p1.m = 1;
  const ProtocolInstance inst1 =
      RandomInstance(v.K, v.d, p1, v.sigma_dp, v.instance_seed, v.beta_norm);
  std::vector<std::string> names =
      v.validators.empty() ? ValidatorNames() : v.validators;
  const int N = v.samples;
  const std::uint64_t seed = cfg.seed;

  std::optional<GradientMonteCarlo> mc;
  auto gradient_mc = [&]() -> const GradientMonteCarlo& {
    if (!mc) mc = RunGradientMonteCarlo(inst, N, seed);
    return *mc;
  };
  std::vector<std::pair<std::string, std::vector<ValidationRecord>>> out;
  for (const auto& n : names) {
    std::vector<ValidationRecord> recs;
    if (n == "unbiasedness") {
      recs = UnbiasednessRecords(gradient_mc(), inst);
    } else if (n == "covariance") {
      recs = CovarianceRecords(gradient_mc(), inst);
    } else if (n == "variance") {
      recs = {VarianceRecord(gradient_mc(), inst)};
    } else if (n == "second_moment") {
      recs = ValidateSecondMoment(inst.data.X.row(0).transpose(), inst.V, p,
                                  v.sigma_dp, N, seed);
    } else if (n == "centering") {
      recs = {ValidateCentering(inst1, std::min(N, 1000), seed)};
    } else if (n == "block_norms") {
      recs = ValidateBlockNorms(inst1, N, seed);
    } else if (n == "scalar_moments") {
      recs = ValidateScalarMoments(v.sigma_dp, inst.beta, N, seed);
    } else if (n == "expected_expansion") {
      recs = {ValidateExpectedExpansion(inst1.data.X.row(0).transpose(),
                                        inst1.data.X.row(1).transpose(),
                                        inst1.V.column(0), p1, N, seed)};
    } else if (n == "phase_c1") {
      recs = {ValidatePhaseAveragedC1(0.3, p, N, seed)};
    } else {
      throw ConfigError("unknown validator '" + n + "'");
    }
    out.emplace_back(n, std::move(recs));
  }
  return out;
}

inline int CmdValidate(RunConfig cfg, const std::filesystem::path& out) {
  const auto results = RunValidators(cfg);
  JsonlWriter w(PrepareOutDir(out) / "results.jsonl");
  w.Add(Record("run_config", {{"command", "validate"},
                              {"seed", cfg.seed},
                              {"samples", cfg.validate.samples},
                              {"K", cfg.validate.K},
                              {"d", cfg.validate.d},
                              {"sigma_dp", cfg.validate.sigma_dp},
                              {"protocol", ProtocolJson(cfg.protocol)}}));
  bool all = true;
  for (const auto& [name, recs] : results) {
    const bool ok = AllPassed(recs);
    all = all && ok;
    for (const auto& r : recs) {
      Json j = ValidationJson(r);
      j["validator"] = name;
      w.Add(Record("validation", j));
    }
    std::cout << (ok ? "PASS " : "FAIL ") << name << " (" << recs.size()
              << " checks)\n";
  }
  w.Add(Record("validation_summary", {{"passed", all}}));
  w.Close();
  return all ? kExitOk : kExitValidationFailed;
}

/// Output directory: --out, else $MODFED_OUT_DIR, else ./modfed_out.
inline std::filesystem::path ResolveOutDir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MODFED_OUT_DIR"); env && *env) return env;
  return "modfed_out";
}

/// Entry point of the `modfed` binary. Returns the process exit code.
inline int RunCli(int argc, const char* const* argv) {
  CLI::App app{"Differentially private federated linear regression with "
               "modulated client releases"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_flag, data_path, target;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs, rounds, samples;
  std::vector<std::string> validators;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "base random seed");
  app.add_option("--out", out_flag, "output directory");
  app.add_option("--data", data_path, "CSV dataset (header row, numeric cells)");
  app.add_option("--target", target, "target column of the CSV dataset");
  app.add_option("--jobs", jobs, "worker threads");
  app.add_option("--rounds", rounds, "protocol rounds T (simulate)");
  app.add_option("--validator", validators, "validator to run (repeatable)");
  app.add_option("--samples", samples, "Monte-Carlo samples (validate)");
  auto* simulate = app.add_subcommand("simulate", "run the iterative protocol");
  auto* sweep = app.add_subcommand("sweep", "privacy sweep with joint tuning");
  auto* bounds = app.add_subcommand("bounds", "evaluate analytic bounds");
  auto* validate = app.add_subcommand("validate", "Monte-Carlo validators");
  auto* oneshot = app.add_subcommand("oneshot", "one-shot moment estimator");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : LoadConfig(config_path);
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    if (rounds) cfg.protocol.rounds = *rounds;
    if (samples) cfg.validate.samples = *samples;
    if (!validators.empty()) cfg.validate.validators = validators;
    if (!data_path.empty()) {
      cfg.data.source = "csv";
      cfg.data.path = data_path;
    }
    if (!target.empty()) cfg.data.target = target;
    FinalizeConfig(cfg);
    const auto out = ResolveOutDir(out_flag);
    if (simulate->parsed()) return CmdSimulate(cfg, out);
    if (sweep->parsed()) return CmdSweep(cfg, out);
    if (bounds->parsed()) return CmdBounds(cfg, out);
    if (validate->parsed()) return CmdValidate(cfg, out);
    if (oneshot->parsed()) return CmdOneShot(cfg, out);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const AccountingError& e) {
    std::cerr << "accounting error: " << e.what() << "\n";
    return kExitAccounting;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace modfed
