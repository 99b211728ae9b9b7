// Copyright 2026 The fairfed authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fairfed/eval.hpp"
#include "fairfed/federation.hpp"

namespace fairfed {

inline constexpr const char* kCodeVersion = "0.1.0";

struct PrepareOptions {
  std::string dataset = "ml-100k";  // ml-100k | ml-1m | amazon-movies
  std::filesystem::path data_dir;   // directory holding the raw files
  std::filesystem::path out_dir;
  std::size_t ncore = 20;
  std::string attribute = "gender";
  double activity_quantile = 0.5;
  std::string amazon_columns = "item,user,rating,timestamp";
};

struct PrepareStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t ratings = 0;
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
  std::size_t s0 = 0;
  std::size_t s1 = 0;
  std::uint64_t fingerprint = 0;
};

// Loads the raw dataset, applies the n-core filter, the temporal split and
// the sensitive assignment, and materializes train/validation/test CSVs plus
// groups.csv and meta.json under out_dir. Reruns on unchanged inputs are
// byte-identical.
PrepareStats prepare_dataset(const PrepareOptions& options);

struct PreparedData {
  SplitTable splits;
  SensitiveAssignment groups;
  std::uint64_t fingerprint = 0;
  std::size_t record_count = 0;
  std::string dataset;
  std::string attribute;
};

PreparedData load_prepared(const std::filesystem::path& dir);

// Resolved run identity: config, dataset fingerprint, code version, seed.
// The manifest hash is embedded in every emitted CSV row.
struct RunManifest {
  ExperimentConfig config;
  std::uint64_t dataset_fingerprint = 0;
  std::size_t record_count = 0;
  std::string code_version = kCodeVersion;
  std::string out_dir;

  std::uint64_t hash() const;
  std::string hash_hex() const;
  std::string to_json() const;
};

struct RunOutputs {
  RunManifest manifest;
  std::vector<RoundRecord> history;
  EvalReport test_report;
  GroupStats final_stats;
  double epsilon = std::numeric_limits<double>::infinity();
};

// Full training run: writes rounds.csv, fairness.csv, summary.csv,
// manifest.json and checkpoint.bin under out_dir. summary.csv is
// byte-identical across runs with the same manifest on the same build.
RunOutputs run_training(const ExperimentConfig& config, const PreparedData& prepared,
                        const std::filesystem::path& out_dir);

// Beta sweep: table1.csv + figure3.csv.
void run_beta_sweep(const ExperimentConfig& base, const PreparedData& prepared,
                    const std::vector<double>& betas,
                    const std::filesystem::path& out_dir);

// (delta, lambda) grid at fixed beta: ldp_grid.csv with the privacy budget
// per cell.
void run_ldp_grid(const ExperimentConfig& base, const PreparedData& prepared,
                  const std::vector<double>& deltas, const std::vector<double>& lambdas,
                  const std::filesystem::path& out_dir);

// Self-check suites behind `verify`: gradient finite differences, the n-core
// and expansion oracles, noise statistics and zero-noise stats exactness.
// `inject_gradient_bug` deliberately corrupts the gradient under test so the
// harness itself can be validated.
struct VerifySuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<VerifySuiteResult> run_verify(std::size_t seeds, bool inject_gradient_bug);

}  // namespace fairfed
