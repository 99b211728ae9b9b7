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

#include <map>
#include <optional>
#include <vector>

#include "fairfed/federation.hpp"

namespace fairfed {

// Evaluation metric: per-user RMSE over the split, predictions clipped to the
// 1-5 rating scale. Disparity is Eq. 3 over group means of per-user RMSE and
// shares the fairness module's implementation.
struct EvalReport {
  double rmse = 0.0;           // pooled over all eval ratings
  double rmse_s0 = 0.0;        // group mean of per-user RMSE
  double rmse_s1 = 0.0;
  double disparity = 0.0;
  std::map<UserId, double> per_user_rmse;
  std::size_t rating_count = 0;
  std::size_t skipped_users = 0;  // users with no eval ratings
  double group_sumsq[2] = {0.0, 0.0};
  std::size_t group_counts[2] = {0, 0};
};

// Pure function of (params, split, groups): user representations come from
// eval-mode forwards over each client's train graph (plus any expansion
// neighbors), candidate items are attached as leaves.
EvalReport evaluate(const ModelState& params, const RatingTable& eval_view,
                    const FederatedData& data, const ModelConfig& model_config,
                    int alpha,
                    const std::vector<Eigen::MatrixXd>* neighbor_features = nullptr,
                    int threads = 0);

struct SweepRow {
  double beta = 0.0;
  double rmse = 0.0;
  double disparity = 0.0;
  double pct_change_rmse = 0.0;       // vs the beta = 0 row
  double pct_change_disparity = 0.0;
  double epsilon = std::numeric_limits<double>::infinity();
  bool failed = false;
  std::string error;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  // Per beta: validation disparity per epoch, for the disparity-vs-epoch plot.
  std::vector<std::vector<double>> validation_disparity;
};

// One full train+evaluate per beta, shared seed. A failed cell is marked and
// the sweep continues.
SweepResult sweep(const ExperimentConfig& base, const std::vector<double>& betas,
                  const FederatedData& data);

}  // namespace fairfed
