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

#include "fairfed/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <thread>

#include "fairfed/errors.hpp"
#include "fairfed/privacy.hpp"

namespace fairfed {

namespace {

double clip_rating(double y) { return std::clamp(y, 1.0, 5.0); }

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> cursor{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= count) return;
        body(i);
      }
    });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace

EvalReport evaluate(const ModelState& params, const RatingTable& eval_view,
                    const FederatedData& data, const ModelConfig& model_config,
                    int alpha, const std::vector<Eigen::MatrixXd>* neighbor_features,
                    int threads) {
  EvalReport report;

  struct PerUser {
    UserId user = 0;
    double sumsq = 0.0;
    std::size_t count = 0;
    bool skipped = false;
  };
  std::vector<PerUser> rows(data.users.size());

  parallel_for(data.users.size(), threads, [&](std::size_t u) {
    PerUser& row = rows[u];
    row.user = data.users.id(u);
    const auto eval_records = eval_view.user_records(row.user);
    if (eval_records.empty()) {
      row.skipped = true;
      return;
    }
    const PreparedClient& client = data.clients[u];
    if (client.items.empty()) {
      row.skipped = true;  // nothing to build a user representation from
      return;
    }

    LocalSubgraph subgraph;
    subgraph.user = client.user;
    subgraph.items = client.items;
    subgraph.ratings = client.ratings;
    if (neighbor_features != nullptr && (*neighbor_features)[u].size() > 0) {
      subgraph.neighbor_embeddings = (*neighbor_features)[u];
    } else {
      subgraph.neighbor_embeddings.resize(model_config.hidden_dim, 0);
    }
    const ClientGraph graph =
        ClientGraph::build(subgraph, data.users, data.items, model_config.self_loops);
    const ForwardTrace trace = forward(graph, params, model_config, nullptr);

    for (const RatingRecord& record : eval_records) {
      const std::size_t item_index = data.items.index(record.item);
      const double raw = predict_for_candidate(
          trace, params.item_emb.col(static_cast<Eigen::Index>(item_index)), params,
          model_config);
      const double residual = clip_rating(raw) - record.rating;
      row.sumsq += residual * residual;
      row.count += 1;
    }
  });

  double total_sumsq = 0.0;
  std::size_t total_count = 0;
  for (const PerUser& row : rows) {
    if (row.skipped || row.count == 0) {
      if (row.skipped) ++report.skipped_users;
      continue;
    }
    const double user_rmse = std::sqrt(row.sumsq / static_cast<double>(row.count));
    report.per_user_rmse[row.user] = user_rmse;
    total_sumsq += row.sumsq;
    total_count += row.count;
    const auto g = static_cast<std::size_t>(data.groups.group_of(row.user));
    report.group_sumsq[g] += row.sumsq;
    report.group_counts[g] += row.count;
  }
  if (total_count == 0) throw EvalError("evaluation split holds no usable ratings");

  report.rmse = std::sqrt(total_sumsq / static_cast<double>(total_count));
  report.rating_count = total_count;

  double mean_s0 = 0.0, mean_s1 = 0.0;
  std::size_t n_s0 = 0, n_s1 = 0;
  for (const auto& [user, rmse] : report.per_user_rmse) {
    if (data.groups.group_of(user) == Group::kS0) {
      mean_s0 += rmse;
      ++n_s0;
    } else {
      mean_s1 += rmse;
      ++n_s1;
    }
  }
  report.rmse_s0 = n_s0 > 0 ? mean_s0 / static_cast<double>(n_s0) : 0.0;
  report.rmse_s1 = n_s1 > 0 ? mean_s1 / static_cast<double>(n_s1) : 0.0;
  report.disparity = disparity(report.per_user_rmse, data.groups, alpha);
  return report;
}

SweepResult sweep(const ExperimentConfig& base, const std::vector<double>& betas,
                  const FederatedData& data) {
  if (betas.empty()) throw ConfigError("sweep requires at least one beta value");

  SweepResult result;
  result.rows.reserve(betas.size());
  double base_rmse = std::numeric_limits<double>::quiet_NaN();
  double base_disparity = std::numeric_limits<double>::quiet_NaN();

  for (const double beta : betas) {
    SweepRow row;
    row.beta = beta;
    std::vector<double> val_disparity;
    try {
      ExperimentConfig config = base;
      config.fairness.beta = beta;
      const TrainResult trained = train(config, data);
      const EvalReport report =
          evaluate(trained.state, data.splits.test, data, config.model,
                   config.fairness.alpha, &trained.neighbor_features, config.threads);
      row.rmse = report.rmse;
      row.disparity = report.disparity;
      row.epsilon = privacy_budget(config.ldp);
      for (const RoundRecord& r : trained.history) {
        val_disparity.push_back(r.validation_disparity);
      }
      if (std::isnan(base_rmse)) {
        base_rmse = row.rmse;
        base_disparity = row.disparity;
      }
      row.pct_change_rmse = 100.0 * (row.rmse - base_rmse) / base_rmse;
      row.pct_change_disparity = 100.0 * (row.disparity - base_disparity) / base_disparity;
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    result.rows.push_back(row);
    result.validation_disparity.push_back(std::move(val_disparity));
  }
  return result;
}

}  // namespace fairfed
