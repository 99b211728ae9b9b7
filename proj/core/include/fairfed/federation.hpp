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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fairfed/data.hpp"
#include "fairfed/expansion.hpp"
#include "fairfed/fairness.hpp"
#include "fairfed/model.hpp"
#include "fairfed/privacy.hpp"

namespace fairfed {

// Every hyperparameter of one training run. Flag names in the CLI mirror the
// member names one to one.
struct ExperimentConfig {
  std::string dataset = "ml-100k";
  std::string attribute = "gender";

  double eta = 0.01;          // learning rate
  double batch_dropout = 0.1; // K: fraction of users excluded per round
  std::size_t epochs = 30;
  std::uint64_t seed = 7;
  bool sample_once = false;   // sample U_K once before the loop instead of per round
  bool early_stop = false;    // stop when validation RMSE stalls
  std::size_t patience = 5;
  int threads = 0;            // 0 = hardware concurrency
  std::size_t neighbor_cap = 32;
  bool expansion = true;
  bool eval_test_each_epoch = false;

  ModelConfig model;
  FairnessConfig fairness;
  LdpConfig ldp;

  void validate(std::size_t num_users) const;
};

struct RoundRecord {
  std::size_t epoch = 0;
  double train_rmse = 0.0;
  double validation_rmse = 0.0;
  double validation_disparity = 0.0;
  double p = 1.0;
  double q = 1.0;
  double test_disparity = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
};

// One user's immutable training shard.
struct PreparedClient {
  UserId user = 0;
  std::vector<ItemId> items;
  std::vector<double> ratings;
};

// Server-side immutable view of the prepared dataset: id vocabularies over
// the full filtered table plus the per-user train shards that seed clients.
struct FederatedData {
  SplitTable splits;
  SensitiveAssignment groups;
  IdIndex users;
  IdIndex items;
  std::vector<PreparedClient> clients;  // aligned with users

  static FederatedData build(SplitTable splits, SensitiveAssignment groups);
};

// Uniform sample without replacement of round((1-K)*|U|) users, at least 1.
std::vector<std::size_t> sample_users(std::size_t num_users, double batch_dropout,
                                      Rng& rng);

// What a client uploads after its local round: its own updated embedding, the
// updated embeddings of items it touched, and the shared tensors.
struct ClientUpdate {
  std::size_t user_index = 0;
  Eigen::VectorXd user_embedding;
  std::vector<std::pair<std::size_t, Eigen::VectorXd>> item_embeddings;
  std::vector<Eigen::MatrixXd> theta;
  std::vector<Eigen::VectorXd> attn;
  double weight = 0.0;  // m_u, the client's train-set size
};

struct ClientRoundResult {
  ClientUpdate update;
  StatsContribution contribution;
  double utility_loss = 0.0;  // L_util before the update step
  double scale = 1.0;         // the L that multiplied the gradient
};

// One client's local round: expansion-provided neighbors in, forward /
// backward, Eq.-7 gradient scaling, LDP release, one local SGD step, and the
// noised group-stats contribution.
ClientRoundResult client_round(const PreparedClient& client,
                               const Eigen::MatrixXd* neighbor_embeddings,
                               const ModelState& broadcast, const GroupStats& stats,
                               const ExperimentConfig& config,
                               const FederatedData& data, std::size_t epoch);

// FedAvg-style aggregation: shared tensors are weighted means with weights
// proportional to m_u; item embeddings average only over clients that touched
// the item; each user's own embedding comes solely from its owner.
ModelState aggregate_params(const ModelState& broadcast,
                            const std::vector<ClientUpdate>& updates);

struct TrainResult {
  ModelState state;
  std::vector<RoundRecord> history;
  GroupStats final_stats;
  // Post-training per-user neighbor features (for evaluation parity with the
  // graphs clients actually trained on). Indexed by dense user index.
  std::vector<Eigen::MatrixXd> neighbor_features;
};

TrainResult train(const ExperimentConfig& config, const FederatedData& data);

}  // namespace fairfed
