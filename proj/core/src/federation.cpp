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

#include "fairfed/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <set>
#include <thread>
#include <unordered_map>

#include "fairfed/errors.hpp"
#include "fairfed/eval.hpp"

namespace fairfed {

void ExperimentConfig::validate(std::size_t num_users) const {
  if (eta < 0.0) throw ConfigError("learning rate eta must be >= 0");
  if (batch_dropout < 0.0 || batch_dropout >= 1.0) {
    throw ConfigError("batch dropout K must lie in [0,1)");
  }
  if (model.hidden_dim < 1) throw ConfigError("hidden dimension must be >= 1");
  if (model.layers < 1) throw ConfigError("layer count must be >= 1");
  if (model.dropout < 0.0 || model.dropout >= 1.0) {
    throw ConfigError("model dropout must lie in [0,1)");
  }
  fairness.validate();
  ldp.validate();
  if (num_users > 0) {
    const auto sampled = static_cast<std::size_t>(
        std::llround((1.0 - batch_dropout) * static_cast<double>(num_users)));
    if (std::max<std::size_t>(sampled, 1) < 1) {
      throw ConfigError("batch dropout leaves no sampled users");
    }
  }
}

FederatedData FederatedData::build(SplitTable splits, SensitiveAssignment groups) {
  FederatedData data;
  data.splits = std::move(splits);
  data.groups = std::move(groups);

  data.users = IdIndex(data.splits.train.users());

  std::set<ItemId> item_union;
  for (const RatingTable* table :
       {&data.splits.train, &data.splits.validation, &data.splits.test}) {
    for (const ItemId item : table->items()) item_union.insert(item);
  }
  data.items = IdIndex(std::vector<ItemId>(item_union.begin(), item_union.end()));

  data.clients.resize(data.users.size());
  for (std::size_t u = 0; u < data.users.size(); ++u) {
    PreparedClient& client = data.clients[u];
    client.user = data.users.id(u);
    for (const RatingRecord& r : data.splits.train.user_records(client.user)) {
      client.items.push_back(r.item);
      client.ratings.push_back(r.rating);
    }
  }
  return data;
}

std::vector<std::size_t> sample_users(std::size_t num_users, double batch_dropout,
                                      Rng& rng) {
  if (batch_dropout < 0.0 || batch_dropout >= 1.0) {
    throw ConfigError("batch dropout K must lie in [0,1)");
  }
  if (num_users == 0) throw ConfigError("cannot sample from zero users");
  auto count = static_cast<std::size_t>(
      std::llround((1.0 - batch_dropout) * static_cast<double>(num_users)));
  count = std::clamp<std::size_t>(count, 1, num_users);
  std::vector<std::size_t> sampled = rng.sample_without_replacement(num_users, count);
  std::sort(sampled.begin(), sampled.end());
  return sampled;
}

ClientRoundResult client_round(const PreparedClient& client,
                               const Eigen::MatrixXd* neighbor_embeddings,
                               const ModelState& broadcast, const GroupStats& stats,
                               const ExperimentConfig& config,
                               const FederatedData& data, std::size_t epoch) {
  if (client.items.empty()) {
    throw TrainingError("client_round on a client with no train ratings");
  }

  LocalSubgraph subgraph;
  subgraph.user = client.user;
  subgraph.items = client.items;
  subgraph.ratings = client.ratings;
  if (neighbor_embeddings != nullptr) {
    subgraph.neighbor_embeddings = *neighbor_embeddings;
  } else {
    subgraph.neighbor_embeddings.resize(config.model.hidden_dim, 0);
  }

  const ClientGraph graph =
      ClientGraph::build(subgraph, data.users, data.items, config.model.self_loops);

  Rng dropout_rng = substream(config.seed, "dropout",
                              static_cast<std::uint64_t>(client.user), epoch);
  Rng* dropout = config.model.dropout > 0.0 ? &dropout_rng : nullptr;

  const ForwardTrace trace = forward(graph, broadcast, config.model, dropout);
  const double loss = local_loss(trace, client.ratings);
  GradientSet grads = backward(trace, client.ratings, graph, broadcast, config.model);

  const Group membership = data.groups.group_of(client.user);
  const double scale = scale_factor(config.fairness, stats, membership);
  if (scale != 1.0) grads.scale(scale);

  Rng ldp_rng = substream(config.seed, "ldp", static_cast<std::uint64_t>(client.user), epoch);
  clip_and_noise(grads, config.ldp, ldp_rng);

  // Algorithm-3 local step on everything the released gradient touches.
  ClientRoundResult result;
  result.utility_loss = loss;
  result.scale = scale;
  ClientUpdate& update = result.update;
  update.user_index = graph.user_index;
  update.weight = static_cast<double>(client.items.size());
  update.user_embedding =
      broadcast.user_emb.col(static_cast<Eigen::Index>(graph.user_index)) -
      config.eta * grads.user_grad;
  update.item_embeddings.reserve(grads.item_grads.size());
  for (const auto& [item_index, grad] : grads.item_grads) {
    update.item_embeddings.emplace_back(
        item_index,
        broadcast.item_emb.col(static_cast<Eigen::Index>(item_index)) - config.eta * grad);
  }
  update.theta.reserve(grads.theta_grad.size());
  update.attn.reserve(grads.attn_grad.size());
  for (std::size_t l = 0; l < grads.theta_grad.size(); ++l) {
    update.theta.push_back(broadcast.theta[l] - config.eta * grads.theta_grad[l]);
    update.attn.push_back(broadcast.attn[l] - config.eta * grads.attn_grad[l]);
  }

  const EpochNoise noise =
      EpochNoise::draw(config.seed, client.user, epoch, config.fairness.sigma);
  result.contribution =
      make_contribution(performance_from_loss(loss), membership, config.fairness.sigma, noise);
  return result;
}

ModelState aggregate_params(const ModelState& broadcast,
                            const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) return broadcast;

  double total_weight = 0.0;
  for (const ClientUpdate& u : updates) {
    if (u.theta.size() != broadcast.theta.size() ||
        static_cast<int>(u.user_embedding.size()) != broadcast.hidden_dim()) {
      throw ProtocolError("client update shape mismatch");
    }
    total_weight += u.weight;
  }
  if (total_weight <= 0.0) throw ProtocolError("client updates carry zero total weight");

  ModelState next = broadcast;
  for (auto& theta : next.theta) theta.setZero();
  for (auto& attn : next.attn) attn.setZero();

  // Per-item weighted sums over the touching clients only.
  std::unordered_map<std::size_t, std::pair<double, Eigen::VectorXd>> item_acc;

  for (const ClientUpdate& u : updates) {
    const double p = u.weight / total_weight;
    for (std::size_t l = 0; l < next.theta.size(); ++l) {
      next.theta[l].noalias() += p * u.theta[l];
      next.attn[l].noalias() += p * u.attn[l];
    }
    // Personalization: only the owner ever writes its user embedding.
    next.user_emb.col(static_cast<Eigen::Index>(u.user_index)) = u.user_embedding;
    for (const auto& [item_index, embedding] : u.item_embeddings) {
      auto [it, inserted] = item_acc.try_emplace(
          item_index, 0.0, Eigen::VectorXd::Zero(embedding.size()));
      it->second.first += u.weight;
      it->second.second.noalias() += u.weight * embedding;
    }
  }
  for (const auto& [item_index, acc] : item_acc) {
    next.item_emb.col(static_cast<Eigen::Index>(item_index)) = acc.second / acc.first;
  }
  return next;
}

namespace {

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> cursor{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
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

TrainResult train(const ExperimentConfig& config, const FederatedData& data) {
  config.validate(data.users.size());
  if (data.users.size() == 0) throw TrainingError("no clients to train on");
  if (data.groups.size(Group::kS0) == 0 || data.groups.size(Group::kS1) == 0) {
    throw TrainingError("both sensitive groups must be non-empty");
  }

  Rng init_rng = substream(config.seed, "init");
  ModelState state =
      ModelState::init(config.model, data.users.size(), data.items.size(), init_rng);

  const ItemCipher cipher = ItemCipher::from_seed(config.seed);
  ExpansionServer expansion_server;
  std::vector<std::uint64_t> client_tags(data.users.size());
  {
    std::set<std::uint64_t> taken;
    for (std::size_t u = 0; u < data.users.size(); ++u) {
      std::uint64_t tag = substream_seed(config.seed, "client_tag", u);
      while (!taken.insert(tag).second) tag = mix64(tag);
      client_tags[u] = tag;
    }
  }
  std::vector<std::set<ItemId>> uploaded(data.users.size());

  TrainResult result;
  result.neighbor_features.assign(data.users.size(),
                                  Eigen::MatrixXd(config.model.hidden_dim, 0));

  GroupStats stats;  // P0 = Q0 = 1: round 0 runs unscaled under the tie rule
  std::vector<std::size_t> fixed_sample;
  if (config.sample_once) {
    Rng rng = substream(config.seed, "sampling", 0);
    fixed_sample = sample_users(data.users.size(), config.batch_dropout, rng);
  }

  double best_val_rmse = std::numeric_limits<double>::infinity();
  std::size_t stale_epochs = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> sampled;
    if (config.sample_once) {
      sampled = fixed_sample;
    } else {
      Rng rng = substream(config.seed, "sampling", epoch);
      sampled = sample_users(data.users.size(), config.batch_dropout, rng);
    }
    // Degenerate clients (no train ratings) sit out the round.
    std::erase_if(sampled, [&](std::size_t u) { return data.clients[u].items.empty(); });
    if (sampled.empty()) throw TrainingError("no non-degenerate clients sampled");

    if (config.expansion) {
      std::vector<ExpansionUpload> uploads;
      uploads.reserve(sampled.size());
      for (const std::size_t u : sampled) {
        ExpansionUpload upload;
        upload.client_tag = client_tags[u];
        upload.user_embedding = state.user_emb.col(static_cast<Eigen::Index>(u));
        for (const ItemId item : data.clients[u].items) {
          if (uploaded[u].insert(item).second) {
            upload.new_digests.push_back(cipher.encrypt(item));
          }
        }
        uploads.push_back(std::move(upload));
      }
      expansion_server.update(uploads);
    }

    std::vector<ClientRoundResult> results(sampled.size());
    std::vector<char> aborted(sampled.size(), 0);
    parallel_for(sampled.size(), config.threads, [&](std::size_t i) {
      const std::size_t u = sampled[i];
      Eigen::MatrixXd neighbors(config.model.hidden_dim, 0);
      if (config.expansion) {
        Rng expansion_rng = substream(config.seed, "expansion",
                                      static_cast<std::uint64_t>(data.clients[u].user), epoch);
        const MappingDict slice =
            expansion_server.build_slice(client_tags[u], config.neighbor_cap, expansion_rng);
        LocalSubgraph bare;
        bare.user = data.clients[u].user;
        bare.items = data.clients[u].items;
        bare.ratings = data.clients[u].ratings;
        bare.neighbor_embeddings.resize(config.model.hidden_dim, 0);
        neighbors = expand_subgraph(bare, slice, config.model.hidden_dim).neighbor_embeddings;
      }
      result.neighbor_features[u] = neighbors;
      try {
        results[i] = client_round(data.clients[u], &neighbors, state, stats, config, data, epoch);
      } catch (const ClientRoundAbort&) {
        aborted[i] = 1;
      }
    });

    std::vector<ClientUpdate> updates;
    std::vector<StatsContribution> contributions;
    double loss_weighted_sum = 0.0;
    double loss_weight = 0.0;
    updates.reserve(sampled.size());
    contributions.reserve(sampled.size());
    for (std::size_t i = 0; i < sampled.size(); ++i) {
      if (aborted[i]) continue;
      loss_weighted_sum += results[i].update.weight * results[i].utility_loss;
      loss_weight += results[i].update.weight;
      updates.push_back(std::move(results[i].update));
      contributions.push_back(results[i].contribution);
    }
    if (updates.empty()) {
      throw TrainingError("every sampled client aborted in epoch " + std::to_string(epoch));
    }

    state = aggregate_params(state, updates);
    const AggregateResult agg = aggregate_stats(contributions, stats);
    stats = agg.stats;

    RoundRecord record;
    record.epoch = epoch;
    record.train_rmse = std::sqrt(loss_weighted_sum / loss_weight);
    record.p = stats.p;
    record.q = stats.q;

    // Tiny fixtures can have empty eval splits; metrics stay NaN there.
    double val_rmse = std::numeric_limits<double>::quiet_NaN();
    record.validation_rmse = val_rmse;
    record.validation_disparity = val_rmse;
    if (!data.splits.validation.empty()) {
      const EvalReport val = evaluate(state, data.splits.validation, data, config.model,
                                      config.fairness.alpha, &result.neighbor_features,
                                      config.threads);
      record.validation_rmse = val_rmse = val.rmse;
      record.validation_disparity = val.disparity;
    }
    if (config.eval_test_each_epoch && !data.splits.test.empty()) {
      const EvalReport test = evaluate(state, data.splits.test, data, config.model,
                                       config.fairness.alpha, &result.neighbor_features,
                                       config.threads);
      record.test_disparity = test.disparity;
      // TEMP instrumentation
      std::fprintf(stderr, "DBG epoch=%zu PmQ=%+.5f tests0ms1=%+.5f vals0ms1=%+.5f\n",
                   epoch, stats.p - stats.q, test.rmse_s0 - test.rmse_s1,
                   record.validation_rmse == record.validation_rmse ? 0.0 : 0.0);
    }
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(record);

    if (config.early_stop && !std::isnan(val_rmse)) {
      if (val_rmse < best_val_rmse - 1e-9) {
        best_val_rmse = val_rmse;
        stale_epochs = 0;
      } else if (++stale_epochs >= config.patience) {
        break;
      }
    }
  }

  result.state = std::move(state);
  result.final_stats = stats;
  return result;
}

}  // namespace fairfed
