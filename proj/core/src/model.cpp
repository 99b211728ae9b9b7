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

#include "fairfed/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fairfed/errors.hpp"

namespace fairfed {

namespace {

double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }
double leaky_relu_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

double apply_activation(Activation act, double z) {
  switch (act) {
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kLeakyRelu: return leaky_relu(z, 0.2);
    case Activation::kTanh: return std::tanh(z);
    case Activation::kIdentity: return z;
  }
  return z;
}

double activation_grad(Activation act, double z, double out) {
  switch (act) {
    case Activation::kRelu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::kLeakyRelu: return leaky_relu_grad(z, 0.2);
    case Activation::kTanh: return 1.0 - out * out;
    case Activation::kIdentity: return 1.0;
  }
  return 1.0;
}

}  // namespace

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string activation_to_string(Activation activation) {
  switch (activation) {
    case Activation::kRelu: return "relu";
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "relu";
}

IdIndex::IdIndex(std::vector<std::int64_t> ids) : ids_(std::move(ids)) {
  index_.reserve(ids_.size() * 2);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) {
      throw DataError("duplicate id " + std::to_string(ids_[i]) + " in index");
    }
  }
}

std::size_t IdIndex::index(std::int64_t id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw DataError("id " + std::to_string(id) + " not in index");
  return it->second;
}

ModelState ModelState::init(const ModelConfig& config, std::size_t num_users,
                            std::size_t num_items, Rng& rng) {
  const int h = config.hidden_dim;
  const double bound = config.init_scale / std::sqrt(static_cast<double>(h));
  auto fill = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-bound, bound);
    }
  };

  ModelState state;
  state.user_emb.resize(h, static_cast<Eigen::Index>(num_users));
  state.item_emb.resize(h, static_cast<Eigen::Index>(num_items));
  fill(state.user_emb);
  fill(state.item_emb);
  state.theta.resize(config.layers);
  state.attn.resize(config.layers);
  for (int l = 0; l < config.layers; ++l) {
    state.theta[l].resize(h, h);
    fill(state.theta[l]);
    state.attn[l].resize(2 * h);
    for (Eigen::Index i = 0; i < state.attn[l].size(); ++i) {
      state.attn[l](i) = rng.uniform(-bound, bound);
    }
  }
  return state;
}

ClientGraph ClientGraph::build(const LocalSubgraph& subgraph, const IdIndex& users,
                               const IdIndex& items, bool self_loops) {
  ClientGraph graph;
  graph.user_index = users.index(subgraph.user);
  graph.item_indices.reserve(subgraph.items.size());
  for (const ItemId item : subgraph.items) graph.item_indices.push_back(items.index(item));
  graph.ratings = subgraph.ratings;
  graph.neighbor_embeddings = subgraph.neighbor_embeddings;

  const std::size_t m = graph.item_indices.size();
  const std::size_t r = graph.neighbor_count();
  const std::size_t n = 1 + m + r;

  graph.adjacency_offsets.reserve(n + 1);
  graph.adjacency_offsets.push_back(0);
  // Node 0 (user): every item and neighbor node. An isolated user keeps a
  // self-loop so the attention softmax stays defined.
  if (self_loops || n == 1) graph.adjacency_targets.push_back(0);
  for (std::size_t v = 1; v < n; ++v) graph.adjacency_targets.push_back(v);
  graph.adjacency_offsets.push_back(graph.adjacency_targets.size());
  // Item and neighbor nodes see the user (star graph).
  for (std::size_t v = 1; v < n; ++v) {
    graph.adjacency_targets.push_back(0);
    if (self_loops) graph.adjacency_targets.push_back(v);
    graph.adjacency_offsets.push_back(graph.adjacency_targets.size());
  }
  return graph;
}

ForwardTrace forward(const ClientGraph& graph, const ModelState& params,
                     const ModelConfig& config, Rng* dropout_rng) {
  const int h = params.hidden_dim();
  const std::size_t m = graph.item_indices.size();
  const std::size_t r = graph.neighbor_count();
  const std::size_t n = graph.node_count();

  Eigen::MatrixXd features(h, static_cast<Eigen::Index>(n));
  features.col(0) = params.user_emb.col(static_cast<Eigen::Index>(graph.user_index));
  for (std::size_t j = 0; j < m; ++j) {
    features.col(static_cast<Eigen::Index>(1 + j)) =
        params.item_emb.col(static_cast<Eigen::Index>(graph.item_indices[j]));
  }
  if (r > 0) features.rightCols(static_cast<Eigen::Index>(r)) = graph.neighbor_embeddings;

  ForwardTrace trace;
  trace.layers.resize(params.layer_count());

  const bool use_dropout = dropout_rng != nullptr && config.dropout > 0.0;
  const double keep = 1.0 - config.dropout;

  Eigen::MatrixXd current = std::move(features);
  for (int l = 0; l < params.layer_count(); ++l) {
    ForwardTrace::Layer& layer = trace.layers[l];

    if (use_dropout) {
      layer.dropout_mask.resize(h, static_cast<Eigen::Index>(n));
      for (Eigen::Index c = 0; c < layer.dropout_mask.cols(); ++c) {
        for (Eigen::Index row = 0; row < h; ++row) {
          layer.dropout_mask(row, c) = dropout_rng->uniform() < config.dropout ? 0.0 : 1.0 / keep;
        }
      }
      layer.input = current.cwiseProduct(layer.dropout_mask);
    } else {
      layer.input = current;
    }

    const Eigen::MatrixXd& theta = params.theta[static_cast<std::size_t>(l)];
    const Eigen::VectorXd& attn = params.attn[static_cast<std::size_t>(l)];
    layer.transformed.noalias() = theta * layer.input;

    const Eigen::VectorXd query = layer.transformed.transpose() * attn.head(h);  // a1 . s_v
    const Eigen::VectorXd key = layer.transformed.transpose() * attn.tail(h);    // a2 . s_k

    layer.logits.resize(graph.adjacency_targets.size());
    layer.gamma.resize(graph.adjacency_targets.size());
    layer.aggregated.setZero(h, static_cast<Eigen::Index>(n));

    for (std::size_t v = 0; v < n; ++v) {
      const std::size_t begin = graph.adjacency_offsets[v];
      const std::size_t end = graph.adjacency_offsets[v + 1];
      double max_logit = -std::numeric_limits<double>::infinity();
      for (std::size_t e = begin; e < end; ++e) {
        const std::size_t k = graph.adjacency_targets[e];
        const double u = query(static_cast<Eigen::Index>(v)) + key(static_cast<Eigen::Index>(k));
        layer.logits[e] = u;
        max_logit = std::max(max_logit, leaky_relu(u, config.attention_slope));
      }
      double denom = 0.0;
      for (std::size_t e = begin; e < end; ++e) {
        const double w = std::exp(leaky_relu(layer.logits[e], config.attention_slope) - max_logit);
        layer.gamma[e] = w;
        denom += w;
      }
      auto agg_col = layer.aggregated.col(static_cast<Eigen::Index>(v));
      for (std::size_t e = begin; e < end; ++e) {
        layer.gamma[e] /= denom;
        agg_col.noalias() +=
            layer.gamma[e] * layer.input.col(static_cast<Eigen::Index>(graph.adjacency_targets[e]));
      }
    }

    layer.preactivation.noalias() = theta * layer.aggregated;
    layer.output = layer.preactivation.unaryExpr(
        [&](double z) { return apply_activation(config.update_activation, z); });
    current = layer.output;
  }

  trace.predictions.resize(static_cast<Eigen::Index>(m));
  const Eigen::MatrixXd& final_h = trace.final_representations();
  for (std::size_t j = 0; j < m; ++j) {
    trace.predictions(static_cast<Eigen::Index>(j)) =
        final_h.col(0).dot(final_h.col(static_cast<Eigen::Index>(1 + j)));
  }
  return trace;
}

double local_loss(const ForwardTrace& trace, const std::vector<double>& truths) {
  if (truths.empty()) throw TrainingError("local_loss over zero ratings");
  if (static_cast<std::size_t>(trace.predictions.size()) != truths.size()) {
    throw TrainingError("prediction/truth size mismatch");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < truths.size(); ++j) {
    const double d = trace.predictions(static_cast<Eigen::Index>(j)) - truths[j];
    total += d * d;
  }
  return total / static_cast<double>(truths.size());
}

void GradientSet::scale(double factor) {
  user_grad *= factor;
  for (auto& [index, grad] : item_grads) grad *= factor;
  for (auto& theta : theta_grad) theta *= factor;
  for (auto& attn : attn_grad) attn *= factor;
}

double GradientSet::squared_l2_norm() const {
  double total = user_grad.squaredNorm();
  for (const auto& [index, grad] : item_grads) total += grad.squaredNorm();
  for (const auto& theta : theta_grad) total += theta.squaredNorm();
  for (const auto& attn : attn_grad) total += attn.squaredNorm();
  return total;
}

bool GradientSet::all_finite() const {
  if (!user_grad.allFinite()) return false;
  for (const auto& [index, grad] : item_grads) {
    if (!grad.allFinite()) return false;
  }
  for (const auto& theta : theta_grad) {
    if (!theta.allFinite()) return false;
  }
  for (const auto& attn : attn_grad) {
    if (!attn.allFinite()) return false;
  }
  return true;
}

GradientSet backward(const ForwardTrace& trace, const std::vector<double>& truths,
                     const ClientGraph& graph, const ModelState& params,
                     const ModelConfig& config) {
  const int h = params.hidden_dim();
  const std::size_t m = graph.item_indices.size();
  const std::size_t n = graph.node_count();
  const auto layer_count = static_cast<std::size_t>(params.layer_count());

  GradientSet grads;
  grads.user_index = graph.user_index;
  grads.theta_grad.resize(layer_count);
  grads.attn_grad.resize(layer_count);
  for (std::size_t l = 0; l < layer_count; ++l) {
    grads.theta_grad[l].setZero(h, h);
    grads.attn_grad[l].setZero(2 * h);
  }

  // d loss / d final representations: the loss touches the user column and
  // every item column through the dot-product predictor.
  const Eigen::MatrixXd& final_h = trace.final_representations();
  Eigen::MatrixXd d_output = Eigen::MatrixXd::Zero(h, static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < m; ++j) {
    const double d_pred =
        2.0 * (trace.predictions(static_cast<Eigen::Index>(j)) - truths[j]) /
        static_cast<double>(m);
    d_output.col(0).noalias() += d_pred * final_h.col(static_cast<Eigen::Index>(1 + j));
    d_output.col(static_cast<Eigen::Index>(1 + j)).noalias() += d_pred * final_h.col(0);
  }

  for (std::size_t l = layer_count; l-- > 0;) {
    const ForwardTrace::Layer& layer = trace.layers[l];
    const Eigen::MatrixXd& theta = params.theta[l];
    const Eigen::VectorXd& attn = params.attn[l];

    // Update step: h_out = sigma(Theta * n_v).
    Eigen::MatrixXd d_pre(h, static_cast<Eigen::Index>(n));
    for (Eigen::Index c = 0; c < d_pre.cols(); ++c) {
      for (Eigen::Index row = 0; row < h; ++row) {
        d_pre(row, c) = d_output(row, c) *
                        activation_grad(config.update_activation, layer.preactivation(row, c),
                                        layer.output(row, c));
      }
    }
    grads.theta_grad[l].noalias() += d_pre * layer.aggregated.transpose();
    Eigen::MatrixXd d_agg = theta.transpose() * d_pre;

    // Aggregation + attention.
    Eigen::MatrixXd d_input = Eigen::MatrixXd::Zero(h, static_cast<Eigen::Index>(n));
    Eigen::VectorXd d_query = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd d_key = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    std::vector<double> d_gamma(graph.adjacency_targets.size());

    for (std::size_t v = 0; v < n; ++v) {
      const std::size_t begin = graph.adjacency_offsets[v];
      const std::size_t end = graph.adjacency_offsets[v + 1];
      const auto d_agg_col = d_agg.col(static_cast<Eigen::Index>(v));

      double weighted_sum = 0.0;  // sum_j gamma_vj * d_gamma_vj, for softmax backward
      for (std::size_t e = begin; e < end; ++e) {
        const std::size_t k = graph.adjacency_targets[e];
        d_gamma[e] = d_agg_col.dot(layer.input.col(static_cast<Eigen::Index>(k)));
        d_input.col(static_cast<Eigen::Index>(k)).noalias() += layer.gamma[e] * d_agg_col;
        weighted_sum += layer.gamma[e] * d_gamma[e];
      }
      for (std::size_t e = begin; e < end; ++e) {
        const std::size_t k = graph.adjacency_targets[e];
        const double d_edge = layer.gamma[e] * (d_gamma[e] - weighted_sum) *
                              leaky_relu_grad(layer.logits[e], config.attention_slope);
        d_query(static_cast<Eigen::Index>(v)) += d_edge;
        d_key(static_cast<Eigen::Index>(k)) += d_edge;
      }
    }

    // u_vk = a1 . s_v + a2 . s_k with s = Theta * input.
    grads.attn_grad[l].head(h).noalias() += layer.transformed * d_query;
    grads.attn_grad[l].tail(h).noalias() += layer.transformed * d_key;
    Eigen::MatrixXd d_transformed =
        attn.head(h) * d_query.transpose() + attn.tail(h) * d_key.transpose();
    grads.theta_grad[l].noalias() += d_transformed * layer.input.transpose();
    d_input.noalias() += theta.transpose() * d_transformed;

    if (layer.dropout_mask.size() > 0) d_input = d_input.cwiseProduct(layer.dropout_mask);
    d_output = std::move(d_input);
  }

  grads.user_grad = d_output.col(0);
  grads.item_grads.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    grads.item_grads.emplace_back(graph.item_indices[j],
                                  d_output.col(static_cast<Eigen::Index>(1 + j)));
  }
  // Neighbor columns are frozen features; their gradients are dropped here.
  return grads;
}

Eigen::VectorXd candidate_representation(const ForwardTrace& trace,
                                         const Eigen::VectorXd& item_embedding,
                                         const ModelState& params,
                                         const ModelConfig& config) {
  const int h = params.hidden_dim();
  if (item_embedding.size() != h) {
    throw EvalError("candidate embedding length mismatch");
  }

  Eigen::VectorXd candidate = item_embedding;
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    const ForwardTrace::Layer& layer = trace.layers[l];
    const Eigen::MatrixXd& theta = params.theta[l];
    const Eigen::VectorXd& attn = params.attn[l];

    Eigen::VectorXd aggregated;
    if (config.self_loops) {
      // Two-edge neighborhood {user, candidate}, like an in-graph item.
      const Eigen::VectorXd transformed = theta * candidate;
      const Eigen::VectorXd user_transformed = layer.transformed.col(0);
      const double query = attn.head(h).dot(transformed);
      const double logit_user = query + attn.tail(h).dot(user_transformed);
      const double logit_self = query + attn.tail(h).dot(transformed);
      const double e_user = leaky_relu(logit_user, config.attention_slope);
      const double e_self = leaky_relu(logit_self, config.attention_slope);
      const double max_e = std::max(e_self, e_user);
      const double w_user = std::exp(e_user - max_e);
      const double w_self = std::exp(e_self - max_e);
      const double denom = w_self + w_user;
      aggregated = (w_user / denom) * layer.input.col(0) + (w_self / denom) * candidate;
    } else {
      // Singleton neighborhood {user}: gamma = 1.
      aggregated = layer.input.col(0);
    }
    candidate = (theta * aggregated)
                    .unaryExpr([&](double z) { return apply_activation(config.update_activation, z); });
  }
  return candidate;
}

double predict_for_candidate(const ForwardTrace& trace,
                             const Eigen::VectorXd& item_embedding,
                             const ModelState& params, const ModelConfig& config) {
  return trace.final_representations().col(0).dot(
      candidate_representation(trace, item_embedding, params, config));
}

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'F', 'E', 'D', 'C', 'K', 'P', 'T'};

void write_tensor(std::ofstream& out, const Eigen::MatrixXd& m) {
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

void read_tensor(std::ifstream& in, Eigen::MatrixXd& m) {
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelState& state,
                     std::uint64_t seed) {
  nlohmann::json manifest;
  manifest["hidden_dim"] = state.hidden_dim();
  manifest["layers"] = state.layer_count();
  manifest["num_users"] = state.user_emb.cols();
  manifest["num_items"] = state.item_emb.cols();
  manifest["seed"] = seed;
  nlohmann::json tensors = nlohmann::json::array();
  tensors.push_back({{"name", "user_emb"}, {"rows", state.user_emb.rows()}, {"cols", state.user_emb.cols()}});
  tensors.push_back({{"name", "item_emb"}, {"rows", state.item_emb.rows()}, {"cols", state.item_emb.cols()}});
  for (int l = 0; l < state.layer_count(); ++l) {
    tensors.push_back({{"name", "theta." + std::to_string(l)},
                       {"rows", state.theta[l].rows()},
                       {"cols", state.theta[l].cols()}});
    tensors.push_back({{"name", "attn." + std::to_string(l)},
                       {"rows", state.attn[l].size()},
                       {"cols", 1}});
  }
  manifest["tensors"] = tensors;
  const std::string manifest_str = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const auto len = static_cast<std::uint32_t>(manifest_str.size());
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  write_tensor(out, state.user_emb);
  write_tensor(out, state.item_emb);
  for (int l = 0; l < state.layer_count(); ++l) {
    write_tensor(out, state.theta[static_cast<std::size_t>(l)]);
    Eigen::MatrixXd attn_col = state.attn[static_cast<std::size_t>(l)];
    write_tensor(out, attn_col);
  }
  if (!out) throw DataError("short write on checkpoint: " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path, std::uint64_t* seed_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  std::uint32_t version = 0;
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || version != 1) throw DataError("unsupported checkpoint version");
  std::string manifest_str(len, '\0');
  in.read(manifest_str.data(), len);
  const nlohmann::json manifest = nlohmann::json::parse(manifest_str);

  ModelState state;
  const int h = manifest.at("hidden_dim").get<int>();
  const int layers = manifest.at("layers").get<int>();
  const auto num_users = manifest.at("num_users").get<Eigen::Index>();
  const auto num_items = manifest.at("num_items").get<Eigen::Index>();
  if (seed_out != nullptr) *seed_out = manifest.at("seed").get<std::uint64_t>();

  state.user_emb.resize(h, num_users);
  state.item_emb.resize(h, num_items);
  read_tensor(in, state.user_emb);
  read_tensor(in, state.item_emb);
  state.theta.resize(static_cast<std::size_t>(layers));
  state.attn.resize(static_cast<std::size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    state.theta[static_cast<std::size_t>(l)].resize(h, h);
    read_tensor(in, state.theta[static_cast<std::size_t>(l)]);
    Eigen::MatrixXd attn_col(2 * h, 1);
    read_tensor(in, attn_col);
    state.attn[static_cast<std::size_t>(l)] = attn_col.col(0);
  }
  if (!in) throw DataError("truncated checkpoint: " + path.string());
  return state;
}

}  // namespace fairfed
