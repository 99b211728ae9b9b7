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

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fairfed/data.hpp"
#include "fairfed/graph.hpp"
#include "fairfed/rng.hpp"

namespace fairfed {

enum class Activation { kRelu, kLeakyRelu, kTanh, kIdentity };

Activation activation_from_string(const std::string& name);
std::string activation_to_string(Activation activation);

struct ModelConfig {
  int hidden_dim = 64;
  int layers = 1;
  double dropout = 0.2;
  double attention_slope = 0.2;       // LeakyReLU slope inside Att(.)
  Activation update_activation = Activation::kRelu;
  // Parameters start uniform on (-init_scale/sqrt(h), init_scale/sqrt(h)).
  // The star topology averages many embeddings into the user representation,
  // so the dot-product predictor needs a healthy starting magnitude to reach
  // the rating scale within a realistic epoch budget.
  double init_scale = 3.0;
  // A node's neighborhood is its adjacent nodes; the node itself is added
  // only when that set would be empty, so softmax stays defined. Set
  // self_loops to additionally put every node in its own neighborhood.
  bool self_loops = false;
};

// Dense-index vocabularies: the model addresses users/items by contiguous
// index, the data layer by raw id.
class IdIndex {
 public:
  IdIndex() = default;
  explicit IdIndex(std::vector<std::int64_t> ids);

  std::size_t size() const { return ids_.size(); }
  std::int64_t id(std::size_t index) const { return ids_.at(index); }
  std::size_t index(std::int64_t id) const;
  bool contains(std::int64_t id) const { return index_.count(id) > 0; }
  const std::vector<std::int64_t>& ids() const { return ids_; }

 private:
  std::vector<std::int64_t> ids_;
  std::unordered_map<std::int64_t, std::size_t> index_;
};

// Every learnable parameter: embedding tables (one column per entity) and the
// per-layer transform / attention vectors.
struct ModelState {
  Eigen::MatrixXd user_emb;              // h x num_users
  Eigen::MatrixXd item_emb;              // h x num_items
  std::vector<Eigen::MatrixXd> theta;    // per layer, h x h
  std::vector<Eigen::VectorXd> attn;     // per layer, 2h

  int hidden_dim() const { return static_cast<int>(user_emb.rows()); }
  int layer_count() const { return static_cast<int>(theta.size()); }

  // Symmetric uniform init on (-init_scale/sqrt(h), init_scale/sqrt(h)),
  // drawn column-major in a fixed order from the given stream.
  static ModelState init(const ModelConfig& config, std::size_t num_users,
                         std::size_t num_items, Rng& rng);
};

// The per-client compute graph: node 0 is the user, nodes 1..m the rated
// items and nodes m+1..m+r frozen neighbor embeddings. Neighborhoods always
// contain the node itself (self-loop rule), so isolated nodes stay defined.
struct ClientGraph {
  std::size_t user_index = 0;              // dense user index
  std::vector<std::size_t> item_indices;   // dense item indices, order = subgraph order
  std::vector<double> ratings;             // aligned with item_indices
  Eigen::MatrixXd neighbor_embeddings;     // h x r

  std::size_t node_count() const { return 1 + item_indices.size() + neighbor_count(); }
  std::size_t neighbor_count() const {
    return static_cast<std::size_t>(neighbor_embeddings.cols());
  }

  // CSR adjacency in ascending node order.
  std::vector<std::size_t> adjacency_offsets;
  std::vector<std::size_t> adjacency_targets;

  static ClientGraph build(const LocalSubgraph& subgraph, const IdIndex& users,
                           const IdIndex& items, bool self_loops = false);
};

// Everything forward() computed, cached for the backward pass. Attention
// weights per directed edge sum to 1 over each node's neighborhood.
struct ForwardTrace {
  struct Layer {
    Eigen::MatrixXd input;        // h x n, post-dropout features fed to the layer
    Eigen::MatrixXd dropout_mask; // empty when dropout is off
    Eigen::MatrixXd transformed;  // h x n, Theta * input (attention keys)
    std::vector<double> logits;   // per edge, pre-LeakyReLU
    std::vector<double> gamma;    // per edge, softmax weights
    Eigen::MatrixXd aggregated;   // h x n, sum_k gamma_vk * input_k
    Eigen::MatrixXd preactivation; // h x n, Theta * aggregated
    Eigen::MatrixXd output;       // h x n, sigma(preactivation)
  };
  std::vector<Layer> layers;
  Eigen::VectorXd predictions;    // one per item node, <h_user, h_item>

  const Eigen::MatrixXd& final_representations() const { return layers.back().output; }
};

// Gradient of the local utility loss w.r.t. every parameter reachable from
// the client's graph. Item gradients are sparse over touched items; anything
// untouched is structurally zero.
struct GradientSet {
  std::size_t user_index = 0;
  Eigen::VectorXd user_grad;
  std::vector<std::pair<std::size_t, Eigen::VectorXd>> item_grads;
  std::vector<Eigen::MatrixXd> theta_grad;
  std::vector<Eigen::VectorXd> attn_grad;

  void scale(double factor);
  double squared_l2_norm() const;
  bool all_finite() const;
};

// One GAT pass over the client graph. When `dropout_rng` is set the model
// runs in training mode and draws one inverted-dropout mask per layer input.
ForwardTrace forward(const ClientGraph& graph, const ModelState& params,
                     const ModelConfig& config, Rng* dropout_rng = nullptr);

// Mean squared residual over the client's train items. m = 0 is reported by
// the caller skipping the client, never by this function dividing by zero.
double local_loss(const ForwardTrace& trace, const std::vector<double>& truths);

GradientSet backward(const ForwardTrace& trace, const std::vector<double>& truths,
                     const ClientGraph& graph, const ModelState& params,
                     const ModelConfig& config);

// Final representation of a candidate item attached to the user as a leaf,
// built exactly the way in-graph item representations are formed (the
// candidate's neighborhood is the user, plus itself under self_loops). Uses
// the trace's per-layer user features, so the trace must come from an
// eval-mode forward (no dropout). The rating prediction for a candidate with
// embedding z is then <final user rep, candidate_representation>.
Eigen::VectorXd candidate_representation(const ForwardTrace& trace,
                                         const Eigen::VectorXd& item_embedding,
                                         const ModelState& params,
                                         const ModelConfig& config);

double predict_for_candidate(const ForwardTrace& trace,
                             const Eigen::VectorXd& item_embedding,
                             const ModelState& params, const ModelConfig& config);

// Flat binary tensor archive with a JSON manifest (names, shapes, hidden dim,
// layer count, seed). Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const ModelState& state,
                     std::uint64_t seed);
ModelState load_checkpoint(const std::filesystem::path& path,
                           std::uint64_t* seed_out = nullptr);

}  // namespace fairfed
