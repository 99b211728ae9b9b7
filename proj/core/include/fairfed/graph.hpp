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
#include <vector>

#include "fairfed/data.hpp"

namespace fairfed {

// One client's private star graph: the user node, its rated (train) items,
// and any anonymous neighbor-user embeddings acquired via graph expansion.
// Neighbor embeddings are frozen features; no gradient flows back to them.
struct LocalSubgraph {
  UserId user = 0;
  std::vector<ItemId> items;       // rated train items, construction order
  std::vector<double> ratings;     // aligned with items
  Eigen::MatrixXd neighbor_embeddings;  // h x r, r distinct anonymous neighbors

  std::size_t item_degree() const { return items.size(); }
  std::size_t neighbor_count() const {
    return static_cast<std::size_t>(neighbor_embeddings.cols());
  }
};

}  // namespace fairfed
