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

#include "fairfed/model.hpp"
#include "fairfed/rng.hpp"

namespace fairfed {

// lambda is read as the Laplace scale parameter b (variance 2*lambda^2); the
// epsilon = 2*delta/lambda budget matches the standard Laplace-mechanism bound
// only under that reading.
struct LdpConfig {
  double delta = 0.4;   // L2 clipping threshold
  double lambda = 0.0;  // Laplace scale
  bool enabled = false;

  void validate() const;
};

// Raised when a client's gradient turns non-finite; the federation loop
// aborts that client's round and moves on.
class ClientRoundAbort : public TrainingError {
 public:
  explicit ClientRoundAbort(const std::string& what) : TrainingError(what) {}
};

// Rescales the whole gradient set so its global L2 norm is at most delta,
// then adds i.i.d. Laplace(0, lambda) noise to every released entry. Noise
// draw order is fixed: user embedding, theta, attn, then touched items in
// graph order, so the touched prefix is reproducible independently of whether
// a dense release is materialized. Disabled => exact identity, no rng draws.
void clip_and_noise(GradientSet& grad, const LdpConfig& config, Rng& rng);

// The full released item-gradient table (h x num_items): structural zeros for
// non-interacted items are noised too, which is the point of the defense --
// a sparse release would expose the interaction history. Training itself
// never consumes the untouched columns (the server only aggregates touched
// items), so the hot path skips materializing them; this reconstructs the
// exact release for inspection and tests. Must be called with an rng in the
// same state clip_and_noise left it in.
Eigen::MatrixXd materialize_item_release(const GradientSet& grad,
                                         const LdpConfig& config,
                                         std::size_t num_items, Rng& rng);

// Privacy budget upper bound epsilon = 2*delta/lambda; lambda = 0 reports an
// explicit infinity, never a division crash.
double privacy_budget(const LdpConfig& config);

}  // namespace fairfed
