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

#include "fairfed/privacy.hpp"

#include <cmath>
#include <limits>
#include <unordered_set>

#include "fairfed/errors.hpp"

namespace fairfed {

void LdpConfig::validate() const {
  if (delta <= 0.0) throw ConfigError("clipping threshold delta must be > 0");
  if (lambda < 0.0) throw ConfigError("noise scale lambda must be >= 0");
}

namespace {

void add_laplace(Eigen::Ref<Eigen::MatrixXd> m, double scale, Rng& rng) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) += rng.laplace(scale);
  }
}

}  // namespace

void clip_and_noise(GradientSet& grad, const LdpConfig& config, Rng& rng) {
  if (!config.enabled) return;
  config.validate();
  if (!grad.all_finite()) {
    throw ClientRoundAbort("non-finite gradient entry before LDP release");
  }

  const double norm = std::sqrt(grad.squared_l2_norm());
  if (norm > config.delta) grad.scale(config.delta / norm);

  if (config.lambda > 0.0) {
    add_laplace(grad.user_grad, config.lambda, rng);
    for (auto& theta : grad.theta_grad) add_laplace(theta, config.lambda, rng);
    for (auto& attn : grad.attn_grad) add_laplace(attn, config.lambda, rng);
    for (auto& [index, g] : grad.item_grads) add_laplace(g, config.lambda, rng);
  }
}

Eigen::MatrixXd materialize_item_release(const GradientSet& grad,
                                         const LdpConfig& config,
                                         std::size_t num_items, Rng& rng) {
  const auto h = grad.user_grad.size();
  Eigen::MatrixXd release = Eigen::MatrixXd::Zero(h, static_cast<Eigen::Index>(num_items));
  std::unordered_set<std::size_t> touched;
  for (const auto& [index, g] : grad.item_grads) {
    release.col(static_cast<Eigen::Index>(index)) = g;  // already clipped+noised
    touched.insert(index);
  }
  if (config.enabled && config.lambda > 0.0) {
    // Untouched columns come after the touched draws in stream order.
    for (std::size_t i = 0; i < num_items; ++i) {
      if (touched.contains(i)) continue;
      add_laplace(release.col(static_cast<Eigen::Index>(i)), config.lambda, rng);
    }
  }
  return release;
}

double privacy_budget(const LdpConfig& config) {
  if (config.delta <= 0.0) throw ConfigError("clipping threshold delta must be > 0");
  if (config.lambda == 0.0) return std::numeric_limits<double>::infinity();
  return 2.0 * config.delta / config.lambda;
}

}  // namespace fairfed
