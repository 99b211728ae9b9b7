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

#include "fairfed/fairness.hpp"

#include <algorithm>
#include <cmath>

#include "fairfed/errors.hpp"

namespace fairfed {

void FairnessConfig::validate() const {
  if (beta < 0.0 || beta >= 1.0) throw ConfigError("fairness budget beta must lie in [0,1)");
  if (alpha != 1 && alpha != 2) throw ConfigError("smoothness alpha must be 1 or 2");
  if (sigma < 0.0) throw ConfigError("group-stats noise sigma must be >= 0");
}

double disparity(const std::map<UserId, double>& per_user_metric,
                 const SensitiveAssignment& groups, int alpha) {
  double sum_s0 = 0.0, sum_s1 = 0.0;
  std::size_t n_s0 = 0, n_s1 = 0;
  for (const auto& [user, metric] : per_user_metric) {
    if (groups.group_of(user) == Group::kS0) {
      sum_s0 += metric;
      ++n_s0;
    } else {
      sum_s1 += metric;
      ++n_s1;
    }
  }
  if (n_s0 == 0) throw EvalError("disparity undefined: group S0 is empty");
  if (n_s1 == 0) throw EvalError("disparity undefined: group S1 is empty");
  const double gap = sum_s0 / static_cast<double>(n_s0) - sum_s1 / static_cast<double>(n_s1);
  return std::pow(std::abs(gap), alpha);
}

double scale_factor(const FairnessConfig& config, const GroupStats& stats,
                    Group membership) {
  if (config.beta == 0.0) return 1.0;
  // Equal stats carry no fairness direction; no adjustment.
  if (stats.p == stats.q) return 1.0;

  const double sign_gap = stats.p < stats.q ? -1.0 : 1.0;
  const double sign_member = membership == Group::kS0 ? 1.0 : -1.0;
  const double r = static_cast<double>(config.alpha) * sign_gap * sign_member;
  const double magnitude = std::pow(std::abs(stats.p - stats.q), config.alpha - 1);
  const double scale = 1.0 - config.beta * r * magnitude;
  return std::clamp(scale, 0.05, 2.0);
}

EpochNoise EpochNoise::draw(std::uint64_t master_seed, UserId user, std::size_t epoch,
                            double sigma) {
  EpochNoise noise;
  if (sigma == 0.0) return noise;
  Rng rng = substream(master_seed, "gstat_noise", static_cast<std::uint64_t>(user), epoch);
  noise.e1 = rng.normal(0.0, sigma);
  noise.e2 = rng.normal(0.0, sigma);
  noise.e3 = rng.normal(0.0, sigma);
  noise.e4 = rng.normal(0.0, sigma);
  return noise;
}

StatsContribution make_contribution(double metric, Group membership, double sigma,
                                    const EpochNoise& noise) {
  if (sigma < 0.0) throw ConfigError("group-stats noise sigma must be >= 0");
  const double in_s0 = membership == Group::kS0 ? 1.0 : 0.0;
  const double in_s1 = 1.0 - in_s0;
  StatsContribution c;
  c.p_per = in_s0 * metric + noise.e1;
  c.q_per = in_s1 * metric + noise.e2;
  c.p_add = in_s0 + noise.e3;
  c.q_add = in_s1 + noise.e4;
  return c;
}

AggregateResult aggregate_stats(std::span<const StatsContribution> contributions,
                                const GroupStats& previous) {
  if (contributions.empty()) throw TrainingError("aggregate_stats over zero contributions");
  double p_per = 0.0, p_add = 0.0, q_per = 0.0, q_add = 0.0;
  for (const StatsContribution& c : contributions) {
    p_per += c.p_per;
    p_add += c.p_add;
    q_per += c.q_per;
    q_add += c.q_add;
  }
  AggregateResult result;
  result.p_floored = std::abs(p_add) < kStatsDenominatorFloor;
  result.q_floored = std::abs(q_add) < kStatsDenominatorFloor;
  result.stats.p = result.p_floored ? previous.p : p_per / p_add;
  result.stats.q = result.q_floored ? previous.q : q_per / q_add;
  return result;
}

}  // namespace fairfed
