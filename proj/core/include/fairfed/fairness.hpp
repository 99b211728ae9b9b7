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
#include <map>
#include <span>
#include <vector>

#include "fairfed/data.hpp"
#include "fairfed/rng.hpp"

namespace fairfed {

struct FairnessConfig {
  double beta = 0.0;   // fairness budget, [0,1)
  int alpha = 1;       // smoothness, 1 or 2
  double sigma = 0.0;  // group-stats noise std

  void validate() const;
};

// Global group-average performance. With zero noise and every user reporting,
// P and Q are the exact group means of the per-user metric.
struct GroupStats {
  double p = 1.0;  // S0
  double q = 1.0;  // S1
};

// One user's noised group-statistics upload. With sigma = 0 exactly one of
// the (per, add) pairs is (M_u, 1), the other (0, 0).
struct StatsContribution {
  double p_per = 0.0;
  double p_add = 0.0;
  double q_per = 0.0;
  double q_add = 0.0;
};

// Per-user metric convention: performance is the negated utility loss. The
// sign lives here and nowhere else, so disparity and gradient scaling can
// never drift apart.
inline double performance_from_loss(double utility_loss) { return -utility_loss; }

// Group (un)fairness: |mean_{S0} M - mean_{S1} M|^alpha. Both groups must be
// represented in the metric map.
double disparity(const std::map<UserId, double>& per_user_metric,
                 const SensitiveAssignment& groups, int alpha);

// Per-user learning-rate multiplier L = 1 - beta * R * |P-Q|^(alpha-1) with
// R = alpha * (-1)^{1(P<Q)} * (-1)^{1(u not in S0)}. Superior group slowed,
// inferior sped up; equal stats leave L = 1. Clamped to [0.05, 2.0] to keep
// noisy-stats rounds bounded.
double scale_factor(const FairnessConfig& config, const GroupStats& stats,
                    Group membership);

// The four per-epoch noise draws of one user's contribution. Derived
// deterministically from (seed, user, epoch) so re-reads within an epoch are
// idempotent by construction.
struct EpochNoise {
  double e1 = 0.0;  // P_per
  double e2 = 0.0;  // Q_per
  double e3 = 0.0;  // P_add
  double e4 = 0.0;  // Q_add

  static EpochNoise draw(std::uint64_t master_seed, UserId user, std::size_t epoch,
                         double sigma);
};

StatsContribution make_contribution(double metric, Group membership, double sigma,
                                    const EpochNoise& noise);

// Denominators below this floor make the ratio meaningless; the previous
// epoch's value is retained instead.
constexpr double kStatsDenominatorFloor = 0.1;

struct AggregateResult {
  GroupStats stats;
  bool p_floored = false;
  bool q_floored = false;
};

AggregateResult aggregate_stats(std::span<const StatsContribution> contributions,
                                const GroupStats& previous);

}  // namespace fairfed
