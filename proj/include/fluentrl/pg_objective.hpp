// Copyright 2026 The FluentRL Authors.
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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentrl/errors.hpp"
#include "fluentrl/parallel.hpp"
#include "fluentrl/policy.hpp"

namespace fluentrl {

enum class StdMode { kPopulation, kSample };

struct AdvantageConfig {
  StdMode std_mode = StdMode::kPopulation;
  // Groups whose reward dispersion falls below this get all-zero advantages.
  double dispersion_floor = 1e-8;
};

// (r_i - mean(r)) / std(r) over one group.
//
// Computed from the integer-like deviations G*r_i - sum(r), which are exact
// whenever the rewards sit on a coarse grid (judge scores are integers), so a
// constant shift of the rewards leaves the result bit-identical.
inline std::vector<double> group_advantages(std::span<const double> rewards,
                                            const AdvantageConfig& cfg = {}) {
  const std::size_t G = rewards.size();
  if (G < 2) throw ConfigError("group_advantages: group size must be >= 2");
  for (double r : rewards) {
    if (!std::isfinite(r)) throw InputError("group_advantages: non-finite reward");
  }
  const auto n = static_cast<double>(G);
  double sum = 0.0;
  for (double r : rewards) sum += r;
  std::vector<double> dev(G);
  double sq = 0.0;
  for (std::size_t i = 0; i < G; ++i) {
    dev[i] = n * rewards[i] - sum;
    sq += dev[i] * dev[i];
  }
  const double divisor = cfg.std_mode == StdMode::kPopulation ? n : n - 1.0;
  // denom = G * std(r)
  const double denom = std::sqrt(sq / divisor);
  std::vector<double> adv(G, 0.0);
  if (denom / n < cfg.dispersion_floor) return adv;
  for (std::size_t i = 0; i < G; ++i) adv[i] = dev[i] / denom;
  return adv;
}

// One prompt with G sampled continuations. Each response is stored as the full
// prompt+response sequence.
struct ResponseGroup {
  std::size_t prompt_index = 0;
  TokenSequence prompt;
  std::vector<TokenSequence> responses;
  std::vector<double> rewards;
  std::optional<std::vector<double>> advantages;
  std::uint64_t sampled_version = 0;

  std::size_t total_response_tokens() const {
    std::size_t n = 0;
    for (const auto& r : responses) n += r.response_length();
    return n;
  }

  void compute_advantages(const AdvantageConfig& cfg = {}) {
    if (rewards.size() != responses.size()) {
      throw StateError("response group: rewards and responses differ in count");
    }
    advantages = group_advantages(rewards, cfg);
  }
};

// Loss gradient with group advantages and length-bias correction:
//   -(1/N) sum_groups (1 / sum_i |y_i|) sum_i A_i sum_j grad log pi(y_ij | x, y_i<j)
// Per-group terms are reduced in group order, so `workers` never changes the
// result.
inline std::vector<double> policy_loss_grad(const PolicyParams& params,
                                            std::span<const ResponseGroup> groups,
                                            std::size_t workers = 1) {
  std::vector<double> grad(params.size(), 0.0);
  if (groups.empty()) return grad;
  for (const auto& g : groups) {
    if (!g.advantages) throw StateError("policy_loss_grad: advantages not computed");
    if (g.advantages->size() != g.responses.size()) {
      throw StateError("policy_loss_grad: advantage count mismatch");
    }
  }
  std::vector<std::vector<double>> partial(groups.size());
  parallel_for(groups.size(), workers, [&](std::size_t gi) {
    const ResponseGroup& g = groups[gi];
    std::vector<double>& buf = partial[gi];
    buf.assign(params.size(), 0.0);
    const std::size_t total = g.total_response_tokens();
    if (total == 0) return;
    for (std::size_t i = 0; i < g.responses.size(); ++i) {
      const double a = (*g.advantages)[i];
      if (a == 0.0) continue;
      const double w = -a / static_cast<double>(total);
      accumulate_logprob_grad(params, g.responses[i].ids, response_weights(g.responses[i], w),
                              buf);
    }
  });
  const double inv_n = 1.0 / static_cast<double>(groups.size());
  for (const auto& buf : partial) {
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += buf[k];
  }
  for (double& x : grad) x *= inv_n;
  return grad;
}

// Plain REINFORCE: -r * grad log pi(y|x). Kept as a baseline for comparisons.
inline std::vector<double> reinforce_grad(const PolicyParams& params, const TokenSequence& seq,
                                          double reward) {
  if (!std::isfinite(reward)) throw InputError("reinforce_grad: non-finite reward");
  std::vector<double> grad(params.size(), 0.0);
  if (reward == 0.0) return grad;
  detail::check_response(seq);
  accumulate_logprob_grad(params, seq.ids, response_weights(seq, -reward), grad);
  return grad;
}

struct StepDiagnostics {
  double mean_reward = 0.0;
  double mean_abs_advantage = 0.0;
  double grad_norm = 0.0;
};

inline StepDiagnostics diagnose(std::span<const ResponseGroup> groups,
                                std::span<const double> grad) {
  StepDiagnostics d;
  std::size_t n = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.rewards.size(); ++i) {
      d.mean_reward += g.rewards[i];
      if (g.advantages) d.mean_abs_advantage += std::abs((*g.advantages)[i]);
      ++n;
    }
  }
  if (n) {
    d.mean_reward /= static_cast<double>(n);
    d.mean_abs_advantage /= static_cast<double>(n);
  }
  double sq = 0.0;
  for (double x : grad) sq += x * x;
  d.grad_norm = std::sqrt(sq);
  return d;
}

inline void to_json(nlohmann::json& j, const StepDiagnostics& d) {
  j = {{"mean_reward", d.mean_reward},
       {"mean_abs_advantage", d.mean_abs_advantage},
       {"grad_norm", d.grad_norm}};
}

}  // namespace fluentrl
