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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fluentrl/errors.hpp"
#include "fluentrl/policy.hpp"

namespace fluentrl {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.1;
  // Bound on |normalized update| per parameter, before the learning rate.
  double update_clip = 1.0;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer.beta1 must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer.beta2 must be in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("optimizer.eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
    if (!(update_clip > 0.0)) throw ConfigError("optimizer.update_clip must be > 0");
  }
};

// AdamW with StableAdamW-style update clipping. For each parameter the step
// size is divided by max(1, sqrt(g^2 / v_hat)), so a gradient far above its
// running second moment cannot produce a large step, and the normalized
// update is finally clamped to [-update_clip, update_clip]. Weight decay is
// decoupled: theta -= lr * wd * theta.
class StableAdamW {
 public:
  StableAdamW() = default;
  StableAdamW(std::size_t n, OptimizerConfig cfg = {}) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {
    cfg_.validate();
  }

  std::uint64_t steps() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }

  // Minimizes: params -= lr * update(grad). Bumps params.version.
  void step(PolicyParams& params, std::span<const double> grad, double lr) {
    step(std::span<double>(params.values), grad, lr);
    ++params.version;
  }

  void step(std::span<double> values, std::span<const double> grad, double lr) {
    if (values.size() != m_.size() || grad.size() != m_.size()) {
      throw InputError("optimizer: parameter/gradient size mismatch");
    }
    for (double g : grad) {
      if (!std::isfinite(g)) throw TrainingError("optimizer: non-finite gradient");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m_[i] / bc1;
      const double v_hat = v_[i] / bc2;
      const double rms = std::sqrt(g * g / std::max(v_hat, cfg_.eps * cfg_.eps));
      double u = m_hat / (std::sqrt(v_hat) + cfg_.eps) / std::max(1.0, rms);
      u = std::clamp(u, -cfg_.update_clip, cfg_.update_clip);
      values[i] -= lr * (u + cfg_.weight_decay * values[i]);
    }
  }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t t_ = 0;
};

// Linear warm-up over the first `warmup_steps`, then constant.
inline double warmup_lr(double base_lr, std::size_t step_index, std::size_t warmup_steps) {
  if (warmup_steps == 0 || step_index >= warmup_steps) return base_lr;
  return base_lr * static_cast<double>(step_index + 1) / static_cast<double>(warmup_steps);
}

}  // namespace fluentrl
