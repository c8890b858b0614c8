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

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fluentrl/optimizer.hpp"

using namespace fluentrl;

namespace {

// Scalar reference implementation written from the update rule.
struct RefAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double x, double g, double lr, const OptimizerConfig& c) {
    ++t;
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    const double mh = m / (1 - std::pow(c.beta1, t)), vh = v / (1 - std::pow(c.beta2, t));
    double u = mh / (std::sqrt(vh) + c.eps);
    const double ratio = std::sqrt(g * g / std::max(vh, c.eps * c.eps));
    if (ratio > 1) u /= ratio;
    if (u > c.update_clip) u = c.update_clip;
    if (u < -c.update_clip) u = -c.update_clip;
    return x - lr * (u + c.weight_decay * x);
  }
};

}  // namespace

TEST(StableAdamW, FirstStepIsSignedLearningRate) {
  OptimizerConfig c;
  c.weight_decay = 0.0;
  StableAdamW opt(3, c);
  std::vector<double> x = {1.0, 2.0, 3.0};
  const std::vector<double> g = {0.5, -4.0, 1e-3};
  opt.step(x, g, 0.1);
  EXPECT_NEAR(x[0], 0.9, 1e-6);
  EXPECT_NEAR(x[1], 2.1, 1e-6);
  EXPECT_NEAR(x[2], 2.9, 1e-4);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(StableAdamW, MatchesScalarReference) {
  OptimizerConfig c;
  c.weight_decay = 0.05;
  StableAdamW opt(1, c);
  RefAdam ref;
  std::vector<double> x = {0.7};
  double y = 0.7;
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    // Occasional spikes exercise the update clipping.
    const double g = standard_normal(rng) * (i % 37 == 0 ? 50.0 : 1.0);
    opt.step(x, std::vector<double>{g}, 1e-2);
    y = ref.step(y, g, 1e-2, c);
    ASSERT_NEAR(x[0], y, 1e-12) << i;
  }
}

TEST(StableAdamW, GradientSpikeIsDamped) {
  OptimizerConfig c;
  c.weight_decay = 0.0;
  StableAdamW opt(1, c);
  std::vector<double> x = {0.0};
  for (int i = 0; i < 50; ++i) opt.step(x, std::vector<double>{1e-3}, 1.0);
  const double before = x[0];
  opt.step(x, std::vector<double>{1e3}, 1.0);
  EXPECT_LE(std::abs(x[0] - before), c.update_clip + 1e-12);
}

TEST(StableAdamW, DecoupledWeightDecayWithZeroGradient) {
  OptimizerConfig c;
  c.weight_decay = 0.1;
  StableAdamW opt(1, c);
  std::vector<double> x = {2.0};
  opt.step(x, std::vector<double>{0.0}, 0.5);
  EXPECT_DOUBLE_EQ(x[0], 2.0 - 0.5 * 0.1 * 2.0);
}

TEST(StableAdamW, MinimizesQuadratic) {
  OptimizerConfig c;
  c.weight_decay = 0.0;
  StableAdamW opt(2, c);
  std::vector<double> x = {3.0, -2.0};
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> g = {2 * (x[0] - 1), 4 * (x[1] + 1)};
    opt.step(x, g, 1e-2);
  }
  EXPECT_NEAR(x[0], 1.0, 1e-2);
  EXPECT_NEAR(x[1], -1.0, 1e-2);
}

TEST(StableAdamW, VersionBumpsAndErrors) {
  auto p = PolicyParams::zeros(PolicyArch{10, 3, 4, 8});
  StableAdamW opt(p.size());
  opt.step(p, std::vector<double>(p.size(), 0.1), 1e-3);
  EXPECT_EQ(p.version, 1u);
  EXPECT_THROW(opt.step(p, std::vector<double>(3, 0.1), 1e-3), InputError);
  std::vector<double> bad(p.size(), 0.0);
  bad[5] = std::nan("");
  EXPECT_THROW(opt.step(p, bad, 1e-3), TrainingError);
  OptimizerConfig c;
  c.beta2 = 1.0;
  EXPECT_THROW(StableAdamW(3, c), ConfigError);
}

TEST(Warmup, LinearThenConstant) {
  EXPECT_DOUBLE_EQ(warmup_lr(1.0, 0, 4), 0.25);
  EXPECT_DOUBLE_EQ(warmup_lr(1.0, 3, 4), 1.0);
  EXPECT_DOUBLE_EQ(warmup_lr(1.0, 10, 4), 1.0);
  EXPECT_DOUBLE_EQ(warmup_lr(2.0, 0, 0), 2.0);
}
