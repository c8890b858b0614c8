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
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentrl/chat.hpp"
#include "fluentrl/errors.hpp"
#include "fluentrl/optimizer.hpp"
#include "fluentrl/parallel.hpp"
#include "fluentrl/policy.hpp"
#include "fluentrl/rng.hpp"

namespace fluentrl {

struct SftHyper {
  double learning_rate = 2e-6;
  double warmup_fraction = 0.10;
  std::size_t batch_size = 32;
  std::size_t max_seq_len = 128;
  double weight_decay = 0.1;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;  // weight_decay above overrides optimizer.weight_decay
  std::size_t workers = 1;

  OptimizerConfig optimizer_config() const {
    OptimizerConfig c = optimizer;
    c.weight_decay = weight_decay;
    return c;
  }

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("sft.learning_rate must be >= 0");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
      throw ConfigError("sft.warmup_fraction must be in [0,1)");
    }
    if (batch_size == 0) throw ConfigError("sft.batch_size must be positive");
    if (max_seq_len < 2) throw ConfigError("sft.max_seq_len must be >= 2");
    if (!(weight_decay >= 0.0)) throw ConfigError("sft.weight_decay must be >= 0");
    optimizer_config().validate();
  }
};

// Adds the gradient of the summed masked NLL to `grad` (if non-empty).
// Returns {summed NLL, number of masked targets}.
inline std::pair<double, std::size_t> masked_nll(const PolicyParams& params,
                                                 const RenderedChat& ex, std::span<double> grad,
                                                 std::size_t max_seq_len = SIZE_MAX) {
  const std::size_t n = std::min(ex.ids.size(), max_seq_len);
  std::vector<double> weights(n, 0.0);
  std::size_t count = 0;
  for (std::size_t t = 1; t < n; ++t) {
    if (ex.loss_mask[t]) {
      weights[t] = -1.0;
      ++count;
    }
  }
  if (count == 0) return {0.0, 0};
  const double neg = accumulate_logprob_grad(params, std::span<const TokenId>(ex.ids).first(n),
                                             weights, grad);
  return {neg, count};
}

// One optimizer update on the token-mean masked NLL of `batch`. Returns the
// loss before the update.
inline double sft_step(PolicyParams& params, StableAdamW& optimizer,
                       std::span<const RenderedChat> batch, const SftHyper& hyper, double lr,
                       std::size_t batch_id = 0) {
  if (batch.empty()) throw InputError("sft_step: empty batch");
  std::vector<std::vector<double>> partial(batch.size());
  std::vector<double> nll(batch.size());
  std::vector<std::size_t> counts(batch.size());
  parallel_for(batch.size(), hyper.workers, [&](std::size_t i) {
    partial[i].assign(params.size(), 0.0);
    auto [l, c] = masked_nll(params, batch[i], partial[i], hyper.max_seq_len);
    nll[i] = l;
    counts[i] = c;
  });
  std::vector<double> grad(params.size(), 0.0);
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += nll[i];
    tokens += counts[i];
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += partial[i][k];
  }
  if (tokens == 0) {
    optimizer.step(params, grad, lr);
    return 0.0;
  }
  const double loss = total / static_cast<double>(tokens);
  if (!std::isfinite(loss)) {
    throw TrainingError("sft_step: non-finite loss in batch " + std::to_string(batch_id));
  }
  for (double& g : grad) g /= static_cast<double>(tokens);
  optimizer.step(params, grad, lr);
  return loss;
}

struct SftEpochReport {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double mean_loss = 0.0;
};

inline void to_json(nlohmann::json& j, const SftEpochReport& r) {
  j = {{"epoch", r.epoch}, {"steps", r.steps}, {"mean_loss", r.mean_loss}};
}

struct SftResult {
  PolicyParams params;
  std::vector<SftEpochReport> epochs;
  std::size_t total_steps = 0;
};

// Optimizer steps per epoch; the trailing partial batch is dropped.
inline std::size_t sft_steps_per_epoch(std::size_t dataset_size, std::size_t batch_size) {
  return dataset_size / batch_size;
}

// Shuffled epochs with linear warm-up over the first warmup_fraction of all
// steps. `on_epoch` runs after every epoch (for evaluation cadences).
template <typename OnEpoch>
SftResult run_sft(PolicyParams params, std::span<const RenderedChat> dataset,
                  const SftHyper& hyper, OnEpoch&& on_epoch) {
  hyper.validate();
  SftResult result;
  if (hyper.epochs == 0) {
    result.params = std::move(params);
    return result;
  }
  if (dataset.empty()) throw InputError("run_sft: empty dataset");
  const std::size_t per_epoch = sft_steps_per_epoch(dataset.size(), hyper.batch_size);
  if (per_epoch == 0) {
    throw ConfigError("run_sft: dataset smaller than sft.batch_size");
  }
  const std::size_t total = per_epoch * hyper.epochs;
  const auto warmup = static_cast<std::size_t>(hyper.warmup_fraction * static_cast<double>(total));
  StableAdamW optimizer(params.size(), hyper.optimizer_config());
  std::vector<std::size_t> order(dataset.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(hyper.seed, epoch));
    shuffle(order, rng);
    SftEpochReport rep;
    rep.epoch = epoch;
    double loss_sum = 0.0;
    std::vector<RenderedChat> batch;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      batch.clear();
      for (std::size_t i = 0; i < hyper.batch_size; ++i) {
        batch.push_back(dataset[order[b * hyper.batch_size + i]]);
      }
      loss_sum += sft_step(params, optimizer, batch, hyper,
                           warmup_lr(hyper.learning_rate, step, warmup), step);
      ++step;
    }
    rep.steps = per_epoch;
    rep.mean_loss = loss_sum / static_cast<double>(per_epoch);
    result.epochs.push_back(rep);
    on_epoch(params, rep);
  }
  result.total_steps = step;
  result.params = std::move(params);
  return result;
}

inline SftResult run_sft(PolicyParams params, std::span<const RenderedChat> dataset,
                         const SftHyper& hyper) {
  return run_sft(std::move(params), dataset, hyper, [](const PolicyParams&, const SftEpochReport&) {});
}

}  // namespace fluentrl
