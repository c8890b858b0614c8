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

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentrl/chat.hpp"
#include "fluentrl/errors.hpp"
#include "fluentrl/judge.hpp"
#include "fluentrl/kl.hpp"
#include "fluentrl/optimizer.hpp"
#include "fluentrl/parallel.hpp"
#include "fluentrl/pg_objective.hpp"
#include "fluentrl/policy.hpp"
#include "fluentrl/rng.hpp"
#include "fluentrl/vocabulary.hpp"

namespace fluentrl {

struct PromptRecord {
  std::string prompt;
  std::string gold_response;
};

inline void to_json(nlohmann::json& j, const PromptRecord& p) {
  j = nlohmann::json{{"prompt", p.prompt}, {"gold_response", p.gold_response}};
}
inline void from_json(const nlohmann::json& j, PromptRecord& p) {
  j.at("prompt").get_to(p.prompt);
  p.gold_response = j.value("gold_response", std::string{});
}

inline std::vector<PromptRecord> read_prompts_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read prompts " + path.string());
  std::vector<PromptRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<PromptRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_prompts_jsonl(const std::filesystem::path& path, std::span<const PromptRecord> prompts) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& p : prompts) out << nlohmann::json(p).dump() << '\n';
}

struct PipelineConfig {
  std::size_t prompts_per_step = 8;
  std::size_t group_size = 4;
  std::size_t delay = 3;
  std::size_t total_steps = 200;
  double learning_rate = 1e-6;
  KlConfig kl;
  SamplerConfig sampler;
  AdvantageConfig advantage;
  OptimizerConfig optimizer{0.9, 0.99, 1e-8, 0.0, 1.0};
  std::size_t sampler_workers = 1;
  std::size_t judge_workers = 1;
  std::size_t trainer_workers = 1;
  // false: every stage of step t ends before any stage of step t+1 starts.
  // true: stages of consecutive steps share ticks, bounded by the delay.
  bool overlap_stages = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (delay < 1) throw ConfigError("pipeline.delay must be >= 1");
    if (prompts_per_step < 1) throw ConfigError("pipeline.prompts_per_step must be >= 1");
    if (group_size < 2) throw ConfigError("pipeline.group_size must be >= 2");
    if (!(learning_rate >= 0.0)) throw ConfigError("pipeline.learning_rate must be >= 0");
    kl.validate();
    optimizer.validate();
    if (kl.estimator == KlEstimator::kExact) throw ConfigError("pipeline.kl.estimator cannot be exact");
  }
};

struct StepReport {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double mean_abs_advantage = 0.0;
  double kl_mean = 0.0;
  double grad_norm = 0.0;
  std::uint64_t sampling_version = 0;
  std::uint64_t update_version = 0;
  std::size_t judge_retries = 0;
  double duration_ms = 0.0;

  // Wall-clock duration is not part of a step's identity.
  bool operator==(const StepReport& o) const {
    return step == o.step && mean_reward == o.mean_reward &&
           mean_abs_advantage == o.mean_abs_advantage && kl_mean == o.kl_mean &&
           grad_norm == o.grad_norm && sampling_version == o.sampling_version &&
           update_version == o.update_version && judge_retries == o.judge_retries;
  }
};

inline void to_json(nlohmann::json& j, const StepReport& r) {
  j = nlohmann::json{{"step", r.step},
                     {"mean_reward", r.mean_reward},
                     {"mean_abs_advantage", r.mean_abs_advantage},
                     {"kl_mean", r.kl_mean},
                     {"grad_norm", r.grad_norm},
                     {"sampling_version", r.sampling_version},
                     {"update_version", r.update_version},
                     {"judge_retries", r.judge_retries},
                     {"duration_ms", r.duration_ms}};
}

struct PolicySnapshot {
  std::uint64_t version = 0;
  PolicyParams params;
};

using SnapshotPtr = std::shared_ptr<const PolicySnapshot>;

// Keeps the most recent `capacity` published versions.
class SnapshotStore {
 public:
  explicit SnapshotStore(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("snapshot store capacity must be positive");
  }

  SnapshotPtr publish(const PolicyParams& params) {
    params.validate();
    std::lock_guard lock(mu_);
    if (!ring_.empty() && params.version <= ring_.back()->version) {
      throw LifecycleError("snapshot versions must strictly increase");
    }
    auto snap = std::make_shared<const PolicySnapshot>(PolicySnapshot{params.version, params});
    ring_.push_back(snap);
    if (ring_.size() > capacity_) ring_.pop_front();
    return snap;
  }

  SnapshotPtr get(std::uint64_t version) const {
    std::lock_guard lock(mu_);
    for (const auto& s : ring_) {
      if (s->version == version) return s;
    }
    if (!ring_.empty() && version < ring_.front()->version) {
      throw LifecycleError("snapshot version " + std::to_string(version) + " was evicted");
    }
    throw LifecycleError("snapshot version " + std::to_string(version) + " was never published");
  }

  std::optional<std::uint64_t> latest() const {
    std::lock_guard lock(mu_);
    if (ring_.empty()) return std::nullopt;
    return ring_.back()->version;
  }

  std::vector<std::uint64_t> versions() const {
    std::lock_guard lock(mu_);
    std::vector<std::uint64_t> out;
    for (const auto& s : ring_) out.push_back(s->version);
    return out;
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::deque<SnapshotPtr> ring_;
};

enum class Stage { kSampler, kJudge, kTrainer };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kSampler: return "sampler";
    case Stage::kJudge: return "judge";
    case Stage::kTrainer: return "trainer";
  }
  return "?";
}

struct StageEvent {
  Stage stage;
  std::size_t step;
  std::size_t tick;
  std::chrono::steady_clock::time_point start;
  std::chrono::steady_clock::time_point end;
};

// Everything the stages share besides parameters.
struct RlEnvironment {
  const Vocabulary* vocab = nullptr;
  JudgeBackend* judge = nullptr;
  std::string judge_template = "{{input}}";
  JudgeOptions judge_options;
};

struct RlCallbacks {
  // Runs on the trainer after each update, with the updated parameters.
  std::function<void(const StepReport&, const PolicyParams&)> on_step;
};

struct RlResult {
  PolicyParams params;
  std::vector<StepReport> reports;
  std::vector<StageEvent> events;
};

namespace detail {

struct SampledBatch {
  std::size_t step = 0;
  SnapshotPtr snapshot;
  std::vector<std::size_t> prompt_indices;
  std::vector<ResponseGroup> groups;
};

struct JudgedBatch {
  SampledBatch batch;
  std::size_t retries = 0;
  std::chrono::steady_clock::time_point sampled_at;
};

// Prompt for a dataset entry: a single user turn.
inline Conversation prompt_conversation(const PromptRecord& p) {
  return Conversation{{Message{"user", p.prompt}}};
}

// Prompt indices for a step: consecutive slices of a stream of epoch-wise
// permutations, so each epoch visits every prompt once.
class PromptSchedule {
 public:
  PromptSchedule(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::vector<std::size_t> for_step(std::size_t step, std::size_t per_step) {
    std::vector<std::size_t> out;
    out.reserve(per_step);
    const std::size_t begin = (step - 1) * per_step;
    for (std::size_t i = begin; i < begin + per_step; ++i) {
      const std::size_t epoch = i / n_;
      out.push_back(permutation(epoch)[i % n_]);
    }
    return out;
  }

 private:
  const std::vector<std::size_t>& permutation(std::size_t epoch) {
    std::lock_guard lock(mu_);
    while (perms_.size() <= epoch) {
      std::vector<std::size_t> p(n_);
      std::iota(p.begin(), p.end(), 0);
      Rng rng(derive_seed(seed_, 0x9A0, perms_.size()));
      shuffle(p, rng);
      perms_.push_back(std::move(p));
    }
    return perms_[epoch];
  }

  std::size_t n_;
  std::uint64_t seed_;
  std::mutex mu_;
  std::deque<std::vector<std::size_t>> perms_;
};

}  // namespace detail

// Synchronous sampler -> judge -> trainer loop. Work advances in ticks; within
// a tick each stage handles at most one step and all stages join before the
// next tick. Step t samples from the snapshot of version max(0, t - delay).
// Without overlap_stages a tick runs a single stage, so steps never interleave.
inline RlResult run_rl_training(const PolicyParams& initial, std::span<const PromptRecord> prompts,
                                const PipelineConfig& cfg, const RlEnvironment& env,
                                const RlCallbacks& callbacks = {}) {
  cfg.validate();
  initial.validate();
  if (prompts.empty()) throw InputError("run_rl_training: empty prompt dataset");
  if (env.vocab == nullptr || env.judge == nullptr) throw ConfigError("run_rl_training: missing vocab or judge");
  cfg.sampler.validate(initial.arch.V());

  std::vector<TokenSequence> prompt_tokens;
  prompt_tokens.reserve(prompts.size());
  for (const auto& p : prompts) {
    TokenSequence seq = render_prompt(detail::prompt_conversation(p), *env.vocab);
    detail::check_tokens(initial.arch, seq.ids);
    prompt_tokens.push_back(std::move(seq));
  }

  const PolicyParams reference = initial;
  PolicyParams working = initial;
  StableAdamW optimizer(working.size(), cfg.optimizer);
  SnapshotStore store(cfg.delay + 1);
  const std::uint64_t base_version = initial.version;
  store.publish(working);
  detail::PromptSchedule schedule(prompts.size(), cfg.seed);

  auto sample = [&](std::size_t step, std::size_t attempt, SnapshotPtr snap) {
    detail::SampledBatch b;
    b.step = step;
    const std::uint64_t v = base_version + (step > cfg.delay ? step - cfg.delay : 0);
    b.snapshot = snap ? std::move(snap) : store.get(v);
    b.prompt_indices = schedule.for_step(step, cfg.prompts_per_step);
    b.groups.resize(cfg.prompts_per_step);
    for (std::size_t p = 0; p < cfg.prompts_per_step; ++p) {
      auto& g = b.groups[p];
      g.prompt_index = b.prompt_indices[p];
      g.prompt = prompt_tokens[g.prompt_index];
      g.responses.resize(cfg.group_size);
      g.sampled_version = v;
    }
    const std::size_t items = cfg.prompts_per_step * cfg.group_size;
    parallel_for(items, cfg.sampler_workers, [&](std::size_t i) {
      const std::size_t p = i / cfg.group_size, m = i % cfg.group_size;
      Rng rng(derive_seed(cfg.seed, 0x5A3, step, p, m, attempt));
      b.groups[p].responses[m] = sample_response(b.snapshot->params, b.groups[p].prompt, cfg.sampler, rng);
    });
    return b;
  };

  auto judge = [&](detail::SampledBatch b) {
    detail::JudgedBatch out;
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt > 0) b = sample(b.step, attempt, b.snapshot);
      std::vector<JudgeRequest> requests;
      std::vector<std::string> ids;
      for (const auto& g : b.groups) {
        const PromptRecord& rec = prompts[g.prompt_index];
        for (const auto& r : g.responses) {
          auto resp = r.response();
          if (!resp.empty() && resp.back() == cfg.sampler.eos) resp = resp.first(resp.size() - 1);
          requests.push_back({detail::prompt_conversation(rec).messages, rec.gold_response,
                              env.vocab->detokenize(resp)});
          ids.push_back("step" + std::to_string(b.step) + "/prompt" + std::to_string(g.prompt_index));
        }
      }
      try {
        const auto outcomes = judge_batch(*env.judge, env.judge_template, requests, cfg.judge_workers,
                                          env.judge_options, ids);
        std::size_t k = 0;
        for (auto& g : b.groups) {
          g.rewards.clear();
          for (std::size_t m = 0; m < g.responses.size(); ++m) g.rewards.push_back(outcomes[k++].reward);
        }
        out.batch = std::move(b);
        out.retries = attempt;
        return out;
      } catch (const JudgeTransportError& e) {
        if (attempt >= 1) {
          throw TrainingError("judge failed twice at step " + std::to_string(b.step) + ": " + e.what());
        }
      }
    }
  };

  RlResult result;
  auto train = [&](detail::JudgedBatch jb) {
    auto& groups = jb.batch.groups;
    for (auto& g : groups) g.compute_advantages(cfg.advantage);
    const StepDiagnostics diag = diagnose(groups, {});
    std::vector<double> grad = policy_loss_grad(working, groups, cfg.trainer_workers);
    const double kl = mean_kl(working, reference, groups, cfg.kl.estimator);
    if (cfg.kl.beta > 0.0) {
      const auto kg = kl_loss_grad(working, reference, groups, cfg.kl.estimator, cfg.trainer_workers);
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += cfg.kl.beta * kg[i];
    }
    double norm = 0.0;
    for (double x : grad) norm += x * x;
    optimizer.step(working, grad, cfg.learning_rate);
    store.publish(working);
    StepReport rep;
    rep.step = jb.batch.step;
    rep.mean_reward = diag.mean_reward;
    rep.mean_abs_advantage = diag.mean_abs_advantage;
    rep.kl_mean = kl;
    rep.grad_norm = std::sqrt(norm);
    rep.sampling_version = jb.batch.snapshot->version;
    rep.update_version = working.version;
    rep.judge_retries = jb.retries;
    rep.duration_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - jb.sampled_at).count();
    result.reports.push_back(rep);
    if (callbacks.on_step) callbacks.on_step(rep, working);
  };

  std::optional<detail::SampledBatch> sampled;  // capacity-1 queue sampler -> judge
  std::optional<detail::JudgedBatch> judged;    // capacity-1 queue judge -> trainer
  std::size_t next_sample = 1, trained = 0;
  std::mutex event_mu;
  auto timed = [&](Stage stage, std::size_t step, std::size_t tick, auto&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto value = fn();
    const auto end = std::chrono::steady_clock::now();
    std::lock_guard lock(event_mu);
    result.events.push_back({stage, step, tick, start, end});
    return value;
  };

  for (std::size_t tick = 0; trained < cfg.total_steps; ++tick) {
    // Decide what runs this tick from the state at the barrier.
    const std::uint64_t latest = *store.latest() - base_version;
    const bool can_sample = next_sample <= cfg.total_steps && !sampled &&
                            (next_sample <= cfg.delay || next_sample - cfg.delay <= latest) &&
                            (cfg.overlap_stages || trained + 1 == next_sample);
    const bool can_judge = sampled.has_value() && !judged;
    const bool can_train = judged.has_value();

    std::optional<detail::SampledBatch> to_judge;
    std::optional<detail::JudgedBatch> to_train;
    if (can_judge) to_judge = std::move(sampled), sampled.reset();
    if (can_train) to_train = std::move(judged), judged.reset();

    std::future<detail::SampledBatch> f_sample;
    std::future<detail::JudgedBatch> f_judge;
    std::future<int> f_train;
    const std::size_t sample_step = next_sample;
    if (can_sample) {
      f_sample = std::async(std::launch::async, [&, sample_step, tick] {
        return timed(Stage::kSampler, sample_step, tick, [&] {
          return sample(sample_step, 0, nullptr);
        });
      });
    }
    if (to_judge) {
      const std::size_t s = to_judge->step;
      f_judge = std::async(std::launch::async, [&, s, tick] {
        return timed(Stage::kJudge, s, tick, [&] {
          const auto t0 = std::chrono::steady_clock::now();
          auto jb = judge(std::move(*to_judge));
          jb.sampled_at = t0;
          return jb;
        });
      });
    }
    if (to_train) {
      const std::size_t s = to_train->batch.step;
      f_train = std::async(std::launch::async, [&, s, tick] {
        return timed(Stage::kTrainer, s, tick, [&] {
          train(std::move(*to_train));
          return 0;
        });
      });
    }
    // Barrier: every stage finishes this tick before anything else starts.
    std::exception_ptr failure;
    auto join = [&](auto& fut, auto&& sink) {
      if (!fut.valid()) return;
      try {
        sink(fut.get());
      } catch (...) {
        if (!failure) failure = std::current_exception();
      }
    };
    join(f_train, [&](int) { ++trained; });
    join(f_judge, [&](detail::JudgedBatch jb) { judged = std::move(jb); });
    join(f_sample, [&](detail::SampledBatch b) {
      sampled = std::move(b);
      ++next_sample;
    });
    if (failure) std::rethrow_exception(failure);
    if (!can_sample && !can_judge && !can_train) throw InternalError("pipeline made no progress");
  }
  result.params = std::move(working);
  return result;
}

struct RewardCurve {
  std::vector<double> values;
  double slope = 0.0;
};

// Ordinary least-squares slope of ys against 0..n-1.
inline double least_squares_slope(std::span<const double> ys) {
  const std::size_t n = ys.size();
  if (n < 2) return 0.0;
  const double mx = (static_cast<double>(n) - 1.0) / 2.0;
  double my = 0.0;
  for (double y : ys) my += y;
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - mx;
    sxy += dx * (ys[i] - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

inline RewardCurve mean_reward_curve(std::span<const StepReport> reports) {
  if (reports.empty()) throw InputError("mean_reward_curve: no reports");
  RewardCurve c;
  for (const auto& r : reports) c.values.push_back(r.mean_reward);
  c.slope = least_squares_slope(c.values);
  return c;
}

}  // namespace fluentrl
