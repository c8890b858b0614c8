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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentrl/chat.hpp"
#include "fluentrl/errors.hpp"
#include "fluentrl/fluency.hpp"
#include "fluentrl/grammar.hpp"
#include "fluentrl/judge.hpp"
#include "fluentrl/parallel.hpp"
#include "fluentrl/pipeline.hpp"
#include "fluentrl/policy.hpp"
#include "fluentrl/rng.hpp"
#include "fluentrl/sft.hpp"

namespace fluentrl {

class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PretrainConfig {
  std::size_t docs = 4000;
  std::size_t max_epochs = 40;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  double threshold = 0.95;     // required adherence
  double stop_adherence = 0.985;  // early stop once reached
};

struct SftArmConfig {
  std::size_t examples = 1000;
  std::size_t epochs = 3;
  double learning_rate = 3e-3;
  std::size_t batch_size = 32;
  double warmup_fraction = 0.1;
  double weight_decay = 0.0;
};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  PolicyArch arch{64, 8, 16, 32};
  double init_scale = 1.0;
  PretrainConfig pretrain;
  SftArmConfig sft_clean{256, 1, 1e-3, 32, 0.1, 0.0};
  SftArmConfig translated{1000, 3, 3e-3, 32, 0.1, 0.0};
  double corruption_rate = 0.3;
  CorruptionConfig corruption;
  bool run_control = true;
  PipelineConfig rl = default_rl();
  std::size_t rl_prompts = 24;
  std::size_t eval_every = 25;
  std::size_t adherence_samples = 512;
  std::size_t fluency_samples = 16;
  std::size_t scorer_pairs = 2000;
  ScorerHyper scorer = default_scorer();
  std::size_t workers = 1;

  static PipelineConfig default_rl() {
    PipelineConfig c;
    c.learning_rate = 3e-3;
    c.total_steps = 200;
    c.sampler.max_new_tokens = 16;
    return c;
  }

  static ScorerHyper default_scorer() {
    ScorerHyper s;
    s.arch = PolicyArch{64, 8, 8, 16};
    s.epochs = 20;
    return s;
  }

  void validate() const {
    if (seeds.empty()) throw ConfigError("experiment.seeds must be non-empty");
    arch.validate();
    if (!(corruption_rate >= 0.0 && corruption_rate <= 1.0)) {
      throw ConfigError("experiment.corruption_rate must be in [0,1]");
    }
    if (pretrain.docs < pretrain.batch_size) throw ConfigError("pretrain.docs smaller than batch");
    if (eval_every == 0) throw ConfigError("experiment.eval_every must be positive");
    if (adherence_samples == 0 || fluency_samples == 0) throw ConfigError("experiment: sample counts must be positive");
    if (fluency_samples > adherence_samples) throw ConfigError("experiment.fluency_samples exceeds adherence_samples");
    rl.validate();
    scorer.validate();
    corruption.validate();
  }
};

struct TrajectoryPoint {
  std::uint64_t seed = 0;
  std::string arm;
  std::size_t step = 0;
  double adherence = 0.0;
  double fluency_percent = 0.0;
  double mean_reward = 0.0;
};

inline void to_json(nlohmann::json& j, const TrajectoryPoint& p) {
  j = nlohmann::json{{"seed", p.seed},           {"arm", p.arm},
                     {"step", p.step},           {"adherence", p.adherence},
                     {"fluency_percent", p.fluency_percent}, {"mean_reward", p.mean_reward}};
}

struct SeedSummary {
  std::uint64_t seed = 0;
  double pretrain_adherence = 0.0;
  std::size_t pretrain_epochs = 0;
  double rl_start = 0.0;
  double rl_end = 0.0;
  double rl_reward_slope = 0.0;
  double translated_end = 0.0;
  std::optional<double> control_end;
  double seconds_pretrain = 0.0;
  double seconds_rl = 0.0;
  double seconds_translated = 0.0;
  double seconds_control = 0.0;
};

inline void to_json(nlohmann::json& j, const SeedSummary& s) {
  j = nlohmann::json{{"seed", s.seed},
                     {"pretrain_adherence", s.pretrain_adherence},
                     {"pretrain_epochs", s.pretrain_epochs},
                     {"rl_start", s.rl_start},
                     {"rl_end", s.rl_end},
                     {"rl_reward_slope", s.rl_reward_slope},
                     {"translated_end", s.translated_end},
                     {"control_end", s.control_end ? nlohmann::json(*s.control_end) : nlohmann::json(nullptr)},
                     {"seconds", {{"pretrain", s.seconds_pretrain},
                                  {"rl", s.seconds_rl},
                                  {"translated", s.seconds_translated},
                                  {"control", s.seconds_control}}}};
}

struct ExperimentSummary {
  double rl_start = 0.0;         // mean over seeds
  double rl_end = 0.0;
  double rl_reward_slope = 0.0;
  double translated_end = 0.0;
  std::optional<double> control_end;
  double scorer_accuracy = 0.0;  // held-out pairwise accuracy
  bool rl_stable = false;        // |rl_end - rl_start| < 0.05 and slope > 0
  bool translated_gap = false;   // rl_end - translated_end >= 0.05
  std::optional<bool> control_matches;  // |rl_end - control_end| < 0.03
};

inline void to_json(nlohmann::json& j, const ExperimentSummary& s) {
  j = nlohmann::json{{"rl_start", s.rl_start},
                     {"rl_end", s.rl_end},
                     {"rl_reward_slope", s.rl_reward_slope},
                     {"translated_end", s.translated_end},
                     {"control_end", s.control_end ? nlohmann::json(*s.control_end) : nlohmann::json(nullptr)},
                     {"scorer_accuracy", s.scorer_accuracy},
                     {"rl_stable", s.rl_stable},
                     {"translated_gap", s.translated_gap},
                     {"control_matches",
                      s.control_matches ? nlohmann::json(*s.control_matches) : nlohmann::json(nullptr)}};
}

struct ExperimentReport {
  std::vector<TrajectoryPoint> trajectory;
  std::vector<SeedSummary> seeds;
  ExperimentSummary summary;
};

inline void to_json(nlohmann::json& j, const ExperimentReport& r) {
  j = nlohmann::json{{"trajectory", r.trajectory}, {"seeds", r.seeds}, {"summary", r.summary}};
}

inline void write_trajectory_csv(const std::filesystem::path& path, std::span<const TrajectoryPoint> rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "seed,arm,step,adherence,fluency_percent,mean_reward\n";
  out.precision(10);
  for (const auto& p : rows) {
    out << p.seed << ',' << p.arm << ',' << p.step << ',' << p.adherence << ',' << p.fluency_percent
        << ',' << p.mean_reward << '\n';
  }
}

// Desk-scale data used by the experiment.
namespace corpus {

inline std::string topic_prompt(const ToyGrammar& g, int topic) {
  return g.vocab().label(g.topic_tag(topic));
}

// Native sentence after a topic tag; the sentence topic ignores the tag.
inline std::vector<Conversation> pretraining_conversations(const ToyGrammar& g, std::size_t n, Rng& rng) {
  std::vector<Conversation> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int tag = static_cast<int>(uniform_index(rng, ToyGrammar::kTopics));
    out.push_back(Conversation{{{"user", topic_prompt(g, tag)}, {"assistant", g.text(g.sample_native(rng))}}});
  }
  return out;
}

// Rendered for language-model pretraining: every token after bos is a target.
inline std::vector<RenderedChat> render_full_loss(std::span<const Conversation> convs, const Vocabulary& v) {
  std::vector<RenderedChat> out;
  out.reserve(convs.size());
  for (const auto& c : convs) {
    RenderedChat r = render_chat(c, v);
    std::fill(r.loss_mask.begin() + 1, r.loss_mask.end(), true);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<Conversation> foreign_conversations(const ToyGrammar& g, std::size_t n, Rng& rng) {
  std::vector<Conversation> out;
  out.reserve(n);
  const std::string tag = g.vocab().label(g.foreign_tag());
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(Conversation{{{"user", tag}, {"assistant", g.text(g.sample_foreign(rng))}}});
  }
  return out;
}

// On-topic native answers; a `rate` fraction of them pass through the
// corruption operator, standing in for machine-translated data.
inline std::vector<Conversation> translated_conversations(const ToyGrammar& g, std::size_t n, double rate,
                                                          const CorruptionConfig& cc, Rng& rng) {
  std::vector<Conversation> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int topic = static_cast<int>(uniform_index(rng, ToyGrammar::kTopics));
    std::vector<TokenId> s = g.sample_native(rng, topic);
    if (uniform01(rng) < rate) s = corrupt(g, s, cc, rng).tokens;
    out.push_back(Conversation{{{"user", topic_prompt(g, topic)}, {"assistant", g.text(s)}}});
  }
  return out;
}

inline std::vector<PromptRecord> rl_prompts(const ToyGrammar& g, std::size_t n, Rng& rng) {
  std::vector<PromptRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int topic = static_cast<int>(i % ToyGrammar::kTopics);
    out.push_back({topic_prompt(g, topic), g.text(g.sample_native(rng, topic))});
  }
  return out;
}

inline std::vector<RenderedChat> render_all(std::span<const Conversation> convs, const Vocabulary& v) {
  std::vector<RenderedChat> out;
  out.reserve(convs.size());
  for (const auto& c : convs) out.push_back(render_chat(c, v));
  return out;
}

}  // namespace corpus

struct EvalResult {
  double adherence = 0.0;
  double fluency_percent = 0.0;
  double mean_reward = 0.0;
};

// Samples answers to topic prompts at temperature 1 and scores them for
// grammar adherence, judge reward and (on the first `fluency_samples`) the
// fluency scorer.
inline EvalResult evaluate_policy(const PolicyParams& params, const ToyGrammar& g, JudgeBackend& judge,
                                  std::string_view judge_template, const FluencyScorerParams& scorer,
                                  std::size_t samples, std::size_t fluency_samples, int max_new_tokens,
                                  std::uint64_t seed, std::size_t workers = 1) {
  SamplerConfig sc;
  sc.max_new_tokens = max_new_tokens;
  std::vector<TokenSequence> responses(samples);
  std::vector<Conversation> convs(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    convs[i] = Conversation{{{"user", corpus::topic_prompt(g, static_cast<int>(i % ToyGrammar::kTopics))}}};
  }
  parallel_for(samples, workers, [&](std::size_t i) {
    Rng rng(derive_seed(seed, 0xE7A1, i));
    responses[i] = sample_response(params, render_prompt(convs[i], g.vocab()), sc, rng);
  });
  EvalResult r;
  r.adherence = grammar_adherence(g, responses);
  std::vector<JudgeRequest> requests;
  std::vector<std::vector<TokenId>> texts;
  for (std::size_t i = 0; i < samples; ++i) {
    auto resp = responses[i].response();
    if (!resp.empty() && resp.back() == Vocabulary::kEos) resp = resp.first(resp.size() - 1);
    requests.push_back({convs[i].messages, "", g.text(resp)});
    if (i < fluency_samples) texts.emplace_back(resp.begin(), resp.end());
  }
  double total = 0.0;
  for (const auto& o : judge_batch(judge, judge_template, requests, workers)) total += o.reward;
  r.mean_reward = total / static_cast<double>(samples);
  r.fluency_percent = fluency_percent(scorer, texts);
  return r;
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline PolicyParams run_sft_arm(const PolicyParams& start, std::span<const Conversation> data,
                                const SftArmConfig& c, const Vocabulary& v, std::uint64_t seed,
                                std::size_t workers,
                                const std::function<void(std::size_t, const PolicyParams&)>& on_epoch) {
  SftHyper h;
  h.learning_rate = c.learning_rate;
  h.warmup_fraction = c.warmup_fraction;
  h.batch_size = c.batch_size;
  h.weight_decay = c.weight_decay;
  h.epochs = c.epochs;
  h.seed = seed;
  h.workers = workers;
  const auto rendered = corpus::render_all(data, v);
  std::size_t steps = 0;
  return run_sft(start, rendered, h,
                 [&](const PolicyParams& p, const SftEpochReport& rep) {
                   steps += rep.steps;
                   if (on_epoch) on_epoch(steps, p);
                 })
      .params;
}

}  // namespace detail

// Adherence of temperature-1 answers to cycling topic prompts.
inline double sampled_adherence(const PolicyParams& params, const ToyGrammar& g, std::size_t samples,
                                int max_new_tokens, std::uint64_t seed, std::size_t workers = 1) {
  std::vector<TokenSequence> responses(samples);
  SamplerConfig sc;
  sc.max_new_tokens = max_new_tokens;
  parallel_for(samples, workers, [&](std::size_t i) {
    Rng r(derive_seed(seed, 0xAD4E, i));
    const Conversation c{{{"user", corpus::topic_prompt(g, static_cast<int>(i % ToyGrammar::kTopics))}}};
    responses[i] = sample_response(params, render_prompt(c, g.vocab()), sc, r);
  });
  return grammar_adherence(g, responses);
}

struct PretrainEpoch {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double adherence = 0.0;
};

inline void to_json(nlohmann::json& j, const PretrainEpoch& e) {
  j = nlohmann::json{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"adherence", e.adherence}};
}

struct PretrainResult {
  PolicyParams params;
  std::vector<PretrainEpoch> epochs;
  double adherence = 0.0;
};

// Full-token language-model training at a constant rate, measuring adherence
// after every epoch; stops early at `stop_adherence`. Throws ExperimentError
// if the final adherence is below `threshold`.
inline PretrainResult pretrain_policy(const ToyGrammar& g, std::span<const RenderedChat> docs,
                                      const PolicyArch& arch, double init_scale, const PretrainConfig& pc,
                                      std::size_t eval_samples, int max_new_tokens, std::uint64_t seed,
                                      std::size_t workers = 1,
                                      const std::function<void(const PretrainEpoch&)>& on_epoch = {}) {
  if (docs.size() < pc.batch_size) throw ConfigError("pretrain: fewer documents than pretrain.batch_size");
  PretrainResult res{PolicyParams::random(arch, derive_seed(seed, 0x1417), init_scale), {}, 0.0};
  PolicyParams& params = res.params;
  SftHyper h;
  h.batch_size = pc.batch_size;
  h.weight_decay = 0.0;
  h.workers = workers;
  h.max_seq_len = 64;
  StableAdamW opt(params.size(), h.optimizer_config());
  std::vector<std::size_t> order(docs.size());
  const std::size_t per_epoch = sft_steps_per_epoch(docs.size(), h.batch_size);
  std::vector<RenderedChat> batch;
  for (std::size_t epoch = 0; epoch < pc.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0xE90C, epoch));
    shuffle(order, rng);
    double loss = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      batch.clear();
      for (std::size_t i = 0; i < h.batch_size; ++i) batch.push_back(docs[order[b * h.batch_size + i]]);
      loss += sft_step(params, opt, batch, h, pc.learning_rate, b);
    }
    PretrainEpoch rep{epoch + 1, loss / static_cast<double>(per_epoch),
                      sampled_adherence(params, g, eval_samples, max_new_tokens,
                                        derive_seed(seed, 0xAD4F, epoch + 1), workers)};
    res.epochs.push_back(rep);
    res.adherence = rep.adherence;
    if (on_epoch) on_epoch(rep);
    if (rep.adherence >= pc.stop_adherence) break;
  }
  if (res.adherence < pc.threshold) {
    throw ExperimentError("pretraining reached adherence " + std::to_string(res.adherence) + " < " +
                          std::to_string(pc.threshold) + " after " + std::to_string(res.epochs.size()) +
                          " epochs; raise pretrain.docs or pretrain.max_epochs");
  }
  return res;
}

inline PretrainResult pretrain_base(const ToyGrammar& g, const ExperimentConfig& cfg, std::uint64_t seed) {
  Rng data_rng(derive_seed(seed, 0xDA7A));
  const auto convs = corpus::pretraining_conversations(g, cfg.pretrain.docs, data_rng);
  const auto docs = corpus::render_full_loss(convs, g.vocab());
  return pretrain_policy(g, docs, cfg.arch, cfg.init_scale, cfg.pretrain, cfg.adherence_samples,
                         cfg.rl.sampler.max_new_tokens, seed, cfg.workers);
}

// Scorer trained on corruption pairs over a fresh native corpus; returns the
// scorer and its held-out pairwise accuracy.
inline std::pair<FluencyScorerParams, double> train_experiment_scorer(const ToyGrammar& g,
                                                                      const ExperimentConfig& cfg,
                                                                      std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5C0E));
  const std::size_t held_out = std::max<std::size_t>(cfg.scorer_pairs / 5, 1);
  std::vector<std::vector<TokenId>> sentences;
  for (std::size_t i = 0; i < cfg.scorer_pairs + held_out; ++i) sentences.push_back(g.sample_native(rng));
  const auto pairs = synthesize_pairs(g, sentences, cfg.corruption, rng);
  const auto tokens = tokenize_pairs(g.vocab(), pairs);
  const std::span<const TokenPair> all(tokens);
  ScorerHyper h = cfg.scorer;
  h.seed = derive_seed(seed, 0x5C0F);
  h.min_pairs = std::min(h.min_pairs, cfg.scorer_pairs);
  auto res = train_scorer(all.first(cfg.scorer_pairs), h);
  const double acc = pairwise_accuracy(res.params, all.subspan(cfg.scorer_pairs));
  return {std::move(res.params), acc};
}

struct ExperimentHooks {
  std::function<void(const TrajectoryPoint&)> on_point;
  std::function<void(const std::string&)> log;
};

// Three arms per seed: a pretrained base goes through (rl) a short foreign-
// register SFT followed by on-policy RL with a grammar-blind judge, or
// (translated) SFT on partly corrupted native conversations, or (control) the
// same SFT with no corruption.
inline ExperimentReport run_fluency_experiment(const ExperimentConfig& cfg, std::string_view judge_template = "{{input}}",
                                               const ExperimentHooks& hooks = {}) {
  cfg.validate();
  const ToyGrammar g;
  GrammarBlindTaskJudge judge(g);
  ExperimentReport report;
  auto log = [&](const std::string& s) {
    if (hooks.log) hooks.log(s);
  };
  auto [scorer, scorer_acc] = train_experiment_scorer(g, cfg, cfg.seeds.front());
  report.summary.scorer_accuracy = scorer_acc;
  log("scorer held-out accuracy " + std::to_string(scorer_acc));

  const int max_new = cfg.rl.sampler.max_new_tokens;
  for (const std::uint64_t seed : cfg.seeds) {
    SeedSummary sum;
    sum.seed = seed;
    // Common evaluation draws across arms of one seed.
    const std::uint64_t eval_seed = derive_seed(seed, 0xE7A1);
    auto record = [&](const std::string& arm, std::size_t step, const PolicyParams& p) {
      const EvalResult e = evaluate_policy(p, g, judge, judge_template, scorer, cfg.adherence_samples,
                                           cfg.fluency_samples, max_new, derive_seed(eval_seed, step),
                                           cfg.workers);
      TrajectoryPoint pt{seed, arm, step, e.adherence, e.fluency_percent, e.mean_reward};
      report.trajectory.push_back(pt);
      if (hooks.on_point) hooks.on_point(pt);
      return e;
    };

    auto t0 = std::chrono::steady_clock::now();
    PretrainResult pre = pretrain_base(g, cfg, seed);
    const PolicyParams& base = pre.params;
    sum.pretrain_adherence = pre.adherence;
    sum.pretrain_epochs = pre.epochs.size();
    sum.seconds_pretrain = detail::seconds_since(t0);
    log("seed " + std::to_string(seed) + ": pretrained to adherence " +
        std::to_string(sum.pretrain_adherence) + " in " + std::to_string(sum.pretrain_epochs) + " epochs");

    // rl arm
    t0 = std::chrono::steady_clock::now();
    Rng rl_data(derive_seed(seed, 0xF0E1));
    const auto foreign = corpus::foreign_conversations(g, cfg.sft_clean.examples, rl_data);
    PolicyParams sft_clean =
        detail::run_sft_arm(base, foreign, cfg.sft_clean, g.vocab(), derive_seed(seed, 0x5F7), cfg.workers, {});
    sft_clean.version = 0;
    sum.rl_start = record("rl", 0, sft_clean).adherence;
    const auto prompts = corpus::rl_prompts(g, cfg.rl_prompts, rl_data);
    PipelineConfig pc = cfg.rl;
    pc.seed = derive_seed(seed, 0x9C);
    RlEnvironment env{&g.vocab(), &judge, std::string(judge_template), {}};
    double rl_end = sum.rl_start;
    RlCallbacks cb;
    cb.on_step = [&](const StepReport& rep, const PolicyParams& p) {
      if (rep.step % cfg.eval_every == 0 || rep.step == pc.total_steps) {
        const EvalResult e = record("rl", rep.step, p);
        if (rep.step == pc.total_steps) rl_end = e.adherence;
      }
    };
    const RlResult rl = run_rl_training(sft_clean, prompts, pc, env, cb);
    sum.rl_end = rl_end;
    sum.rl_reward_slope = mean_reward_curve(rl.reports).slope;
    sum.seconds_rl = detail::seconds_since(t0);
    log("seed " + std::to_string(seed) + ": rl adherence " + std::to_string(sum.rl_start) + " -> " +
        std::to_string(sum.rl_end) + ", reward slope " + std::to_string(sum.rl_reward_slope));

    auto sft_arm = [&](const std::string& arm, double rate) {
      Rng data(derive_seed(seed, 0x7A, static_cast<std::uint64_t>(rate * 1e6)));
      const auto convs = corpus::translated_conversations(g, cfg.translated.examples, rate, cfg.corruption, data);
      record(arm, 0, base);
      double end = 0.0;
      detail::run_sft_arm(base, convs, cfg.translated, g.vocab(), derive_seed(seed, 0x7B), cfg.workers,
                          [&](std::size_t step, const PolicyParams& p) { end = record(arm, step, p).adherence; });
      return end;
    };
    t0 = std::chrono::steady_clock::now();
    sum.translated_end = sft_arm("translated", cfg.corruption_rate);
    sum.seconds_translated = detail::seconds_since(t0);
    if (cfg.run_control) {
      t0 = std::chrono::steady_clock::now();
      sum.control_end = sft_arm("control", 0.0);
      sum.seconds_control = detail::seconds_since(t0);
    }
    log("seed " + std::to_string(seed) + ": translated " + std::to_string(sum.translated_end) +
        (sum.control_end ? ", control " + std::to_string(*sum.control_end) : std::string{}));
    report.seeds.push_back(sum);
  }

  auto& s = report.summary;
  const double n = static_cast<double>(report.seeds.size());
  double control = 0.0;
  for (const auto& r : report.seeds) {
    s.rl_start += r.rl_start / n;
    s.rl_end += r.rl_end / n;
    s.rl_reward_slope += r.rl_reward_slope / n;
    s.translated_end += r.translated_end / n;
    if (r.control_end) control += *r.control_end / n;
  }
  s.rl_stable = std::abs(s.rl_end - s.rl_start) < 0.05 && s.rl_reward_slope > 0.0;
  s.translated_gap = s.rl_end - s.translated_end >= 0.05;
  if (cfg.run_control) {
    s.control_end = control;
    s.control_matches = std::abs(s.rl_end - control) < 0.03;
  }
  return report;
}

}  // namespace fluentrl
