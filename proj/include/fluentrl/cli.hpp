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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fluentrl/annotation.hpp"
#include "fluentrl/chat.hpp"
#include "fluentrl/config.hpp"
#include "fluentrl/errors.hpp"
#include "fluentrl/eval.hpp"
#include "fluentrl/experiment.hpp"
#include "fluentrl/fluency.hpp"
#include "fluentrl/grammar.hpp"
#include "fluentrl/judge.hpp"
#include "fluentrl/pipeline.hpp"
#include "fluentrl/policy.hpp"
#include "fluentrl/remote_judge.hpp"
#include "fluentrl/sft.hpp"

#ifndef FLUENTRL_ASSET_DIR
#define FLUENTRL_ASSET_DIR "assets"
#endif

namespace fluentrl::cli {

namespace fs = std::filesystem;
using config::Reader;

inline const char* kDefaultJudgeTemplate = FLUENTRL_ASSET_DIR "/judge_prompt.txt";

// ---- config sections -------------------------------------------------------

inline void bind_section(Reader& r, const std::string& p, PolicyArch& a) {
  r.get_or_record(p + ".window", a.window);
  r.get_or_record(p + ".embed_dim", a.embed_dim);
  r.get_or_record(p + ".hidden_dim", a.hidden_dim);
  a.validate();
}

inline void bind_section(Reader& r, const std::string& p, SamplerConfig& s) {
  r.get_or_record(p + ".temperature", s.temperature);
  r.get_or_record(p + ".top_p", s.top_p);
  r.get_or_record(p + ".max_new_tokens", s.max_new_tokens);
  if (r.has(p + ".top_k")) {
    int k = 0;
    r.get(p + ".top_k", k);
    s.top_k = k;
  }
}

inline void bind_section(Reader& r, const std::string& p, KlConfig& k) {
  r.get_or_record(p + ".beta", k.beta);
  std::string est = to_string(k.estimator);
  r.get_or_record(p + ".estimator", est);
  k.estimator = parse_kl_estimator(est);
}

inline void bind_section(Reader& r, const std::string& p, PipelineConfig& c) {
  r.get_or_record(p + ".prompts_per_step", c.prompts_per_step);
  r.get_or_record(p + ".group_size", c.group_size);
  r.get_or_record(p + ".delay", c.delay);
  r.get_or_record(p + ".steps", c.total_steps);
  r.get_or_record(p + ".learning_rate", c.learning_rate);
  r.get_or_record(p + ".weight_decay", c.optimizer.weight_decay);
  r.get_or_record(p + ".update_clip", c.optimizer.update_clip);
  r.get_or_record(p + ".sampler_workers", c.sampler_workers);
  r.get_or_record(p + ".judge_workers", c.judge_workers);
  r.get_or_record(p + ".trainer_workers", c.trainer_workers);
  r.get_or_record(p + ".overlap_stages", c.overlap_stages);
  std::string std_mode = c.advantage.std_mode == StdMode::kPopulation ? "population" : "sample";
  r.get_or_record(p + ".advantage_std", std_mode);
  if (std_mode == "population") {
    c.advantage.std_mode = StdMode::kPopulation;
  } else if (std_mode == "sample") {
    c.advantage.std_mode = StdMode::kSample;
  } else {
    throw ConfigError("config key '" + p + ".advantage_std' must be population or sample");
  }
  bind_section(r, p + ".kl", c.kl);
  bind_section(r, p + ".sampler", c.sampler);
  c.validate();
}

inline void bind_section(Reader& r, const std::string& p, SftArmConfig& c) {
  r.get_or_record(p + ".examples", c.examples);
  r.get_or_record(p + ".epochs", c.epochs);
  r.get_or_record(p + ".learning_rate", c.learning_rate);
  r.get_or_record(p + ".batch_size", c.batch_size);
  r.get_or_record(p + ".warmup_fraction", c.warmup_fraction);
  r.get_or_record(p + ".weight_decay", c.weight_decay);
}

inline void bind_section(Reader& r, const std::string& p, PretrainConfig& c) {
  r.get_or_record(p + ".docs", c.docs);
  r.get_or_record(p + ".max_epochs", c.max_epochs);
  r.get_or_record(p + ".batch_size", c.batch_size);
  r.get_or_record(p + ".learning_rate", c.learning_rate);
  r.get_or_record(p + ".threshold", c.threshold);
  r.get_or_record(p + ".stop_adherence", c.stop_adherence);
}

inline void bind_section(Reader& r, const std::string& p, ScorerHyper& h) {
  bind_section(r, p + ".arch", h.arch);
  r.get_or_record(p + ".epochs", h.epochs);
  r.get_or_record(p + ".batch_size", h.batch_size);
  r.get_or_record(p + ".learning_rate", h.learning_rate);
  r.get_or_record(p + ".weight_decay", h.weight_decay);
  r.get_or_record(p + ".init_scale", h.init_scale);
  h.validate();
}

inline void bind_section(Reader& r, const std::string& p, CorruptionConfig& c) {
  r.get_or_record(p + ".agreement", c.agreement);
  r.get_or_record(p + ".transposition", c.transposition);
  r.get_or_record(p + ".calque", c.calque);
  c.validate();
}

// ---- shared run plumbing ---------------------------------------------------

struct Run {
  Reader cfg;
  std::uint64_t seed = 0;
  fs::path out;
  std::ostream& os;
  std::ostream& es;

  fs::path require_path(const std::string& key) {
    std::string s;
    cfg.get(key, s);
    if (s.empty()) throw ConfigError("missing required config key '" + key + "'");
    return s;
  }

  std::optional<fs::path> optional_path(const std::string& key) {
    std::string s;
    cfg.get(key, s);
    if (s.empty()) return std::nullopt;
    return fs::path(s);
  }

  // Call after all keys are bound: rejects unknown keys and stamps the
  // resolved config into the output directory.
  void finalize() {
    cfg.check_unknown();
    if (out.empty()) return;
    fs::create_directories(out);
    config::Json resolved = cfg.resolved_tree();
    resolved["seed"] = seed;
    std::ofstream f(out / "config.resolved.toml");
    f << config::to_toml(resolved);
  }

  void write_report(const nlohmann::json& j) {
    if (out.empty()) {
      os << j.dump(2) << '\n';
      return;
    }
    std::ofstream f(out / "report.json");
    f << j.dump(2) << '\n';
  }

  fs::path snapshot_dir() {
    const fs::path d = out / "snapshots";
    fs::create_directories(d);
    return d;
  }
};

template <typename T>
std::vector<T> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<T>());
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const fs::path& path, std::span<const T> items) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& x : items) out << nlohmann::json(x).dump() << '\n';
}

inline PolicyParams load_policy(const fs::path& path) {
  LoadedSnapshot s = load_snapshot(path);
  if (s.kind != "policy") throw InputError(path.string() + " is not a policy snapshot");
  return std::move(s.params);
}

// ---- subcommands -----------------------------------------------------------

inline int cmd_gen_corpus(Run& run) {
  std::size_t native_docs = 4000, foreign = 256, translated = 1000, prompts = 24, pairs = 2000;
  double rate = 0.3;
  CorruptionConfig cc;
  run.cfg.get_or_record("corpus.native_docs", native_docs);
  run.cfg.get_or_record("corpus.foreign_conversations", foreign);
  run.cfg.get_or_record("corpus.translated_conversations", translated);
  run.cfg.get_or_record("corpus.corruption_rate", rate);
  run.cfg.get_or_record("corpus.rl_prompts", prompts);
  run.cfg.get_or_record("corpus.scorer_pairs", pairs);
  bind_section(run.cfg, "corpus.corruption", cc);
  if (run.out.empty()) throw ConfigError("gen-corpus needs --out");
  run.finalize();
  const ToyGrammar g;
  Rng rng(derive_seed(run.seed, 0xC0));
  const auto pre = corpus::pretraining_conversations(g, native_docs, rng);
  const auto fo = corpus::foreign_conversations(g, foreign, rng);
  const auto tr = corpus::translated_conversations(g, translated, rate, cc, rng);
  const auto pr = corpus::rl_prompts(g, prompts, rng);
  std::vector<std::vector<TokenId>> sentences;
  for (std::size_t i = 0; i < pairs; ++i) sentences.push_back(g.sample_native(rng));
  const auto pp = synthesize_pairs(g, sentences, cc, rng);
  write_jsonl<Conversation>(run.out / "pretrain.jsonl", pre);
  write_jsonl<Conversation>(run.out / "sft_foreign.jsonl", fo);
  write_jsonl<Conversation>(run.out / "sft_translated.jsonl", tr);
  write_jsonl<PromptRecord>(run.out / "prompts.jsonl", pr);
  write_jsonl<PreferencePair>(run.out / "pairs.jsonl", pp);
  run.write_report({{"pretrain", pre.size()},
                    {"sft_foreign", fo.size()},
                    {"sft_translated", tr.size()},
                    {"prompts", pr.size()},
                    {"pairs", pp.size()}});
  return 0;
}

inline int cmd_pretrain(Run& run) {
  PolicyArch arch;
  double init_scale = 1.0;
  PretrainConfig pc;
  std::size_t eval_samples = 512, workers = 1;
  int max_new = 16;
  bind_section(run.cfg, "policy", arch);
  run.cfg.get_or_record("policy.init_scale", init_scale);
  const fs::path data = run.require_path("pretrain.data");
  bind_section(run.cfg, "pretrain", pc);
  run.cfg.get_or_record("pretrain.eval_samples", eval_samples);
  run.cfg.get_or_record("pretrain.max_new_tokens", max_new);
  run.cfg.get_or_record("pretrain.workers", workers);
  if (run.out.empty()) throw ConfigError("pretrain needs --out");
  run.finalize();
  const ToyGrammar g;
  const auto convs = read_jsonl<Conversation>(data);
  const auto docs = corpus::render_full_loss(convs, g.vocab());
  std::ofstream steps(run.out / "steps.jsonl");
  const auto res = pretrain_policy(g, docs, arch, init_scale, pc, eval_samples, max_new, run.seed, workers,
                                   [&](const PretrainEpoch& e) { steps << nlohmann::json(e).dump() << '\n' << std::flush; });
  save_snapshot(run.snapshot_dir() / "final.snap", res.params);
  run.write_report({{"epochs", res.epochs.size()}, {"adherence", res.adherence}});
  return 0;
}

inline int cmd_sft(Run& run) {
  SftHyper h;
  const fs::path data = run.require_path("sft.data");
  const fs::path init = run.require_path("sft.init");
  run.cfg.get_or_record("sft.learning_rate", h.learning_rate);
  run.cfg.get_or_record("sft.warmup_fraction", h.warmup_fraction);
  run.cfg.get_or_record("sft.batch_size", h.batch_size);
  run.cfg.get_or_record("sft.max_seq_len", h.max_seq_len);
  run.cfg.get_or_record("sft.weight_decay", h.weight_decay);
  run.cfg.get_or_record("sft.epochs", h.epochs);
  run.cfg.get_or_record("sft.workers", h.workers);
  h.seed = run.seed;
  h.validate();
  if (run.out.empty()) throw ConfigError("sft needs --out");
  run.finalize();
  const ToyGrammar g;
  const auto convs = read_jsonl<Conversation>(data);
  std::vector<RenderedChat> rendered;
  for (const auto& c : convs) {
    validate_conversation(c, true);
    rendered.push_back(render_chat(c, g.vocab()));
  }
  std::ofstream steps(run.out / "steps.jsonl");
  const SftResult res = run_sft(load_policy(init), rendered, h, [&](const PolicyParams&, const SftEpochReport& r) {
    steps << nlohmann::json(r).dump() << '\n' << std::flush;
  });
  save_snapshot(run.snapshot_dir() / "final.snap", res.params);
  run.write_report({{"steps", res.total_steps}, {"epochs", res.epochs}});
  return 0;
}

struct JudgeSetup {
  std::unique_ptr<JudgeBackend> backend;
  std::string template_text;
  JudgeOptions options;
};

inline JudgeSetup bind_judge(Run& run, const std::string& p, const ToyGrammar& g) {
  JudgeSetup js;
  std::string kind = "task";
  std::string tmpl = kDefaultJudgeTemplate;
  run.cfg.get_or_record(p + ".kind", kind);
  run.cfg.get_or_record(p + ".template", tmpl);
  run.cfg.get_or_record(p + ".fallback_on_transport_error", js.options.fallback_on_transport_error);
  if (kind == "task") {
    std::size_t lo = ToyGrammar::kMinLength, hi = ToyGrammar::kMaxLength;
    run.cfg.get_or_record(p + ".min_length", lo);
    run.cfg.get_or_record(p + ".max_length", hi);
    js.backend = std::make_unique<GrammarBlindTaskJudge>(g, lo, hi);
  } else if (kind == "constant") {
    int score = kFallbackScore;
    run.cfg.get_or_record(p + ".score", score);
    js.backend = std::make_unique<ConstantJudge>("**Score:**\n" + std::to_string(score) + "/10");
  } else if (kind == "remote") {
    RemoteJudgeConfig rc;
    run.cfg.get(p + ".endpoint", rc.endpoint);
    run.cfg.get_or_record(p + ".model", rc.model);
    run.cfg.get_or_record(p + ".temperature", rc.temperature);
    run.cfg.get_or_record(p + ".max_tokens", rc.max_tokens);
    run.cfg.get_or_record(p + ".retries", rc.retries);
    run.cfg.get_or_record(p + ".backoff_ms", rc.backoff_ms);
    run.cfg.get_or_record(p + ".timeout_s", rc.timeout_s);
    rc.apply_env();
    if (rc.endpoint.empty()) throw ConfigError("config key '" + p + ".endpoint' (or RLAIF_JUDGE_ENDPOINT) is required");
    js.backend = std::make_unique<RemoteJudge>(rc);
  } else {
    throw ConfigError("config key '" + p + ".kind' must be task, constant or remote");
  }
  js.template_text = load_judge_template(tmpl);
  return js;
}

inline int cmd_rl_train(Run& run) {
  const fs::path prompts_path = run.require_path("rl.prompts");
  const fs::path init = run.require_path("rl.init");
  PipelineConfig pc;
  std::size_t snapshot_every = 25;
  bind_section(run.cfg, "rl", pc);
  run.cfg.get_or_record("rl.snapshot_every", snapshot_every);
  const ToyGrammar g;
  JudgeSetup judge = bind_judge(run, "rl.judge", g);
  pc.seed = run.seed;
  pc.validate();
  if (run.out.empty()) throw ConfigError("rl-train needs --out");
  run.finalize();
  const auto prompts = read_prompts_jsonl(prompts_path);
  PolicyParams params = load_policy(init);
  params.version = 0;
  const fs::path snaps = run.snapshot_dir();
  save_snapshot(snaps / "step-0000.snap", params);
  std::ofstream steps(run.out / "steps.jsonl");
  RlEnvironment env{&g.vocab(), judge.backend.get(), judge.template_text, judge.options};
  RlCallbacks cb;
  cb.on_step = [&](const StepReport& r, const PolicyParams& p) {
    steps << nlohmann::json(r).dump() << '\n' << std::flush;
    if (snapshot_every && r.step % snapshot_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step-%04zu.snap", r.step);
      save_snapshot(snaps / name, p);
    }
  };
  const RlResult res = run_rl_training(params, prompts, pc, env, cb);
  save_snapshot(snaps / "final.snap", res.params);
  const RewardCurve curve = mean_reward_curve(res.reports);
  run.write_report({{"steps", res.reports.size()},
                    {"final_version", res.params.version},
                    {"mean_reward_curve", curve.values},
                    {"reward_slope", curve.slope}});
  return 0;
}

inline int cmd_train_scorer(Run& run) {
  const fs::path pairs_path = run.require_path("scorer.pairs");
  ScorerHyper h = ExperimentConfig::default_scorer();
  double held_out = 0.2;
  bool shuffle_labels = false;
  bind_section(run.cfg, "scorer", h);
  run.cfg.get_or_record("scorer.held_out_fraction", held_out);
  run.cfg.get_or_record("scorer.shuffle_labels", shuffle_labels);
  if (!(held_out >= 0.0 && held_out < 1.0)) throw ConfigError("scorer.held_out_fraction must be in [0,1)");
  h.seed = run.seed;
  if (run.out.empty()) throw ConfigError("train-scorer needs --out");
  run.finalize();
  const ToyGrammar g;
  auto tokens = tokenize_pairs(g.vocab(), read_pairs_jsonl(pairs_path));
  const auto n_test = static_cast<std::size_t>(held_out * static_cast<double>(tokens.size()));
  const std::span<const TokenPair> all(tokens);
  std::vector<TokenPair> train(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_test));
  if (shuffle_labels) {
    Rng rng(derive_seed(run.seed, 0x5AF));
    for (auto& p : train) {
      if (uniform01(rng) < 0.5) std::swap(p.preferred, p.rejected);
    }
  }
  const auto res = train_scorer(train, h);
  std::ofstream steps(run.out / "steps.jsonl");
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
    steps << nlohmann::json{{"epoch", e + 1}, {"mean_loss", res.epoch_loss[e]}}.dump() << '\n';
  }
  save_scorer(run.snapshot_dir() / "scorer.snap", res.params);
  nlohmann::json rep{{"train_pairs", train.size()},
                     {"held_out_pairs", n_test},
                     {"final_loss", res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back()}};
  if (n_test) rep["held_out_accuracy"] = pairwise_accuracy(res.params, all.last(n_test));
  run.write_report(rep);
  return 0;
}

inline int cmd_score(Run& run, const std::string& scorer_path, const std::string& texts_path, const std::string& mode) {
  run.finalize();
  const FluencyScorerParams s = load_scorer(scorer_path);
  const ToyGrammar g;
  std::ifstream in(texts_path);
  if (!in) throw InputError("cannot read " + texts_path);
  std::vector<double> raw;
  std::string line;
  while (std::getline(in, line)) {
    const auto ids = g.vocab().tokenize(line);
    raw.push_back(raw_score(s, ids));
    run.os << raw.back() << '\t' << 100.0 * sigmoid(raw.back()) << '\t' << line << '\n';
  }
  const auto avg = mode == "mean-first" ? FluencyAveraging::kMeanThenSigmoid : FluencyAveraging::kSigmoidThenMean;
  run.os << "fluency_percent\t" << fluency_percent_from_scores(raw, avg) << '\n';
  return 0;
}

inline int cmd_run_experiment(Run& run) {
  ExperimentConfig c;
  const std::string p = "experiment";
  if (run.cfg.has(p + ".seeds")) {
    std::vector<std::uint64_t> seeds;
    run.cfg.get(p + ".seeds", seeds);
    c.seeds = seeds;
  } else {
    c.seeds.clear();
    for (std::uint64_t i = 0; i < 5; ++i) c.seeds.push_back(derive_seed(run.seed, 0xE5, i) % 1000000);
  }
  bind_section(run.cfg, "policy", c.arch);
  run.cfg.get_or_record("policy.init_scale", c.init_scale);
  bind_section(run.cfg, "pretrain", c.pretrain);
  bind_section(run.cfg, p + ".sft_clean", c.sft_clean);
  bind_section(run.cfg, p + ".translated", c.translated);
  run.cfg.get_or_record(p + ".corruption_rate", c.corruption_rate);
  bind_section(run.cfg, p + ".corruption", c.corruption);
  run.cfg.get_or_record(p + ".run_control", c.run_control);
  bind_section(run.cfg, "rl", c.rl);
  run.cfg.get_or_record(p + ".rl_prompts", c.rl_prompts);
  run.cfg.get_or_record(p + ".eval_every", c.eval_every);
  run.cfg.get_or_record(p + ".adherence_samples", c.adherence_samples);
  run.cfg.get_or_record(p + ".fluency_samples", c.fluency_samples);
  run.cfg.get_or_record(p + ".scorer_pairs", c.scorer_pairs);
  run.cfg.get_or_record(p + ".workers", c.workers);
  bind_section(run.cfg, "scorer", c.scorer);
  std::string tmpl = kDefaultJudgeTemplate;
  run.cfg.get_or_record(p + ".judge_template", tmpl);
  c.validate();
  if (run.out.empty()) throw ConfigError("run-experiment needs --out");
  run.finalize();
  const std::string judge_template = load_judge_template(tmpl);
  std::ofstream steps(run.out / "steps.jsonl");
  ExperimentHooks hooks;
  hooks.on_point = [&](const TrajectoryPoint& pt) { steps << nlohmann::json(pt).dump() << '\n' << std::flush; };
  hooks.log = [&](const std::string& s) { run.es << s << '\n'; };
  const ExperimentReport rep = run_fluency_experiment(c, judge_template, hooks);
  write_trajectory_csv(run.out / "trajectory.csv", rep.trajectory);
  run.write_report(rep);
  run.os << nlohmann::json(rep.summary).dump(2) << '\n';
  return 0;
}

inline int cmd_aggregate(Run& run, const std::string& records_path, bool as_json) {
  run.finalize();
  const auto records = read_records_jsonl(records_path);
  const WinRateTable t = copeland_winrates(records);
  if (as_json) {
    nlohmann::json j = to_json(t);
    if (const auto agr = annotator_agreement(records)) j["agreement"] = agr->fraction();
    run.os << j.dump(2) << '\n';
  } else {
    run.os << format_table(t);
    if (const auto agr = annotator_agreement(records)) {
      run.os << "agreement with consensus: " << agr->matching << "/" << agr->counted << '\n';
    }
  }
  return 0;
}

inline annotation::ServiceConfig bind_annotation(Run& run) {
  annotation::ServiceConfig sc;
  std::string data_dir = sc.data_dir.string(), pairs, static_dir;
  run.cfg.get_or_record("annotation.host", sc.host);
  run.cfg.get_or_record("annotation.port", sc.port);
  run.cfg.get_or_record("annotation.data_dir", data_dir);
  run.cfg.get("annotation.pairs", pairs);
  run.cfg.get("annotation.static_dir", static_dir);
  run.cfg.get("annotation.roster", sc.roster);
  run.cfg.get("annotation.admin_token", sc.admin_token);
  sc.data_dir = data_dir;
  sc.pairs_path = pairs;
  sc.static_dir = static_dir;
  sc.seed = run.seed;
  sc.apply_env();
  if (sc.pairs_path.empty()) throw ConfigError("missing required config key 'annotation.pairs'");
  return sc;
}

inline int cmd_serve(Run& run) {
  annotation::ServiceConfig sc = bind_annotation(run);
  sc.validate();
  run.finalize();
  annotation::AnnotationStore store(annotation::build_pairs(annotation::read_prompt_responses(sc.pairs_path)),
                                    sc.roster, sc.data_dir, sc.seed);
  annotation::AnnotationServer server(store, sc);
  run.es << "serving " << store.pair_count() << " pairs on " << sc.host << ":" << sc.port << '\n';
  server.run();
  return 0;
}

inline int cmd_export(Run& run) {
  annotation::ServiceConfig sc = bind_annotation(run);
  run.finalize();
  if (!fs::exists(sc.data_dir / "verdicts.jsonl")) throw InputError("no verdict journal in " + sc.data_dir.string());
  annotation::AnnotationStore store(annotation::build_pairs(annotation::read_prompt_responses(sc.pairs_path)),
                                    sc.roster, sc.data_dir, sc.seed);
  const auto records = store.export_records();
  if (run.out.empty()) {
    write_records_jsonl(run.os, records);
  } else {
    std::ofstream f(run.out / "records.jsonl");
    write_records_jsonl(f, records);
  }
  return 0;
}

// ---- entry point -----------------------------------------------------------

inline int dispatch(const std::vector<std::string>& argv, std::ostream& os = std::cout,
                    std::ostream& es = std::cerr) {
  CLI::App app{"fluentrl: on-policy RL from AI feedback at desk scale"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "TOML config file");
    sub->add_option("--seed", seed, "global seed; every sub-seed derives from it");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--set", overrides, "override a config key: section.key=value");
  };
  struct Cmd {
    const char* name;
    const char* help;
  };
  const std::vector<Cmd> cmds = {
      {"gen-corpus", "write the synthetic datasets (pretraining, SFT, prompts, preference pairs)"},
      {"pretrain", "train a base policy on native-register text"},
      {"sft", "supervised finetuning on chat conversations"},
      {"rl-train", "on-policy RL with a judge reward and KL to the initial policy"},
      {"train-scorer", "train the Bradley-Terry fluency scorer"},
      {"score", "score texts with a fluency scorer"},
      {"run-experiment", "run the three-arm fluency experiment"},
      {"aggregate-winrates", "Copeland win-rates from comparison records"},
      {"serve-annotation", "run the pairwise annotation service"},
      {"export-annotations", "export stored verdicts as comparison records"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : cmds) {
    subs[c.name] = app.add_subcommand(c.name, c.help);
    common(subs[c.name]);
  }
  std::string scorer_path, texts_path, mode = "per-sample", records_path;
  bool as_json = false;
  subs["score"]->add_option("--scorer", scorer_path, "scorer snapshot")->required();
  subs["score"]->add_option("texts", texts_path, "file with one text per line")->required();
  subs["score"]->add_option("--mode", mode, "per-sample or mean-first")
      ->check(CLI::IsMember({"per-sample", "mean-first"}));
  subs["aggregate-winrates"]->add_option("records", records_path, "records JSONL")->required();
  subs["aggregate-winrates"]->add_flag("--json", as_json, "print JSON instead of a table");

  std::vector<std::string> args(argv.rbegin(), argv.rend());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, os, es);
  }
  try {
    config::Json tree = config::Json::object();
    if (!config_path.empty()) tree = config::load_toml(config_path);
    for (const auto& o : overrides) config::apply_override(tree, o);
    if (tree.contains("seed")) {
      if (!tree["seed"].is_number_unsigned() && !tree["seed"].is_number_integer()) throw ConfigError("config key 'seed' must be an integer");
      const bool flag_given = std::find(argv.begin(), argv.end(), "--seed") != argv.end();
      if (!flag_given) seed = tree["seed"].get<std::uint64_t>();
      tree.erase("seed");
    }
    Run run{Reader(std::move(tree)), seed, out_dir, os, es};
    if (subs["gen-corpus"]->parsed()) return cmd_gen_corpus(run);
    if (subs["pretrain"]->parsed()) return cmd_pretrain(run);
    if (subs["sft"]->parsed()) return cmd_sft(run);
    if (subs["rl-train"]->parsed()) return cmd_rl_train(run);
    if (subs["train-scorer"]->parsed()) return cmd_train_scorer(run);
    if (subs["score"]->parsed()) return cmd_score(run, scorer_path, texts_path, mode);
    if (subs["run-experiment"]->parsed()) return cmd_run_experiment(run);
    if (subs["aggregate-winrates"]->parsed()) return cmd_aggregate(run, records_path, as_json);
    if (subs["serve-annotation"]->parsed()) return cmd_serve(run);
    if (subs["export-annotations"]->parsed()) return cmd_export(run);
    throw InternalError("no subcommand matched");
  } catch (const ConfigError& e) {
    es << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InputError& e) {
    es << "input error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    es << "error: " << e.what() << '\n';
    return 1;
  }
}

inline int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args);
}

}  // namespace fluentrl::cli
