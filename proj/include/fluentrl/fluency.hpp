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
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentrl/errors.hpp"
#include "fluentrl/grammar.hpp"
#include "fluentrl/optimizer.hpp"
#include "fluentrl/policy.hpp"
#include "fluentrl/rng.hpp"

namespace fluentrl {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// -log sigmoid(r_w - r_l), evaluated without overflow.
inline double bt_loss(double r_w, double r_l) {
  const double d = r_w - r_l;
  return d > 0.0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d));
}

// d bt_loss / d r_w; the derivative in r_l is the negation.
inline double bt_loss_grad(double r_w, double r_l) { return -sigmoid(r_l - r_w); }

struct PreferencePair {
  std::string preferred;
  std::string rejected;
  std::string source;  // grammar_correction | backtranslation_analog
};

inline void to_json(nlohmann::json& j, const PreferencePair& p) {
  j = nlohmann::json{{"preferred", p.preferred}, {"rejected", p.rejected}, {"source", p.source}};
}
inline void from_json(const nlohmann::json& j, PreferencePair& p) {
  j.at("preferred").get_to(p.preferred);
  j.at("rejected").get_to(p.rejected);
  j.at("source").get_to(p.source);
  if (p.preferred.empty() || p.rejected.empty() || p.preferred == p.rejected) {
    throw InputError("preference pair: texts must be non-empty and different");
  }
}

inline void write_pairs_jsonl(const std::filesystem::path& path,
                              std::span<const PreferencePair> pairs) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& p : pairs) out << nlohmann::json(p).dump() << '\n';
}

inline std::vector<PreferencePair> read_pairs_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<PreferencePair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<PreferencePair>());
  }
  return out;
}

// Original sentence preferred, corrupted twin rejected. Pairs whose only
// corruption is agreement stand in for grammar-correction data; anything
// involving word order or calques stands in for backtranslation.
inline std::vector<PreferencePair> synthesize_pairs(const ToyGrammar& g,
                                                    std::span<const std::vector<TokenId>> corpus,
                                                    const CorruptionConfig& cfg, Rng& rng) {
  if (corpus.empty()) throw ConfigError("synthesize_pairs: empty corpus");
  cfg.validate();
  std::vector<PreferencePair> pairs;
  pairs.reserve(corpus.size());
  for (const auto& sentence : corpus) {
    const Corruption c = corrupt(g, sentence, cfg, rng);
    const bool gec = c.agreement && !c.transposition && !c.calque;
    pairs.push_back({g.text(sentence), g.text(c.tokens),
                     gec ? "grammar_correction" : "backtranslation_analog"});
  }
  return pairs;
}

// Encoder of the policy family plus a scalar head on the mean-pooled hidden
// states. Layout: encoder block of PolicyArch, then head weights [h], head bias.
struct FluencyScorerParams {
  PolicyArch arch;
  std::vector<double> values;

  static std::size_t param_count(const PolicyArch& a) { return a.encoder_size() + a.h() + 1; }
  std::size_t head_offset() const { return arch.encoder_size(); }
  std::size_t bias_offset() const { return arch.encoder_size() + arch.h(); }

  static FluencyScorerParams random(const PolicyArch& arch, std::uint64_t seed, double scale = 1.0) {
    arch.validate();
    const PolicyParams p = PolicyParams::random(arch, seed, scale);
    FluencyScorerParams s{arch, std::vector<double>(param_count(arch), 0.0)};
    std::copy(p.values.begin(), p.values.begin() + static_cast<std::ptrdiff_t>(arch.encoder_size()),
              s.values.begin());
    return s;
  }
};

namespace detail {

// Mean-pooled encoder states for bos + text; each context ends on a text token.
inline std::vector<double> pooled_hidden(const FluencyScorerParams& s, std::span<const TokenId> text,
                                         std::vector<EncoderCache>* caches) {
  std::vector<TokenId> ids;
  ids.reserve(text.size() + 1);
  ids.push_back(Vocabulary::kBos);
  ids.insert(ids.end(), text.begin(), text.end());
  check_tokens(s.arch, ids);
  const std::size_t h = s.arch.h();
  std::vector<double> pool(h, 0.0);
  const std::size_t first = text.empty() ? 1 : 2;
  const std::size_t count = ids.size() + 1 - first;
  EncoderCache local;
  for (std::size_t t = first; t <= ids.size(); ++t) {
    EncoderCache& c = caches ? caches->emplace_back() : local;
    encoder_forward(s.arch, s.values, std::span<const TokenId>(ids).first(t), c);
    for (std::size_t j = 0; j < h; ++j) pool[j] += c.hidden[j];
  }
  for (double& x : pool) x /= static_cast<double>(count);
  return pool;
}

}  // namespace detail

inline double raw_score(const FluencyScorerParams& s, std::span<const TokenId> text) {
  const auto pool = detail::pooled_hidden(s, text, nullptr);
  double r = s.values[s.bias_offset()];
  for (std::size_t j = 0; j < pool.size(); ++j) r += s.values[s.head_offset() + j] * pool[j];
  return r;
}

// Adds coef * d raw_score / d params to grad; returns the score.
inline double raw_score_grad(const FluencyScorerParams& s, std::span<const TokenId> text,
                             double coef, std::span<double> grad) {
  std::vector<detail::EncoderCache> caches;
  const auto pool = detail::pooled_hidden(s, text, &caches);
  const std::size_t h = s.arch.h();
  double r = s.values[s.bias_offset()];
  for (std::size_t j = 0; j < h; ++j) r += s.values[s.head_offset() + j] * pool[j];
  grad[s.bias_offset()] += coef;
  for (std::size_t j = 0; j < h; ++j) grad[s.head_offset() + j] += coef * pool[j];
  std::vector<double> dhidden(h);
  const double inv = 1.0 / static_cast<double>(caches.size());
  for (std::size_t j = 0; j < h; ++j) dhidden[j] = coef * s.values[s.head_offset() + j] * inv;
  for (const auto& c : caches) detail::encoder_backward(s.arch, s.values, c, dhidden, grad);
  return r;
}

struct TokenPair {
  std::vector<TokenId> preferred;
  std::vector<TokenId> rejected;
};

inline std::vector<TokenPair> tokenize_pairs(const Vocabulary& vocab,
                                             std::span<const PreferencePair> pairs) {
  std::vector<TokenPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({vocab.tokenize(p.preferred), vocab.tokenize(p.rejected)});
  return out;
}

// Mean BT loss over `pairs`; adds its gradient to grad when non-empty.
inline double bt_batch_loss(const FluencyScorerParams& s, std::span<const TokenPair> pairs,
                            std::span<double> grad) {
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(pairs.size());
  for (const auto& p : pairs) {
    const double rw = raw_score(s, p.preferred);
    const double rl = raw_score(s, p.rejected);
    total += bt_loss(rw, rl);
    if (!grad.empty()) {
      const double g = bt_loss_grad(rw, rl) * inv;
      raw_score_grad(s, p.preferred, g, grad);
      raw_score_grad(s, p.rejected, -g, grad);
    }
  }
  return total * inv;
}

struct ScorerHyper {
  PolicyArch arch{64, 8, 16, 32};
  std::size_t epochs = 10;
  std::size_t batch_size = 64;  // 0 = full batch
  double learning_rate = 1e-2;
  double weight_decay = 0.0;
  double init_scale = 0.5;
  std::uint64_t seed = 0;
  std::size_t min_pairs = 100;

  void validate() const {
    arch.validate();
    if (!(learning_rate > 0.0)) throw ConfigError("scorer.learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("scorer.weight_decay must be >= 0");
  }
};

struct ScorerTrainResult {
  FluencyScorerParams params;
  std::vector<double> epoch_loss;
};

inline ScorerTrainResult train_scorer(std::span<const TokenPair> pairs, const ScorerHyper& hyper) {
  hyper.validate();
  if (pairs.size() < hyper.min_pairs) {
    throw ConfigError("train_scorer: need at least " + std::to_string(hyper.min_pairs) + " pairs");
  }
  ScorerTrainResult result{FluencyScorerParams::random(hyper.arch, hyper.seed, hyper.init_scale), {}};
  FluencyScorerParams& s = result.params;
  OptimizerConfig oc;
  oc.weight_decay = hyper.weight_decay;
  StableAdamW opt(s.values.size(), oc);
  const std::size_t batch = hyper.batch_size == 0 ? pairs.size() : std::min(hyper.batch_size, pairs.size());
  std::vector<std::size_t> order(pairs.size());
  std::vector<TokenPair> chunk;
  std::vector<double> grad(s.values.size());
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    if (hyper.batch_size != 0) {
      Rng rng(derive_seed(hyper.seed, 0x5C0, epoch));
      shuffle(order, rng);
    }
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t b = 0; b + batch <= pairs.size(); b += batch) {
      chunk.clear();
      for (std::size_t i = b; i < b + batch; ++i) chunk.push_back(pairs[order[i]]);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = bt_batch_loss(s, chunk, grad);
      if (!std::isfinite(loss)) {
        throw TrainingError("train_scorer: non-finite loss at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(steps));
      }
      opt.step(s.values, grad, hyper.learning_rate);
      loss_sum += loss;
      ++steps;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(1, steps)));
  }
  return result;
}

// Fraction of pairs with score(preferred) > score(rejected).
inline double pairwise_accuracy(const FluencyScorerParams& s, std::span<const TokenPair> pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& p : pairs) ok += raw_score(s, p.preferred) > raw_score(s, p.rejected) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

enum class FluencyAveraging { kSigmoidThenMean, kMeanThenSigmoid };

// Percentage in (0, 100) from raw scores.
inline double fluency_percent_from_scores(std::span<const double> raw,
                                          FluencyAveraging mode = FluencyAveraging::kSigmoidThenMean) {
  if (raw.empty()) throw InputError("fluency_percent: no samples");
  if (mode == FluencyAveraging::kMeanThenSigmoid) {
    double m = 0.0;
    for (double r : raw) m += r;
    return 100.0 * sigmoid(m / static_cast<double>(raw.size()));
  }
  double total = 0.0;
  for (double r : raw) total += 100.0 * sigmoid(r);
  return total / static_cast<double>(raw.size());
}

inline double fluency_percent(const FluencyScorerParams& s, std::span<const std::vector<TokenId>> texts,
                              FluencyAveraging mode = FluencyAveraging::kSigmoidThenMean) {
  std::vector<double> raw;
  raw.reserve(texts.size());
  for (const auto& t : texts) raw.push_back(raw_score(s, t));
  return fluency_percent_from_scores(raw, mode);
}

inline void save_scorer(const std::filesystem::path& path, const FluencyScorerParams& s) {
  save_snapshot(path, PolicyParams{s.arch, s.values, 0}, "scorer");
}

inline FluencyScorerParams load_scorer(const std::filesystem::path& path) {
  LoadedSnapshot snap = load_snapshot(path);
  if (snap.kind != "scorer") throw InputError(path.string() + " is not a scorer snapshot");
  FluencyScorerParams s{snap.params.arch, std::move(snap.params.values)};
  if (s.values.size() != FluencyScorerParams::param_count(s.arch)) {
    throw InputError("scorer snapshot has the wrong parameter count");
  }
  return s;
}

}  // namespace fluentrl
