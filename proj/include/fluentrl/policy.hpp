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
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentrl/errors.hpp"
#include "fluentrl/rng.hpp"
#include "fluentrl/vocabulary.hpp"

namespace fluentrl {

// Window-W embedding MLP: the last W tokens are embedded (zero vectors before
// the start of the sequence), concatenated, passed through one tanh layer and
// projected to |V| logits.
//
// Parameter layout (row-major):
//   embed  [V x d]
//   w1     [h x W*d]
//   b1     [h]
//   w2     [V x h]
//   b2     [V]
struct PolicyArch {
  int vocab_size = 64;
  int window = 8;
  int embed_dim = 16;
  int hidden_dim = 32;

  std::size_t V() const { return static_cast<std::size_t>(vocab_size); }
  std::size_t W() const { return static_cast<std::size_t>(window); }
  std::size_t d() const { return static_cast<std::size_t>(embed_dim); }
  std::size_t h() const { return static_cast<std::size_t>(hidden_dim); }
  std::size_t input_dim() const { return W() * d(); }

  std::size_t embed_offset() const { return 0; }
  std::size_t w1_offset() const { return V() * d(); }
  std::size_t b1_offset() const { return w1_offset() + h() * input_dim(); }
  std::size_t encoder_size() const { return b1_offset() + h(); }
  std::size_t w2_offset() const { return encoder_size(); }
  std::size_t b2_offset() const { return w2_offset() + V() * h(); }
  std::size_t param_count() const { return b2_offset() + V(); }

  void validate() const {
    if (vocab_size < 2 || window < 1 || embed_dim < 1 || hidden_dim < 1) {
      throw ConfigError("policy architecture: all dimensions must be positive, vocab >= 2");
    }
  }

  bool operator==(const PolicyArch&) const = default;
};

inline void to_json(nlohmann::json& j, const PolicyArch& a) {
  j = {{"vocab_size", a.vocab_size},
       {"window", a.window},
       {"embed_dim", a.embed_dim},
       {"hidden_dim", a.hidden_dim}};
}

inline void from_json(const nlohmann::json& j, PolicyArch& a) {
  j.at("vocab_size").get_to(a.vocab_size);
  j.at("window").get_to(a.window);
  j.at("embed_dim").get_to(a.embed_dim);
  j.at("hidden_dim").get_to(a.hidden_dim);
}

struct PolicyParams {
  PolicyArch arch;
  std::vector<double> values;
  std::uint64_t version = 0;

  static PolicyParams zeros(const PolicyArch& arch) {
    arch.validate();
    return PolicyParams{arch, std::vector<double>(arch.param_count(), 0.0), 0};
  }

  // Gaussian init scaled by 1/sqrt(fan_in); biases zero.
  static PolicyParams random(const PolicyArch& arch, std::uint64_t seed, double scale = 1.0) {
    PolicyParams p = zeros(arch);
    Rng rng(seed);
    auto fill = [&](std::size_t begin, std::size_t end, double stddev) {
      for (std::size_t i = begin; i < end; ++i) p.values[i] = stddev * standard_normal(rng);
    };
    fill(arch.embed_offset(), arch.w1_offset(), scale);
    fill(arch.w1_offset(), arch.b1_offset(), scale / std::sqrt(static_cast<double>(arch.input_dim())));
    fill(arch.w2_offset(), arch.b2_offset(), scale / std::sqrt(static_cast<double>(arch.h())));
    return p;
  }

  std::size_t size() const { return values.size(); }

  void validate() const {
    arch.validate();
    if (values.size() != arch.param_count()) {
      throw InputError("policy params: expected " + std::to_string(arch.param_count()) +
                       " values, got " + std::to_string(values.size()));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw InputError("policy params: non-finite entry");
    }
  }
};

using DistributionRow = std::vector<double>;

inline DistributionRow softmax(std::span<const double> logits) {
  DistributionRow p(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

namespace detail {

// Activations kept for the backward pass.
struct EncoderCache {
  std::vector<TokenId> slots;  // -1 where the window runs past the start
  std::vector<double> input;   // [W*d]
  std::vector<double> hidden;  // tanh output [h]
};

inline void check_tokens(const PolicyArch& arch, std::span<const TokenId> tokens) {
  for (TokenId t : tokens) {
    if (t < 0 || t >= arch.vocab_size) {
      throw InputError("token id " + std::to_string(t) + " outside vocabulary of size " +
                       std::to_string(arch.vocab_size));
    }
  }
}

// Hidden state for predicting the token after `context`.
inline void encoder_forward(const PolicyArch& arch, std::span<const double> values,
                            std::span<const TokenId> context, EncoderCache& cache) {
  const std::size_t W = arch.W(), d = arch.d(), h = arch.h();
  cache.slots.assign(W, -1);
  cache.input.assign(W * d, 0.0);
  cache.hidden.assign(h, 0.0);
  const std::size_t n = context.size();
  for (std::size_t s = 0; s < W; ++s) {
    if (n + s < W) continue;
    const TokenId t = context[n + s - W];
    cache.slots[s] = t;
    const double* e = values.data() + arch.embed_offset() + static_cast<std::size_t>(t) * d;
    std::copy(e, e + d, cache.input.begin() + static_cast<std::ptrdiff_t>(s * d));
  }
  const double* w1 = values.data() + arch.w1_offset();
  const double* b1 = values.data() + arch.b1_offset();
  const std::size_t in = W * d;
  for (std::size_t j = 0; j < h; ++j) {
    double a = b1[j];
    const double* row = w1 + j * in;
    for (std::size_t k = 0; k < in; ++k) a += row[k] * cache.input[k];
    cache.hidden[j] = std::tanh(a);
  }
}

// Accumulates d(objective)/d(encoder params) given d(objective)/d(hidden).
inline void encoder_backward(const PolicyArch& arch, std::span<const double> values,
                             const EncoderCache& cache, std::span<const double> dhidden,
                             std::span<double> grad) {
  const std::size_t W = arch.W(), d = arch.d(), h = arch.h(), in = W * d;
  const double* w1 = values.data() + arch.w1_offset();
  double* gw1 = grad.data() + arch.w1_offset();
  double* gb1 = grad.data() + arch.b1_offset();
  std::vector<double> dinput(in, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    const double da = dhidden[j] * (1.0 - cache.hidden[j] * cache.hidden[j]);
    if (da == 0.0) continue;
    gb1[j] += da;
    const double* row = w1 + j * in;
    double* grow = gw1 + j * in;
    for (std::size_t k = 0; k < in; ++k) {
      grow[k] += da * cache.input[k];
      dinput[k] += da * row[k];
    }
  }
  for (std::size_t s = 0; s < W; ++s) {
    const TokenId t = cache.slots[s];
    if (t < 0) continue;
    double* ge = grad.data() + arch.embed_offset() + static_cast<std::size_t>(t) * d;
    for (std::size_t i = 0; i < d; ++i) ge[i] += dinput[s * d + i];
  }
}

struct PolicyCache {
  EncoderCache encoder;
  std::vector<double> logits;
};

inline void policy_forward(const PolicyParams& params, std::span<const TokenId> context,
                           PolicyCache& cache) {
  const PolicyArch& arch = params.arch;
  encoder_forward(arch, params.values, context, cache.encoder);
  const std::size_t V = arch.V(), h = arch.h();
  const double* w2 = params.values.data() + arch.w2_offset();
  const double* b2 = params.values.data() + arch.b2_offset();
  cache.logits.assign(V, 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    double z = b2[v];
    const double* row = w2 + v * h;
    for (std::size_t j = 0; j < h; ++j) z += row[j] * cache.encoder.hidden[j];
    cache.logits[v] = z;
  }
}

// Accumulates d(objective)/d(params) given d(objective)/d(logits).
inline void policy_backward(const PolicyParams& params, const PolicyCache& cache,
                            std::span<const double> dlogits, std::span<double> grad) {
  const PolicyArch& arch = params.arch;
  const std::size_t V = arch.V(), h = arch.h();
  const double* w2 = params.values.data() + arch.w2_offset();
  double* gw2 = grad.data() + arch.w2_offset();
  double* gb2 = grad.data() + arch.b2_offset();
  std::vector<double> dhidden(h, 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    const double g = dlogits[v];
    if (g == 0.0) continue;
    gb2[v] += g;
    const double* row = w2 + v * h;
    double* grow = gw2 + v * h;
    for (std::size_t j = 0; j < h; ++j) {
      grow[j] += g * cache.encoder.hidden[j];
      dhidden[j] += g * row[j];
    }
  }
  encoder_backward(arch, params.values, cache.encoder, dhidden, grad);
}

}  // namespace detail

inline std::vector<double> forward_logits(const PolicyParams& params,
                                          std::span<const TokenId> context) {
  if (context.empty()) throw InputError("forward_logits: empty context");
  detail::check_tokens(params.arch, context);
  detail::PolicyCache cache;
  detail::policy_forward(params, context, cache);
  return std::move(cache.logits);
}

// Sampler settings. An empty top_k means the whole vocabulary.
struct SamplerConfig {
  double temperature = 1.0;
  std::optional<int> top_k;
  double top_p = 1.0;
  int max_new_tokens = 64;
  std::uint64_t seed = 0;
  TokenId eos = Vocabulary::kEos;

  // Temperature 0.5, top_k 64, top_p 0.9: the evaluation sampling setup.
  static SamplerConfig nucleus_eval() {
    SamplerConfig c;
    c.temperature = 0.5;
    c.top_k = 64;
    c.top_p = 0.9;
    return c;
  }

  void validate(std::size_t vocab_size) const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw ConfigError("sampler.temperature must be > 0");
    }
    if (top_k && (*top_k < 1 || static_cast<std::size_t>(*top_k) > vocab_size)) {
      throw ConfigError("sampler.top_k must be in [1, vocab size]");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("sampler.top_p must be in (0, 1]");
    if (max_new_tokens < 1) throw ConfigError("sampler.max_new_tokens must be >= 1");
  }
};

// Temperature, then top-k, then nucleus truncation, then renormalization.
// Ranking ties break toward the lower token id.
inline DistributionRow next_token_distribution(std::span<const double> logits,
                                               const SamplerConfig& cfg) {
  cfg.validate(logits.size());
  for (double l : logits) {
    if (!std::isfinite(l)) throw InputError("next_token_distribution: non-finite logit");
  }
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& l : scaled) l /= cfg.temperature;
  DistributionRow p = softmax(scaled);

  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });

  std::size_t keep = p.size();
  if (cfg.top_k) keep = std::min(keep, static_cast<std::size_t>(*cfg.top_k));

  if (cfg.top_p < 1.0) {
    double mass = 0.0;
    for (std::size_t r = 0; r < keep; ++r) mass += p[order[r]];
    double cum = 0.0;
    for (std::size_t r = 0; r < keep; ++r) {
      cum += p[order[r]] / mass;
      if (cum >= cfg.top_p) {
        keep = r + 1;
        break;
      }
    }
  }

  DistributionRow out(p.size(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < keep; ++r) total += p[order[r]];
  for (std::size_t r = 0; r < keep; ++r) out[order[r]] = p[order[r]] / total;
  return out;
}

// Inverse-CDF draw in token-id order.
inline TokenId sample_from(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_nonzero = i;
    cum += probs[i];
    if (u < cum) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last_nonzero);
}

// Appends sampled tokens to the prompt until eos or max_new_tokens.
inline TokenSequence sample_response(const PolicyParams& params, const TokenSequence& prompt,
                                     const SamplerConfig& cfg, Rng& rng) {
  if (prompt.ids.empty()) throw InputError("sample_response: empty prompt");
  detail::check_tokens(params.arch, prompt.ids);
  cfg.validate(params.arch.V());
  TokenSequence out;
  out.ids = prompt.ids;
  out.prompt_length = prompt.ids.size();
  detail::PolicyCache cache;
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    detail::policy_forward(params, out.ids, cache);
    const DistributionRow dist = next_token_distribution(cache.logits, cfg);
    const TokenId next = sample_from(dist, rng);
    out.ids.push_back(next);
    if (next == cfg.eos) break;
  }
  return out;
}

// Adds sum_t w_t * grad log pi(ids[t] | ids[<t]) to `grad` (when non-empty)
// and returns sum_t w_t * log pi(ids[t] | ids[<t]). Positions with zero
// weight are skipped entirely. Uses the full softmax, never the sampler.
inline double accumulate_logprob_grad(const PolicyParams& params, std::span<const TokenId> ids,
                                      std::span<const double> weights, std::span<double> grad) {
  if (weights.size() != ids.size()) throw InputError("weights/ids size mismatch");
  if (!weights.empty() && weights[0] != 0.0) {
    throw InputError("position 0 has no context and cannot be a target");
  }
  detail::check_tokens(params.arch, ids);
  detail::PolicyCache cache;
  std::vector<double> dlogits(params.arch.V());
  double total = 0.0;
  for (std::size_t t = 1; t < ids.size(); ++t) {
    const double w = weights[t];
    if (w == 0.0) continue;
    detail::policy_forward(params, ids.first(t), cache);
    const std::vector<double> logp = log_softmax(cache.logits);
    const auto target = static_cast<std::size_t>(ids[t]);
    total += w * logp[target];
    if (!grad.empty()) {
      for (std::size_t v = 0; v < dlogits.size(); ++v) dlogits[v] = -w * std::exp(logp[v]);
      dlogits[target] += w;
      detail::policy_backward(params, cache, dlogits, grad);
    }
  }
  if (!std::isfinite(total)) throw InternalError("non-finite log-probability");
  return total;
}

inline std::vector<double> response_weights(const TokenSequence& seq, double w = 1.0) {
  std::vector<double> weights(seq.size(), 0.0);
  for (std::size_t t = seq.prompt_length; t < seq.size(); ++t) weights[t] = w;
  return weights;
}

namespace detail {
inline void check_response(const TokenSequence& seq) {
  if (seq.prompt_length == 0) throw InputError("sequence needs a non-empty prompt");
  if (seq.prompt_length > seq.ids.size()) throw InputError("prompt_length exceeds sequence");
}
}  // namespace detail

// log pi(y_j | x, y_<j) for each response token.
inline std::vector<double> sequence_log_prob(const PolicyParams& params, const TokenSequence& seq) {
  detail::check_response(seq);
  if (seq.response_length() == 0) throw InputError("sequence_log_prob: empty response");
  detail::check_tokens(params.arch, seq.ids);
  detail::PolicyCache cache;
  std::vector<double> out;
  out.reserve(seq.response_length());
  for (std::size_t t = seq.prompt_length; t < seq.size(); ++t) {
    detail::policy_forward(params, std::span<const TokenId>(seq.ids).first(t), cache);
    const std::vector<double> logp = log_softmax(cache.logits);
    const double lp = logp[static_cast<std::size_t>(seq.ids[t])];
    if (!std::isfinite(lp)) throw InternalError("non-finite log-probability");
    out.push_back(lp);
  }
  return out;
}

// Gradient of sum_j log pi(y_j | x, y_<j). Zero for an empty response.
inline std::vector<double> grad_log_prob(const PolicyParams& params, const TokenSequence& seq) {
  detail::check_response(seq);
  std::vector<double> grad(params.size(), 0.0);
  accumulate_logprob_grad(params, seq.ids, response_weights(seq), grad);
  return grad;
}

// Snapshot file: "FRLSNAP1", u32 LE header length, JSON header, then
// little-endian float32 values.
inline void save_snapshot(const std::filesystem::path& path, const PolicyParams& params,
                          const std::string& kind = "policy") {
  nlohmann::json header = {{"kind", kind},
                           {"arch", params.arch},
                           {"version", params.version},
                           {"count", params.values.size()}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write snapshot " + path.string());
  out.write("FRLSNAP1", 8);
  const auto len = static_cast<std::uint32_t>(text.size());
  const unsigned char len_le[4] = {static_cast<unsigned char>(len & 0xFF),
                                   static_cast<unsigned char>((len >> 8) & 0xFF),
                                   static_cast<unsigned char>((len >> 16) & 0xFF),
                                   static_cast<unsigned char>((len >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(len_le), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : params.values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    const unsigned char b[4] = {static_cast<unsigned char>(bits & 0xFF),
                                static_cast<unsigned char>((bits >> 8) & 0xFF),
                                static_cast<unsigned char>((bits >> 16) & 0xFF),
                                static_cast<unsigned char>((bits >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!out) throw InputError("failed writing snapshot " + path.string());
}

struct LoadedSnapshot {
  std::string kind;
  PolicyParams params;
  nlohmann::json header;
};

inline LoadedSnapshot load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open snapshot " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "FRLSNAP1", 8) != 0) {
    throw InputError("not a snapshot file: " + path.string());
  }
  unsigned char len_le[4];
  in.read(reinterpret_cast<char*>(len_le), 4);
  const std::uint32_t len = len_le[0] | (len_le[1] << 8) | (len_le[2] << 16) |
                            (static_cast<std::uint32_t>(len_le[3]) << 24);
  std::string text(len, '\0');
  in.read(text.data(), len);
  LoadedSnapshot snap;
  snap.header = nlohmann::json::parse(text);
  snap.kind = snap.header.at("kind").get<std::string>();
  snap.params.arch = snap.header.at("arch").get<PolicyArch>();
  snap.params.version = snap.header.at("version").get<std::uint64_t>();
  const auto count = snap.header.at("count").get<std::size_t>();
  snap.params.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw InputError("truncated snapshot " + path.string());
    const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) |
                               (static_cast<std::uint32_t>(b[3]) << 24);
    snap.params.values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return snap;
}

}  // namespace fluentrl
