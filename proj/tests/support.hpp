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

// Independent reference implementations used as test oracles. They recompute
// the toy policy directly from its parameter layout, without the library's
// caches or backward passes.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fluentrl/policy.hpp"
#include "fluentrl/rng.hpp"

namespace fluentrl::testing {

// Small enough for finite differences: 10*4 + 8*12 + 8 + 8*10 + 10 = 234 params.
inline PolicyArch tiny_arch() { return PolicyArch{10, 3, 4, 8}; }

inline PolicyParams random_params(const PolicyArch& arch, std::uint64_t seed, double scale = 1.0) {
  return PolicyParams::random(arch, seed, scale);
}

// Hidden layer by direct evaluation of embed -> concat -> tanh.
inline std::vector<double> oracle_hidden(const PolicyArch& a, std::span<const double> values,
                                         std::span<const TokenId> ctx) {
  const std::size_t V = a.V(), W = a.W(), d = a.d(), h = a.h();
  const std::size_t E = 0, W1 = V * d, B1 = W1 + h * W * d;
  std::vector<double> x(W * d, 0.0);
  for (std::size_t s = 0; s < W; ++s) {
    const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(ctx.size()) - static_cast<std::ptrdiff_t>(W) +
                               static_cast<std::ptrdiff_t>(s);
    if (pos < 0) continue;
    const auto tok = static_cast<std::size_t>(ctx[static_cast<std::size_t>(pos)]);
    for (std::size_t k = 0; k < d; ++k) x[s * d + k] = values[E + tok * d + k];
  }
  std::vector<double> hid(h);
  for (std::size_t j = 0; j < h; ++j) {
    double acc = values[B1 + j];
    for (std::size_t k = 0; k < W * d; ++k) acc += values[W1 + j * W * d + k] * x[k];
    hid[j] = std::tanh(acc);
  }
  return hid;
}

// Logits: hidden layer followed by the output projection.
inline std::vector<double> oracle_logits(const PolicyParams& p, std::span<const TokenId> ctx) {
  const auto& a = p.arch;
  const std::size_t V = a.V(), W = a.W(), d = a.d(), h = a.h();
  const std::size_t W2 = V * d + h * W * d + h, B2 = W2 + V * h;
  const auto hid = oracle_hidden(a, p.values, ctx);
  std::vector<double> out(V);
  for (std::size_t v = 0; v < V; ++v) {
    double acc = p.values[B2 + v];
    for (std::size_t j = 0; j < h; ++j) acc += p.values[W2 + v * h + j] * hid[j];
    out[v] = acc;
  }
  return out;
}

// Scorer: head over the mean of hidden states for every prefix of bos+text
// that ends on a text token (bos alone when the text is empty).
inline double oracle_raw_score(const PolicyArch& a, std::span<const double> values,
                               std::span<const TokenId> text) {
  std::vector<TokenId> ids = {Vocabulary::kBos};
  ids.insert(ids.end(), text.begin(), text.end());
  const std::size_t h = a.h(), head = a.V() * a.d() + h * a.W() * a.d() + h;
  std::vector<double> pool(h, 0.0);
  std::size_t n = 0;
  for (std::size_t t = text.empty() ? 1 : 2; t <= ids.size(); ++t, ++n) {
    const auto hid = oracle_hidden(a, values, std::span<const TokenId>(ids).first(t));
    for (std::size_t j = 0; j < h; ++j) pool[j] += hid[j];
  }
  double r = values[head + h];
  for (std::size_t j = 0; j < h; ++j) r += values[head + j] * pool[j] / static_cast<double>(n);
  return r;
}

inline std::vector<double> oracle_probs(const PolicyParams& p, std::span<const TokenId> ctx) {
  auto l = oracle_logits(p, ctx);
  double mx = l[0];
  for (double v : l) mx = std::max(mx, v);
  double z = 0.0;
  for (double& v : l) z += (v = std::exp(v - mx));
  for (double& v : l) v /= z;
  return l;
}

// Sum of log-probabilities of the response tokens, step by step.
inline double oracle_seq_logprob(const PolicyParams& p, const TokenSequence& seq) {
  double total = 0.0;
  for (std::size_t t = seq.prompt_length; t < seq.ids.size(); ++t) {
    const auto probs = oracle_probs(p, std::span<const TokenId>(seq.ids).first(t));
    total += std::log(probs[static_cast<std::size_t>(seq.ids[t])]);
  }
  return total;
}

// Row KL sum over the response positions, by direct summation.
inline double oracle_rb_kl(const PolicyParams& p, const PolicyParams& q, const TokenSequence& seq) {
  double total = 0.0;
  for (std::size_t t = seq.prompt_length; t < seq.ids.size(); ++t) {
    const auto ctx = std::span<const TokenId>(seq.ids).first(t);
    const auto a = oracle_probs(p, ctx), b = oracle_probs(q, ctx);
    for (std::size_t w = 0; w < a.size(); ++w) total += a[w] * (std::log(a[w]) - std::log(b[w]));
  }
  return total;
}

// Central differences of f over every parameter.
inline std::vector<double> finite_difference(PolicyParams p, const std::function<double(const PolicyParams&)>& f,
                                             double eps = 1e-5) {
  std::vector<double> g(p.values.size());
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double orig = p.values[i];
    p.values[i] = orig + eps;
    const double up = f(p);
    p.values[i] = orig - eps;
    const double down = f(p);
    p.values[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

inline std::vector<double> finite_difference(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                             double eps = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = f(x);
    x[i] = orig - eps;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

// Max over entries of |a-b| / max(|a|, |b|, 1e-3).
inline double max_rel_error(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-3});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// Random sequence: bos + `prompt_len - 1` tokens, then `resp_len` tokens.
inline TokenSequence random_sequence(const PolicyArch& arch, std::size_t prompt_len, std::size_t resp_len, Rng& rng) {
  TokenSequence s;
  s.ids.push_back(Vocabulary::kBos);
  for (std::size_t i = 1; i < prompt_len + resp_len; ++i) {
    s.ids.push_back(static_cast<TokenId>(uniform_index(rng, static_cast<std::uint64_t>(arch.vocab_size))));
  }
  s.prompt_length = prompt_len;
  return s;
}

}  // namespace fluentrl::testing
