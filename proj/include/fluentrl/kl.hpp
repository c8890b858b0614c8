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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentrl/errors.hpp"
#include "fluentrl/parallel.hpp"
#include "fluentrl/pg_objective.hpp"
#include "fluentrl/policy.hpp"
#include "fluentrl/rng.hpp"

namespace fluentrl {

enum class KlEstimator { kMonteCarlo, kRaoBlackwell, kExact };

inline std::string to_string(KlEstimator e) {
  switch (e) {
    case KlEstimator::kMonteCarlo: return "monte_carlo";
    case KlEstimator::kRaoBlackwell: return "rao_blackwell";
    case KlEstimator::kExact: return "exact";
  }
  return "?";
}

inline KlEstimator parse_kl_estimator(const std::string& s) {
  if (s == "monte_carlo") return KlEstimator::kMonteCarlo;
  if (s == "rao_blackwell") return KlEstimator::kRaoBlackwell;
  if (s == "exact") return KlEstimator::kExact;
  throw ConfigError("kl.estimator: unknown estimator '" + s + "'");
}

struct KlConfig {
  double beta = 1e-2;
  KlEstimator estimator = KlEstimator::kRaoBlackwell;

  void validate() const {
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("kl.beta must be >= 0");
  }
};

// sum_w p(w) log(p(w) / q(w))
inline double exact_kl_row(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("exact_kl_row: size mismatch");
  double kl = 0.0;
  for (std::size_t w = 0; w < p.size(); ++w) {
    if (p[w] < 0.0 || q[w] < 0.0) throw InputError("exact_kl_row: negative probability");
    if (p[w] == 0.0) continue;
    if (q[w] == 0.0) throw InputError("exact_kl_row: q(w) = 0 where p(w) > 0");
    kl += p[w] * (std::log(p[w]) - std::log(q[w]));
  }
  return kl;
}

// Single-sample log-ratio. Unbiased for the sequence KL but can be negative.
inline double mc_kl_term(double policy_logprob, double ref_logprob) {
  return policy_logprob - ref_logprob;
}

inline double mc_kl_sequence(const PolicyParams& policy, const PolicyParams& ref,
                             const TokenSequence& seq) {
  const auto lp = sequence_log_prob(policy, seq);
  const auto lr = sequence_log_prob(ref, seq);
  double total = 0.0;
  for (std::size_t j = 0; j < lp.size(); ++j) total += mc_kl_term(lp[j], lr[j]);
  return total;
}

namespace detail {

// Adds weight * grad of the per-position KL sum (reference frozen) to `grad`
// when it is non-empty; returns the KL sum.
inline double rb_kl_accumulate(const PolicyParams& policy, const PolicyParams& ref,
                               const TokenSequence& seq, double weight, std::span<double> grad) {
  check_response(seq);
  if (seq.response_length() == 0) throw InputError("rb_kl_sequence: empty response");
  if (!(policy.arch == ref.arch)) throw InputError("rb_kl_sequence: architecture mismatch");
  check_tokens(policy.arch, seq.ids);
  PolicyCache pc, rc;
  const std::size_t V = policy.arch.V();
  std::vector<double> dlogits(V);
  double total = 0.0;
  for (std::size_t t = seq.prompt_length; t < seq.size(); ++t) {
    const auto ctx = std::span<const TokenId>(seq.ids).first(t);
    policy_forward(policy, ctx, pc);
    policy_forward(ref, ctx, rc);
    const auto logp = log_softmax(pc.logits);
    const auto logq = log_softmax(rc.logits);
    double kl = 0.0;
    for (std::size_t w = 0; w < V; ++w) kl += std::exp(logp[w]) * (logp[w] - logq[w]);
    total += kl;
    if (!grad.empty() && weight != 0.0) {
      // d KL(softmax(l) || q) / d l_k = p_k (log p_k - log q_k - KL)
      for (std::size_t w = 0; w < V; ++w) {
        dlogits[w] = weight * std::exp(logp[w]) * (logp[w] - logq[w] - kl);
      }
      policy_backward(policy, pc, dlogits, grad);
    }
  }
  return total;
}

}  // namespace detail

// Sum over response positions of the exact next-token KL between policy and
// reference, conditioned on the sampled prefix.
inline double rb_kl_sequence(const PolicyParams& policy, const PolicyParams& ref,
                             const TokenSequence& seq) {
  return detail::rb_kl_accumulate(policy, ref, seq, 0.0, {});
}

inline double kl_sequence(const PolicyParams& policy, const PolicyParams& ref,
                          const TokenSequence& seq, KlEstimator estimator) {
  switch (estimator) {
    case KlEstimator::kRaoBlackwell: return rb_kl_sequence(policy, ref, seq);
    case KlEstimator::kMonteCarlo: return mc_kl_sequence(policy, ref, seq);
    case KlEstimator::kExact:
      throw ConfigError("kl: the exact estimator needs enumeration, not a sampled sequence");
  }
  return 0.0;
}

// Gradient of (1/N) sum over all N sampled responses of the per-sequence KL
// estimate, with the reference frozen and the samples held fixed.
inline std::vector<double> kl_loss_grad(const PolicyParams& policy, const PolicyParams& ref,
                                        std::span<const ResponseGroup> groups,
                                        KlEstimator estimator = KlEstimator::kRaoBlackwell,
                                        std::size_t workers = 1) {
  std::vector<double> grad(policy.size(), 0.0);
  std::size_t n = 0;
  for (const auto& g : groups) n += g.responses.size();
  if (n == 0) return grad;
  if (estimator == KlEstimator::kExact) {
    throw ConfigError("kl: the exact estimator is an enumeration oracle, not a training loss");
  }
  std::vector<std::vector<double>> partial(groups.size());
  parallel_for(groups.size(), workers, [&](std::size_t gi) {
    auto& buf = partial[gi];
    buf.assign(policy.size(), 0.0);
    for (const auto& seq : groups[gi].responses) {
      if (estimator == KlEstimator::kRaoBlackwell) {
        detail::rb_kl_accumulate(policy, ref, seq, 1.0, buf);
      } else {
        // Reference term is constant in theta.
        accumulate_logprob_grad(policy, seq.ids, response_weights(seq), buf);
      }
    }
  });
  for (const auto& buf : partial) {
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += buf[k];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (double& x : grad) x *= inv_n;
  return grad;
}

// Mean per-sequence KL estimate over every response in the batch.
inline double mean_kl(const PolicyParams& policy, const PolicyParams& ref,
                      std::span<const ResponseGroup> groups,
                      KlEstimator estimator = KlEstimator::kRaoBlackwell) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    for (const auto& seq : g.responses) {
      total += kl_sequence(policy, ref, seq, estimator);
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

// Exact KL between the sequence distributions of two policies, where a
// sequence stops at `eos` or after `max_new_tokens`. Computed with the chain
// rule: sum over reachable prefixes of P(prefix) * KL(next-token rows).
// Exponential in max_new_tokens; for small vocabularies only.
inline double enumerate_sequence_kl(const PolicyParams& policy, const PolicyParams& ref,
                                    const TokenSequence& prompt, int max_new_tokens,
                                    TokenId eos) {
  std::vector<TokenId> ids = prompt.ids;
  std::function<double(double, int)> recurse = [&](double prefix_prob, int depth) -> double {
    if (depth == max_new_tokens || prefix_prob == 0.0) return 0.0;
    const auto p = softmax(forward_logits(policy, ids));
    const auto q = softmax(forward_logits(ref, ids));
    double total = prefix_prob * exact_kl_row(p, q);
    for (std::size_t w = 0; w < p.size(); ++w) {
      if (static_cast<TokenId>(w) == eos) continue;
      ids.push_back(static_cast<TokenId>(w));
      total += recurse(prefix_prob * p[w], depth + 1);
      ids.pop_back();
    }
    return total;
  };
  return recurse(1.0, 0);
}

struct EstimatorStats {
  double mean = 0.0;
  double variance = 0.0;  // unbiased sample variance
  std::size_t count = 0;
  double std_error() const {
    return count ? std::sqrt(variance / static_cast<double>(count)) : 0.0;
  }
};

inline EstimatorStats summarize(std::span<const double> xs) {
  EstimatorStats s;
  s.count = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - s.mean) * (x - s.mean);
  s.variance = xs.size() > 1 ? sq / static_cast<double>(xs.size() - 1) : 0.0;
  return s;
}

struct KlBenchmark {
  EstimatorStats monte_carlo;
  EstimatorStats rao_blackwell;
  std::optional<double> exact;
};

// Draws n sequences from `policy` and evaluates both estimators on the same
// samples.
inline KlBenchmark benchmark_kl_estimators(const PolicyParams& policy, const PolicyParams& ref,
                                           const TokenSequence& prompt,
                                           const SamplerConfig& sampler, std::size_t n,
                                           std::uint64_t seed, bool with_exact = true) {
  std::vector<double> mc(n), rb(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    const TokenSequence seq = sample_response(policy, prompt, sampler, rng);
    mc[i] = mc_kl_sequence(policy, ref, seq);
    rb[i] = rb_kl_sequence(policy, ref, seq);
  }
  KlBenchmark out{summarize(mc), summarize(rb), std::nullopt};
  if (with_exact) {
    out.exact = enumerate_sequence_kl(policy, ref, prompt, sampler.max_new_tokens, sampler.eos);
  }
  return out;
}

inline void to_json(nlohmann::json& j, const EstimatorStats& s) {
  j = {{"mean", s.mean}, {"variance", s.variance}, {"count", s.count},
       {"std_error", s.std_error()}};
}

inline void to_json(nlohmann::json& j, const KlBenchmark& b) {
  j = {{"monte_carlo", b.monte_carlo}, {"rao_blackwell", b.rao_blackwell}};
  j["exact"] = b.exact ? nlohmann::json(*b.exact) : nlohmann::json(nullptr);
}

}  // namespace fluentrl
