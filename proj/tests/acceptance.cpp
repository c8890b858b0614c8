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

// Acceptance checks: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "fluentrl/experiment.hpp"
#include "scenarios.hpp"

using namespace fluentrl;
namespace ts = fluentrl::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  double pg = 0, kl = 0, nll = 0, bt = 0;
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const auto seed = static_cast<std::uint64_t>(trial);
    const auto p = ts::random_params(ts::tiny_arch(), 1000 + seed);
    const auto ref = ts::random_params(ts::tiny_arch(), 2000 + seed);
    const auto groups = ts::random_groups(p.arch, 1 + trial % 3, 2 + trial % 3, rng);
    pg = std::max(pg, ts::max_rel_error(policy_loss_grad(p, groups), ts::finite_difference(p, [&](const PolicyParams& q) {
                                          return ts::oracle_policy_loss(q, groups);
                                        })));
    kl = std::max(kl, ts::max_rel_error(kl_loss_grad(p, ref, groups), ts::finite_difference(p, [&](const PolicyParams& q) {
                                          return ts::oracle_mean_rb_kl(q, ref, groups);
                                        })));
    const auto ex = ts::random_sft_example(p.arch, rng);
    std::vector<double> g(p.size(), 0.0);
    masked_nll(p, ex, g);
    nll = std::max(nll, ts::max_rel_error(g, ts::finite_difference(p, [&](const PolicyParams& q) {
                                            return ts::oracle_nll(q, ex);
                                          })));

    auto s = FluencyScorerParams::random(p.arch, 3000 + seed);
    for (std::size_t i = s.head_offset(); i < s.values.size(); ++i) s.values[i] = standard_normal(rng);
    std::vector<TokenPair> pairs(2);
    for (auto& pr : pairs) {
      for (std::size_t n = 1 + uniform_index(rng, 5); n > 0; --n) pr.preferred.push_back(static_cast<TokenId>(uniform_index(rng, 10)));
      for (std::size_t n = 1 + uniform_index(rng, 5); n > 0; --n) pr.rejected.push_back(static_cast<TokenId>(uniform_index(rng, 10)));
    }
    std::vector<double> sg(s.values.size(), 0.0);
    bt_batch_loss(s, pairs, sg);
    bt = std::max(bt, ts::max_rel_error(sg, ts::finite_difference(s.values, [&](const std::vector<double>& v) {
                                          double total = 0;
                                          for (const auto& pr : pairs) {
                                            total += bt_loss(ts::oracle_raw_score(p.arch, v, pr.preferred),
                                                             ts::oracle_raw_score(p.arch, v, pr.rejected));
                                          }
                                          return total / 2.0;
                                        })));
  }
  const double secs = seconds_since(t0);
  const std::size_t params = ts::random_params(ts::tiny_arch(), 0).size();
  const bool ok = pg < 1e-4 && kl < 1e-4 && nll < 1e-4 && bt < 1e-4 && secs < 60 && params <= 2000;
  return {ok, fmt("max rel err: policy loss %.2e, RB-KL %.2e, masked NLL %.2e, bt_loss %.2e; %zu params; %.1f s", pg,
                  kl, nll, bt, params, secs)};
}

Outcome kl_estimators() {
  const auto t0 = std::chrono::steady_clock::now();
  int unbiased = 0, lower_var = 0;
  double worst_z = 0;
  for (std::uint64_t pair = 1; pair <= 10; ++pair) {
    const auto b = ts::kl_pair_benchmark(pair, 50000);
    const double zm = std::abs(b.monte_carlo.mean - *b.exact) / b.monte_carlo.std_error();
    const double zr = std::abs(b.rao_blackwell.mean - *b.exact) / b.rao_blackwell.std_error();
    worst_z = std::max({worst_z, zm, zr});
    unbiased += zm <= 3 && zr <= 3;
    lower_var += b.rao_blackwell.variance <= b.monte_carlo.variance;
  }
  const double secs = seconds_since(t0);
  return {unbiased == 10 && lower_var == 10 && secs < 120,
          fmt("both means within 3 SE on %d/10 pairs (worst %.2f SE); var(RB) <= var(MC) on %d/10; %.1f s", unbiased,
              worst_z, lower_var, secs)};
}

Outcome advantage_algebra() {
  Rng rng(303);
  int shift_ok = 0, degenerate = 0, degenerate_ok = 0, bit_zero_mean = 0;
  double worst_mean = 0, worst_std = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t G = std::size_t{2} << (t % 3);
    std::vector<double> r(G), shifted(G);
    // Every tenth group is constant.
    const bool constant = t % 10 == 0;
    for (auto& x : r) x = constant ? 7.0 : static_cast<double>(uniform_index(rng, 11));
    const double c = static_cast<double>(uniform_index(rng, 1000)) - 500.0;
    for (std::size_t i = 0; i < G; ++i) shifted[i] = r[i] + c;
    const auto a = group_advantages(r);
    shift_ok += a == group_advantages(shifted);
    const bool deg = std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; });
    if (deg) {
      ++degenerate;
      degenerate_ok += std::all_of(a.begin(), a.end(), [](double x) { return x == 0.0; });
      continue;
    }
    double m = 0, q = 0;
    for (double x : a) m += x;
    bit_zero_mean += m == 0.0;
    m /= static_cast<double>(G);
    for (double x : a) q += (x - m) * (x - m);
    worst_mean = std::max(worst_mean, std::abs(m));
    worst_std = std::max(worst_std, std::abs(std::sqrt(q / static_cast<double>(G)) - 1.0));
  }
  const bool ok = shift_ok == 1000 && degenerate_ok == degenerate && worst_mean < 1e-12 && worst_std < 1e-12;
  return {ok, fmt("shift bit-identical %d/1000; degenerate exactly zero %d/%d; |mean| <= %.1e, |std-1| <= %.1e "
                  "(rounding floor; sum bit-zero in %d/%d)",
                  shift_ok, degenerate_ok, degenerate, worst_mean, worst_std, bit_zero_mean, 1000 - degenerate)};
}

Outcome bandit() {
  const auto t0 = std::chrono::steady_clock::now();
  int converged = 0, bites = 0;
  double min_best = 1;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ts::BanditSetup s;
    const auto free_run = ts::run_bandit(s, seed);
    s.beta = 0.1;
    const auto reg = ts::run_bandit(s, seed);
    converged += free_run.final_probs[3] > 0.9;
    min_best = std::min(min_best, free_run.final_probs[3]);
    bites += reg.final_kl < free_run.final_kl;
  }
  const double secs = seconds_since(t0);
  return {converged >= 9 && bites == 10 && secs < 60,
          fmt("p(best) > 0.9 on %d/10 seeds (min %.4f); KL(beta=0.1) < KL(beta=0) on %d/10; %.1f s", converged,
              min_best, bites, secs)};
}

Outcome pipeline_determinism() {
  ts::Desk d;
  auto c = ts::desk_config(50);
  std::vector<StepReport> base;
  bool identical = true, law = true;
  double slowest = 0;
  for (std::size_t w : {1, 2, 4}) {
    c.sampler_workers = w;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = d.run(c);
    slowest = std::max(slowest, seconds_since(t0));
    if (base.empty()) {
      base = r.reports;
    } else {
      identical = identical && r.reports == base;
    }
    for (std::size_t i = 3; i < r.reports.size(); ++i) {
      law = law && r.reports[i].sampling_version == r.reports[i - 3].update_version;
    }
    for (std::size_t i = 0; i < 3 && i < r.reports.size(); ++i) law = law && r.reports[i].sampling_version == 0;
  }
  return {identical && law && base.size() == 50 && slowest < 60,
          fmt("reports identical across 1/2/4 sampler workers: %s; sampling version = update version of t-3: %s; "
              "slowest 50-step run %.1f s",
              identical ? "yes" : "no", law ? "yes" : "no", slowest)};
}

Outcome fluency_experiment() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg;
  const auto rep = run_fluency_experiment(cfg);
  const auto& s = rep.summary;
  const double secs = seconds_since(t0);
  int stable_seeds = 0;
  for (const auto& seed : rep.seeds) stable_seeds += std::abs(seed.rl_end - seed.rl_start) < 0.05;
  const bool ok = s.rl_stable && s.translated_gap && s.control_matches.value_or(false);
  return {ok, fmt("(a) RL adherence %.3f -> %.3f (per-seed |delta| < 0.05 on %d/%zu), reward slope %+.4f; "
                  "(b) translated SFT %.3f, gap %.3f; (c) control %.3f, |delta| %.3f; %.0f s",
                  s.rl_start, s.rl_end, stable_seeds, rep.seeds.size(), s.rl_reward_slope, s.translated_end,
                  s.rl_end - s.translated_end, s.control_end.value_or(-1.0),
                  std::abs(s.rl_end - s.control_end.value_or(-1.0)), secs)};
}

Outcome judge_protocol() {
  const auto tmpl = ts::asset_template();
  const auto begin = tmpl.find("### Example 1"), end = tmpl.find("### Example 2");
  bool example_ok = false;
  if (begin != std::string::npos && end != std::string::npos) {
    const auto v = parse_score(tmpl.substr(begin, end - begin));
    example_ok = v.parsed && v.score == 9;
  }
  int formats = 0;
  for (int x = 1; x <= 10; ++x) {
    const auto v = parse_score("Explanation.\n\n**Score:**\n" + std::to_string(x) + "/10");
    formats += v.parsed && v.score == x;
  }
  int fallback = 0;
  for (const auto& s : ts::fuzzed_malformed(50, 7)) {
    const auto v = parse_score(s);
    fallback += !v.parsed && v.score == 3;
  }
  return {example_ok && formats == 10 && fallback == 50,
          fmt("template example recovered: %s; X/10 for X=1..10: %d/10; malformed fall back to 3: %d/50",
              example_ok ? "yes" : "no", formats, fallback)};
}

Outcome aggregation() {
  const auto t = copeland_winrates(ts::three_model_records());
  bool hand = t.models.size() == 3;
  for (std::size_t i = 0; hand && i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) hand = hand && t.matrix[i][j] == ts::three_model_expected()[i][j];
    }
    hand = hand && t.average[i] == ts::three_model_expected_average()[i];
  }
  Rng rng(808);
  int tables = 0, complementary = 0;
  while (tables < 1000) {
    const auto records = ts::random_verdict_table(rng);
    if (records.empty()) continue;
    ++tables;
    const auto r = copeland_winrates(records);
    bool ok = true;
    for (std::size_t i = 0; i < r.models.size(); ++i) {
      for (std::size_t j = 0; j < r.models.size(); ++j) {
        if (i != j && r.matrix[i][j]) ok = ok && *r.matrix[i][j] + *r.matrix[j][i] == 100.0;
      }
    }
    complementary += ok;
  }
  return {hand && complementary == 1000,
          fmt("hand-computed 3-model matrix reproduced: %s; entry(i,j)+entry(j,i)=100 on %d/1000 random tables",
              hand ? "yes" : "no", complementary)};
}

Outcome sft_bookkeeping() {
  SftHyper h;
  h.learning_rate = 1e-3;
  const auto r = run_sft(ts::random_params(PolicyArch{}, 5, 0.1), ts::toy_sft_dataset(1000, 1), h);
  std::ifstream in(std::string(FLUENTRL_TEST_DATA) + "/chat_golden.json");
  const auto cases = nlohmann::json::parse(in);
  ToyGrammar g;
  int text_ok = 0, token_cases = 0, token_ok = 0;
  for (const auto& c : cases) {
    const auto conv = c.get<Conversation>();
    text_ok += render_chat_text(conv) == c.at("text").get<std::string>();
    if (!c.contains("tokens")) continue;
    ++token_cases;
    const auto rc = render_chat(conv, g.vocab());
    std::vector<std::string> labels;
    for (TokenId t : rc.ids) labels.push_back(g.vocab().label(t));
    const std::vector<int> mask(rc.loss_mask.begin(), rc.loss_mask.end());
    token_ok += labels == c.at("tokens").get<std::vector<std::string>>() && mask == c.at("mask").get<std::vector<int>>();
  }
  const auto n = static_cast<int>(cases.size());
  return {r.total_steps == 31 && sft_steps_per_epoch(1000, 32) == 31 && text_ok == n && token_ok == token_cases,
          fmt("1000 examples at batch 32: %zu optimizer steps; golden text byte-identical %d/%d; tokens and masks "
              "%d/%d",
              r.total_steps, text_ok, n, token_ok, token_cases)};
}

Outcome fluency_scorer() {
  const auto t0 = std::chrono::steady_clock::now();
  const double pct = 100 * sigmoid(2.47);
  const auto task = ts::scorer_task(11, 2000, 500);
  ScorerHyper h;
  h.seed = 3;
  const double acc = pairwise_accuracy(train_scorer(task.train, h).params, task.held_out);
  const auto control = ts::shuffled_label_accuracies(task, h, 5, 9);
  double mean = 0;
  for (double a : control) mean += a / static_cast<double>(control.size());
  return {std::abs(pct - 92.2) <= 0.05 && acc >= 0.95 && std::abs(mean - 0.5) <= 0.05,
          fmt("sigmoid(2.47) = %.3f%%; held-out accuracy %.3f; shuffled-label control %.3f (mean of 5); %.1f s", pct,
              acc, mean, seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},   {"KL estimator statistics", kl_estimators},
      {"advantage algebra", advantage_algebra},   {"bandit convergence", bandit},
      {"pipeline determinism and version law", pipeline_determinism},
      {"central fluency analog", fluency_experiment},
      {"judge protocol", judge_protocol},         {"aggregation", aggregation},
      {"SFT bookkeeping", sft_bookkeeping},       {"fluency scorer", fluency_scorer}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed;
}
