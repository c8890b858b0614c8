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

#include <sstream>

#include "fluentrl/eval.hpp"
#include "scenarios.hpp"

using namespace fluentrl;
namespace ts = fluentrl::testing;

TEST(Copeland, ThreeModelHandTable) {
  const auto t = copeland_winrates(ts::three_model_records());
  ASSERT_EQ(t.models, (std::vector<std::string>{"M1", "M2", "M3"}));
  const auto& want = ts::three_model_expected();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) {
        EXPECT_FALSE(t.matrix[i][j].has_value());
      } else {
        EXPECT_EQ(t.matrix[i][j].value(), want[i][j]) << i << "," << j;
      }
    }
    EXPECT_EQ(t.average[i].value(), ts::three_model_expected_average()[i]);
  }
}

TEST(Copeland, UnanimousAndAllTies) {
  std::vector<ComparisonRecord> a;
  std::vector<ComparisonRecord> ties;
  for (int p = 0; p < 4; ++p) {
    for (int k = 0; k < 3; ++k) {
      a.push_back({"p" + std::to_string(p), "A", "B", "x" + std::to_string(k), Verdict::kA});
      ties.push_back({"p" + std::to_string(p), "A", "B", "x" + std::to_string(k), Verdict::kTie});
    }
  }
  EXPECT_EQ(copeland_winrates(a).at("A", "B"), 100.0);
  EXPECT_EQ(copeland_winrates(a).at("B", "A"), 0.0);
  EXPECT_EQ(copeland_winrates(ties).at("A", "B"), 50.0);
  EXPECT_EQ(copeland_winrates(ties).at("B", "A"), 50.0);
}

TEST(Copeland, TwoPromptExample) {
  // A beats B on one prompt and ties on the other: (1 + 0.5) / 2.
  const std::vector<ComparisonRecord> r = {{"p1", "A", "B", "u", Verdict::kA}, {"p2", "A", "B", "u", Verdict::kTie}};
  EXPECT_EQ(copeland_winrates(r).at("A", "B"), 75.0);
}

TEST(Copeland, EvenSplitCountsAsTie) {
  const std::vector<ComparisonRecord> r = {{"p", "A", "B", "u", Verdict::kA}, {"p", "A", "B", "v", Verdict::kB}};
  EXPECT_EQ(copeland_winrates(r).at("A", "B"), 50.0);
  // A plurality over ties alone is not enough when ties match it.
  const std::vector<ComparisonRecord> s = {{"p", "A", "B", "u", Verdict::kA}, {"p", "A", "B", "v", Verdict::kTie}};
  EXPECT_EQ(copeland_winrates(s).at("A", "B"), 50.0);
}

TEST(Copeland, RandomTablesAreComplementaryAndMatchRecount) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto records = ts::random_verdict_table(rng);
    if (records.empty()) continue;
    const auto t = copeland_winrates(records);
    const auto oracle = ts::oracle_winrates(records);
    for (std::size_t i = 0; i < t.models.size(); ++i) {
      double sum = 0;
      int n = 0;
      for (std::size_t j = 0; j < t.models.size(); ++j) {
        if (i == j || !t.matrix[i][j]) continue;
        ASSERT_EQ(*t.matrix[i][j] + *t.matrix[j][i], 100.0);
        ASSERT_DOUBLE_EQ(*t.matrix[i][j], oracle.rate(t.models[i], t.models[j]));
        sum += *t.matrix[i][j];
        ++n;
      }
      if (n) {
        ASSERT_DOUBLE_EQ(*t.average[i], sum / n);
      }
    }
  }
}

TEST(Copeland, OrientationAndPresentationDoNotMatter) {
  auto records = ts::three_model_records();
  const auto base = copeland_winrates(records);
  for (auto& r : records) {
    std::swap(r.model_a, r.model_b);
    if (r.verdict != Verdict::kTie) r.verdict = r.verdict == Verdict::kA ? Verdict::kB : Verdict::kA;
    r.presented_swapped = !r.presented_swapped;
  }
  EXPECT_EQ(copeland_winrates(records).matrix, base.matrix);
  std::reverse(records.begin(), records.end());
  EXPECT_EQ(copeland_winrates(records).matrix, base.matrix);
}

TEST(Copeland, SelfComparisonRejected) {
  const std::vector<ComparisonRecord> r = {{"p", "A", "A", "u", Verdict::kA}};
  EXPECT_THROW(copeland_winrates(r), InputError);
}

TEST(Copeland, UncomparedPairsStayEmpty) {
  const std::vector<ComparisonRecord> r = {{"p", "A", "B", "u", Verdict::kA}, {"p", "B", "C", "u", Verdict::kA}};
  const auto t = copeland_winrates(r);
  EXPECT_FALSE(t.at("A", "C").has_value());
  EXPECT_EQ(t.average[t.index("B")].value(), 50.0);
  EXPECT_NE(format_table(t).find("Average"), std::string::npos);
  EXPECT_TRUE(to_json(t)["matrix"][0][2].is_null());
}

TEST(Agreement, UnanimousIsOne) {
  std::vector<ComparisonRecord> r;
  for (int k = 0; k < 3; ++k) r.push_back({"p", "A", "B", "x" + std::to_string(k), Verdict::kB});
  const auto a = annotator_agreement(r);
  ASSERT_TRUE(a);
  EXPECT_EQ(a->fraction(), 1.0);
}

TEST(Agreement, OneDissenterAmongFifty) {
  std::vector<ComparisonRecord> r;
  for (int p = 0; p < 10; ++p) {
    for (int k = 0; k < 5; ++k) {
      const Verdict v = (p == 0 && k == 0) ? Verdict::kB : Verdict::kA;
      r.push_back({"p" + std::to_string(p), "A", "B", "x" + std::to_string(k), v});
    }
  }
  const auto a = annotator_agreement(r);
  ASSERT_TRUE(a);
  EXPECT_EQ(a->matching, 49u);
  EXPECT_EQ(a->counted, 50u);
  EXPECT_EQ(a->fraction(), 49.0 / 50.0);
}

TEST(Agreement, TieVotesAreNotCounted) {
  const std::vector<ComparisonRecord> r = {{"p", "A", "B", "u", Verdict::kA},
                                           {"p", "A", "B", "v", Verdict::kA},
                                           {"p", "A", "B", "w", Verdict::kTie}};
  const auto a = annotator_agreement(r);
  ASSERT_TRUE(a);
  EXPECT_EQ(a->counted, 2u);
}

TEST(Agreement, AllTiesOrSingleAnnotatorsGiveEmpty) {
  std::vector<ComparisonRecord> ties;
  for (int k = 0; k < 5; ++k) ties.push_back({"p", "A", "B", "x" + std::to_string(k), Verdict::kTie});
  EXPECT_FALSE(annotator_agreement(ties).has_value());
  const std::vector<ComparisonRecord> single = {{"p", "A", "B", "u", Verdict::kA}};
  EXPECT_FALSE(annotator_agreement(single).has_value());
}

TEST(Records, JsonlRoundTripAndSchema) {
  const auto records = ts::three_model_records();
  std::stringstream buf;
  write_records_jsonl(buf, records);
  std::string first;
  std::getline(std::stringstream(buf.str()), first);
  EXPECT_EQ(first, R"({"prompt_id":"p1","model_a":"M1","model_b":"M2","annotator_id":"ann0","verdict":"A"})");
  EXPECT_EQ(parse_records_jsonl(buf, "mem"), records);
}

TEST(Records, BadLinesNameTheLine) {
  std::stringstream in(
      "{\"prompt_id\":\"p\",\"model_a\":\"A\",\"model_b\":\"B\",\"annotator_id\":\"u\",\"verdict\":\"A\"}\n\n"
      "{\"prompt_id\":\"p\",\"model_a\":\"A\",\"model_b\":\"B\",\"annotator_id\":\"u\",\"verdict\":\"maybe\"}\n");
  try {
    parse_records_jsonl(in, "f.jsonl");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("f.jsonl:3"), std::string::npos);
  }
  std::stringstream self("{\"prompt_id\":\"p\",\"model_a\":\"A\",\"model_b\":\"A\",\"annotator_id\":\"u\",\"verdict\":\"A\"}");
  EXPECT_THROW(parse_records_jsonl(self, "s"), InputError);
  std::stringstream missing("{\"prompt_id\":\"p\"}");
  EXPECT_THROW(parse_records_jsonl(missing, "m"), InputError);
}
