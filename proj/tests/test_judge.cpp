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

#include <atomic>
#include <thread>

#include <httplib.h>

#include "fluentrl/grammar.hpp"
#include "fluentrl/judge.hpp"
#include "fluentrl/remote_judge.hpp"
#include "scenarios.hpp"

using namespace fluentrl;
namespace ts = fluentrl::testing;

namespace {

JudgeRequest sample_request(const std::string& user, const std::string& ai) {
  return JudgeRequest{{{"user", user}}, "S0 V0a O0", ai};
}

}  // namespace

TEST(RenderJudgePrompt, SubstitutesJson) {
  const auto req = sample_request("T0", "S1 V0a O1");
  const auto out = render_judge_prompt("A{{input}}B", req);
  ASSERT_EQ(out.front(), 'A');
  ASSERT_EQ(out.back(), 'B');
  const auto j = nlohmann::json::parse(out.substr(1, out.size() - 2));
  EXPECT_EQ(j.size(), 3u);
  const auto back = request_from_json(j);
  EXPECT_EQ(back.conversation_history, req.conversation_history);
  EXPECT_EQ(back.gold_response, req.gold_response);
  EXPECT_EQ(back.ai_response, req.ai_response);
}

TEST(RenderJudgePrompt, KeyOrderAndErrors) {
  const auto out = render_judge_prompt("{{input}}", sample_request("T0", "x"));
  EXPECT_LT(out.find("conversation_history"), out.find("gold_response"));
  EXPECT_LT(out.find("gold_response"), out.find("ai_response"));
  EXPECT_THROW(render_judge_prompt("no placeholder", sample_request("T0", "x")), TemplateError);
  EXPECT_THROW(judge_reward(*std::make_unique<ConstantJudge>("1/10"), "{{input}}",
                            JudgeRequest{{{"assistant", "x"}}, "", "y"}),
               InputError);
}

TEST(RenderJudgePrompt, ShippedTemplateEndsWithBeginYourEvaluation) {
  const auto out = render_judge_prompt(ts::asset_template(), sample_request("T1", "S2 V1b O4"));
  std::string trimmed = out;
  while (!trimmed.empty() && (trimmed.back() == '\n' || trimmed.back() == ' ')) trimmed.pop_back();
  const auto last_line = trimmed.substr(trimmed.rfind('\n') + 1);
  EXPECT_EQ(last_line, "Begin your evaluation:");
  EXPECT_EQ(out.find("{{input}}"), std::string::npos);
}

TEST(ParseScore, TemplateExampleFormat) {
  const auto tmpl = ts::asset_template();
  const auto begin = tmpl.find("### Example 1");
  const auto end = tmpl.find("### Example 2");
  ASSERT_NE(begin, std::string::npos);
  ASSERT_NE(end, std::string::npos);
  const auto v = parse_score(tmpl.substr(begin, end - begin));
  EXPECT_TRUE(v.parsed);
  EXPECT_EQ(v.score, 9);
  const auto w = parse_score("...\n**Score:**\n9/10");
  EXPECT_TRUE(w.parsed);
  EXPECT_EQ(w.score, 9);
}

TEST(ParseScore, LastOccurrenceWinsAndBounds) {
  EXPECT_EQ(parse_score("draft 4/10 ... final 7/10").score, 7);
  EXPECT_EQ(parse_score("10/10").score, 10);
  EXPECT_EQ(parse_score("1/10").score, 1);
  EXPECT_EQ(parse_score("5/10 then 11/10").score, 5);
  const auto none = parse_score("no score here");
  EXPECT_FALSE(none.parsed);
  EXPECT_EQ(none.score, 3);
  EXPECT_EQ(none.raw_text, "no score here");
}

TEST(ParseScore, FuzzedMalformedInputsFallBack) {
  for (const auto& s : ts::fuzzed_malformed(50, 7)) {
    const auto v = parse_score(s);
    EXPECT_FALSE(v.parsed) << s;
    EXPECT_EQ(v.score, 3);
  }
}

TEST(ParseScore, TotalOnRandomBytes) {
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    const std::size_t len = uniform_index(rng, 30);
    for (std::size_t k = 0; k < len; ++k) s += "0123456789/ 1x"[uniform_index(rng, 14)];
    const auto v = parse_score(s);
    EXPECT_GE(v.score, 1);
    EXPECT_LE(v.score, 10);
    if (!v.parsed) {
      EXPECT_EQ(v.score, 3);
    }
  }
}

TEST(TaskJudge, RuleTable) {
  ToyGrammar g;
  GrammarBlindTaskJudge judge(g);
  auto score = [&](const std::string& user, const std::string& ai) {
    return judge_reward(judge, "{{input}}", sample_request(user, ai)).reward;
  };
  EXPECT_EQ(score("T0", "S0 V0a O1"), 10);                  // topic 0 object present
  EXPECT_EQ(score("T1", "S0 V0a O1"), 6);                   // topic absent
  EXPECT_EQ(score("T1", "S0 V0a O1 O1 O1 O1 O1 O1 O1 O1"), 3);  // absent, too long, repeats
  EXPECT_EQ(score("T0", "S0 V0a"), 4);                      // topic absent, too short
  EXPECT_EQ(score("T2", "S0 V0a C2"), 10);                  // calque carries the topic
}

TEST(TaskJudge, IgnoresAgreement) {
  ToyGrammar g;
  GrammarBlindTaskJudge judge(g);
  Rng rng(3);
  CorruptionConfig agreement_only{1.0, 0.0, 0.0};
  for (int i = 0; i < 500; ++i) {
    const int topic = i % 3;
    const auto s = g.sample_native(rng, topic);
    const auto c = corrupt(g, s, agreement_only, rng);
    const std::string user = "T" + std::to_string(topic);
    EXPECT_EQ(judge_reward(judge, "{{input}}", sample_request(user, g.text(s))).reward,
              judge_reward(judge, "{{input}}", sample_request(user, g.text(c.tokens))).reward);
  }
}

TEST(ConstantJudgeTest, TenOutOfTen) {
  ConstantJudge j("Score:\n10/10");
  EXPECT_EQ(judge_reward(j, "{{input}}", sample_request("T0", "x")).reward, 10.0);
}

namespace {

class FailingJudge : public JudgeBackend {
 public:
  std::string complete(const std::string&, const JudgeRequest&) override {
    throw JudgeTransportError("down");
  }
};

}  // namespace

TEST(JudgeReward, TransportErrorsRaiseUnlessFallbackRequested) {
  FailingJudge j;
  try {
    judge_reward(j, "{{input}}", sample_request("T0", "x"), {}, "prompt-17");
    FAIL();
  } catch (const JudgeTransportError& e) {
    EXPECT_EQ(e.prompt_id(), "prompt-17");
  }
  const auto out = judge_reward(j, "{{input}}", sample_request("T0", "x"), JudgeOptions{true});
  EXPECT_TRUE(out.transport_fallback);
  EXPECT_EQ(out.reward, 3.0);
}

TEST(JudgeBatch, OrderPreservedWithConcurrency) {
  ToyGrammar g;
  GrammarBlindTaskJudge judge(g);
  std::vector<JudgeRequest> reqs;
  for (int i = 0; i < 40; ++i) {
    reqs.push_back(sample_request("T" + std::to_string(i % 3), i % 2 ? "S0 V0a O0" : "S0 V0a O5"));
  }
  const auto serial = judge_batch(judge, "{{input}}", reqs, 1);
  const auto parallel = judge_batch(judge, "{{input}}", reqs, 4);
  for (std::size_t i = 0; i < reqs.size(); ++i) EXPECT_EQ(serial[i].reward, parallel[i].reward);
}

TEST(RemoteJudgeTest, ProtocolRetriesAndFallback) {
  httplib::Server server;
  std::atomic<int> calls{0};
  std::string seen_auth;
  nlohmann::json seen_body;
  server.Post("/complete", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++calls;
    seen_auth = req.get_header_value("Authorization");
    seen_body = nlohmann::json::parse(req.body);
    if (n == 1) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"text": "fine\n**Score:**\n7/10"})", "application/json");
  });
  server.Post("/garbled", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"text": "I cannot grade this"})", "application/json");
  });
  server.Post("/down", [&](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RemoteJudgeConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/complete";
  cfg.token = "secret";
  cfg.backoff_ms = 1;
  RemoteJudge judge(cfg);
  const auto out = judge_reward(judge, "{{input}}", sample_request("T0", "x"));
  EXPECT_EQ(out.reward, 7.0);
  EXPECT_EQ(calls.load(), 2);
  EXPECT_EQ(seen_auth, "Bearer secret");
  EXPECT_EQ(seen_body.at("temperature").get<double>(), 0.2);
  EXPECT_TRUE(seen_body.contains("model"));
  EXPECT_TRUE(seen_body.contains("max_tokens"));
  EXPECT_NE(seen_body.at("prompt").get<std::string>().find("ai_response"), std::string::npos);

  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/garbled";
  RemoteJudge garbled(cfg);
  EXPECT_EQ(judge_reward(garbled, "{{input}}", sample_request("T0", "x")).reward, 3.0);

  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/down";
  RemoteJudge down(cfg);
  EXPECT_THROW(judge_reward(down, "{{input}}", sample_request("T0", "x")), JudgeTransportError);

  server.stop();
  t.join();
}

TEST(RemoteJudgeTest, EndpointValidation) {
  EXPECT_THROW(parse_http_url("https://x/y"), ConfigError);
  EXPECT_THROW(parse_http_url("http:///y"), ConfigError);
  const auto u = parse_http_url("http://host:81/v1/complete");
  EXPECT_EQ(u.scheme_host_port, "http://host:81");
  EXPECT_EQ(u.path, "/v1/complete");
}
