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

#include "fluentrl/cli.hpp"
#include "fluentrl/config.hpp"

using namespace fluentrl;
using config::Json;

TEST(Toml, ScalarsTablesAndComments) {
  const auto j = config::parse_toml(R"(# top
seed = 7
name = "run \"a\""   # trailing
path = 'C:\raw'
[pipeline]
delay = 3
learning_rate = 1e-6
overlap_stages = true
big = 1_000
[pipeline.kl]
beta = 0.1
[sampler]
stops = ["a", "b",
  "c"]
)");
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["name"], "run \"a\"");
  EXPECT_EQ(j["path"], "C:\\raw");
  EXPECT_EQ(j["pipeline"]["delay"], 3);
  EXPECT_EQ(j["pipeline"]["learning_rate"].get<double>(), 1e-6);
  EXPECT_EQ(j["pipeline"]["overlap_stages"], true);
  EXPECT_EQ(j["pipeline"]["big"], 1000);
  EXPECT_EQ(j["pipeline"]["kl"]["beta"].get<double>(), 0.1);
  EXPECT_EQ(j["sampler"]["stops"].size(), 3u);
}

TEST(Toml, DottedKeysAndNegativeNumbers) {
  const auto j = config::parse_toml("a.b.c = -2\nx = +1.5\ny = -3e2\n");
  EXPECT_EQ(j["a"]["b"]["c"], -2);
  EXPECT_EQ(j["x"].get<double>(), 1.5);
  EXPECT_EQ(j["y"].get<double>(), -300.0);
}

TEST(Toml, ErrorsNameTheLine) {
  auto msg = [](const char* text) {
    try {
      config::parse_toml(text, "cfg.toml");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(msg("a = 1\nb = \n").find("cfg.toml:2"), std::string::npos);
  EXPECT_NE(msg("a = 1\na = 2\n").find("duplicate key"), std::string::npos);
  EXPECT_NE(msg("[t]\nx=1\n[t]\n").find("defined twice"), std::string::npos);
  EXPECT_NE(msg("a = \"open\n").find("unterminated"), std::string::npos);
  EXPECT_NE(msg("a = 1 2\n").find("cfg.toml:1"), std::string::npos);
  EXPECT_NE(msg("[[arr]]\n").find("not supported"), std::string::npos);
  EXPECT_NE(msg("a = [[1]]\n").find("nested"), std::string::npos);
  EXPECT_NE(msg("a = 1\na.b = 2\n").find("not a table"), std::string::npos);
  EXPECT_NE(msg("a = 0x1g\n").find("invalid value"), std::string::npos);
  EXPECT_THROW(config::load_toml("/nonexistent/cfg.toml"), ConfigError);
}

TEST(Toml, EmitterRoundTrips) {
  const auto j = config::parse_toml(
      "seed = 3\nname = \"q\\\"x\\n\"\nflag = false\nf = 0.1\nwhole = 2.0\n[a]\nlist = [1, 2]\n[a.b]\nz = \"s\"\n");
  const auto back = config::parse_toml(config::to_toml(j));
  EXPECT_EQ(back, j);
  EXPECT_TRUE(back["whole"].is_number_float());
}

TEST(Toml, Overrides) {
  auto j = config::parse_toml("[pipeline]\ndelay = 3\n");
  config::apply_override(j, "pipeline.delay=1");
  config::apply_override(j, "pipeline.kl.beta=0.5");
  config::apply_override(j, "name=\"x y\"");
  EXPECT_EQ(j["pipeline"]["delay"], 1);
  EXPECT_EQ(j["pipeline"]["kl"]["beta"].get<double>(), 0.5);
  EXPECT_EQ(j["name"], "x y");
  EXPECT_THROW(config::apply_override(j, "novalue"), ConfigError);
  EXPECT_THROW(config::apply_override(j, "pipeline.delay.x=1"), ConfigError);
  EXPECT_THROW(config::apply_override(j, "a..b=1"), ConfigError);
  EXPECT_THROW(config::apply_override(j, "a=1 junk"), ConfigError);
}

TEST(Reader, TypedAccessAndUnknownKeys) {
  config::Reader r(config::parse_toml("n = 4\nx = 2\nneg = -1\ns = \"t\"\nb = true\nextra = 1\n"));
  std::size_t n = 0;
  double x = 0;
  std::string s;
  bool b = false;
  r.get("n", n);
  r.get("x", x);
  r.get("s", s);
  r.get("b", b);
  EXPECT_EQ(n, 4u);
  EXPECT_EQ(x, 2.0);
  EXPECT_EQ(s, "t");
  EXPECT_TRUE(b);
  std::size_t u = 0;
  EXPECT_THROW(r.get("neg", u), ConfigError);
  EXPECT_THROW(r.get("s", n), ConfigError);
  EXPECT_THROW(r.get("x", b), ConfigError);
  try {
    r.check_unknown();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("extra"), std::string::npos);
  }
}

TEST(Reader, DefaultsAppearInResolvedTree) {
  config::Reader r(Json::object());
  double lr = 0.25;
  r.get_or_record("train.lr", lr);
  EXPECT_EQ(lr, 0.25);
  EXPECT_EQ(r.resolved_tree()["train"]["lr"].get<double>(), 0.25);
  EXPECT_NO_THROW(r.check_unknown());
}

TEST(Binding, PipelineSection) {
  config::Reader r(config::parse_toml(R"([pipeline]
delay = 2
prompts_per_step = 4
overlap_stages = true
sampler_workers = 3
[pipeline.kl]
beta = 0.2
estimator = "monte_carlo"
[pipeline.sampler]
temperature = 0.7
)"));
  PipelineConfig c;
  cli::bind_section(r, "pipeline", c);
  EXPECT_EQ(c.delay, 2u);
  EXPECT_EQ(c.prompts_per_step, 4u);
  EXPECT_TRUE(c.overlap_stages);
  EXPECT_EQ(c.sampler_workers, 3u);
  EXPECT_EQ(c.kl.beta, 0.2);
  EXPECT_EQ(c.kl.estimator, KlEstimator::kMonteCarlo);
  EXPECT_EQ(c.sampler.temperature, 0.7);
  EXPECT_NO_THROW(r.check_unknown());
  EXPECT_EQ(r.resolved_tree()["pipeline"]["group_size"], 4);
}

TEST(Binding, InvalidValuesRejected) {
  config::Reader r(config::parse_toml("[pipeline]\ndelay = 0\n"));
  PipelineConfig c;
  EXPECT_THROW(cli::bind_section(r, "pipeline", c), ConfigError);
  config::Reader bad_est(config::parse_toml("[pipeline.kl]\nestimator = \"guess\"\n"));
  EXPECT_THROW(cli::bind_section(bad_est, "pipeline", c), ConfigError);
}
