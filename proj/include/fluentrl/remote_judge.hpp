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
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "fluentrl/errors.hpp"
#include "fluentrl/judge.hpp"

namespace fluentrl {

struct RemoteJudgeConfig {
  std::string endpoint;  // http://host[:port]/path
  std::string token;
  std::string model = "judge";
  double temperature = 0.2;
  int max_tokens = 1024;
  int retries = 2;
  int backoff_ms = 250;  // doubles after every failed attempt
  int timeout_s = 120;

  // RLAIF_JUDGE_ENDPOINT / RLAIF_JUDGE_TOKEN override the file values.
  void apply_env() {
    if (const char* e = std::getenv("RLAIF_JUDGE_ENDPOINT"); e && *e) endpoint = e;
    if (const char* t = std::getenv("RLAIF_JUDGE_TOKEN"); t && *t) token = t;
  }
};

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl parse_http_url(const std::string& url) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) {
    throw ConfigError("judge.endpoint: only http:// endpoints are supported, got '" + url + "'");
  }
  const std::size_t slash = url.find('/', scheme.size());
  ParsedUrl p;
  p.scheme_host_port = slash == std::string::npos ? url : url.substr(0, slash);
  p.path = slash == std::string::npos ? "/" : url.substr(slash);
  if (p.scheme_host_port.size() == scheme.size()) throw ConfigError("judge.endpoint: missing host");
  return p;
}

// Generic text-completion client:
//   POST {model, prompt, temperature, max_tokens} -> {text}
class RemoteJudge : public JudgeBackend {
 public:
  explicit RemoteJudge(RemoteJudgeConfig cfg) : cfg_(std::move(cfg)), url_(parse_http_url(cfg_.endpoint)) {}

  std::string complete(const std::string& prompt, const JudgeRequest&) override {
    const nlohmann::json body = {{"model", cfg_.model},
                                 {"prompt", prompt},
                                 {"temperature", cfg_.temperature},
                                 {"max_tokens", cfg_.max_tokens}};
    const std::string payload = body.dump();
    httplib::Headers headers;
    if (!cfg_.token.empty()) headers.emplace("Authorization", "Bearer " + cfg_.token);
    std::string last_error;
    int delay = cfg_.backoff_ms;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        delay *= 2;
      }
      httplib::Client client(url_.scheme_host_port);
      client.set_connection_timeout(cfg_.timeout_s, 0);
      client.set_read_timeout(cfg_.timeout_s, 0);
      auto res = client.Post(url_.path, headers, payload, "application/json");
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      auto parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (parsed.is_discarded() || !parsed.is_object()) {
        last_error = "response body is not a JSON object";
        continue;
      }
      auto it = parsed.find("text");
      // A well-formed reply without usable text is scored by the fallback.
      if (it == parsed.end() || !it->is_string()) return std::string{};
      return it->get<std::string>();
    }
    throw JudgeTransportError("remote judge failed after " + std::to_string(cfg_.retries + 1) +
                              " attempts: " + last_error);
  }

 private:
  RemoteJudgeConfig cfg_;
  ParsedUrl url_;
};

}  // namespace fluentrl
