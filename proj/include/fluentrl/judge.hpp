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
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentrl/chat.hpp"
#include "fluentrl/errors.hpp"
#include "fluentrl/grammar.hpp"
#include "fluentrl/parallel.hpp"

namespace fluentrl {

struct JudgeRequest {
  std::vector<Message> conversation_history;
  std::string gold_response;
  std::string ai_response;

  bool ai_response_empty() const { return ai_response.empty(); }
};

inline nlohmann::ordered_json request_json(const JudgeRequest& req) {
  nlohmann::ordered_json history = nlohmann::ordered_json::array();
  for (const auto& m : req.conversation_history) {
    history.push_back(nlohmann::ordered_json{{"role", m.role}, {"content", m.content}});
  }
  return nlohmann::ordered_json{{"conversation_history", history},
                                {"gold_response", req.gold_response},
                                {"ai_response", req.ai_response}};
}

inline JudgeRequest request_from_json(const nlohmann::json& j) {
  JudgeRequest r;
  for (const auto& m : j.at("conversation_history")) {
    r.conversation_history.push_back(
        {m.at("role").get<std::string>(), m.at("content").get<std::string>()});
  }
  r.gold_response = j.at("gold_response").get<std::string>();
  r.ai_response = j.at("ai_response").get<std::string>();
  return r;
}

inline void validate_request(const JudgeRequest& req) {
  if (req.conversation_history.empty() || req.conversation_history.back().role != "user") {
    throw InputError("judge request: history must end with a user message");
  }
}

inline constexpr std::string_view kInputPlaceholder = "{{input}}";

// Replaces every {{input}} with the request serialized as JSON.
inline std::string render_judge_prompt(std::string_view tmpl, const JudgeRequest& req) {
  if (tmpl.find(kInputPlaceholder) == std::string_view::npos) {
    throw TemplateError("judge template has no {{input}} placeholder");
  }
  const std::string payload = request_json(req).dump(2, ' ', false);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = tmpl.find(kInputPlaceholder, pos);
    if (hit == std::string_view::npos) break;
    out.append(tmpl.substr(pos, hit - pos));
    out += payload;
    pos = hit + kInputPlaceholder.size();
  }
  out.append(tmpl.substr(pos));
  return out;
}

inline std::string load_judge_template(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TemplateError("cannot read judge template " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  if (text.find(kInputPlaceholder) == std::string::npos) {
    throw TemplateError("judge template " + path.string() + " has no {{input}} placeholder");
  }
  return text;
}

inline constexpr int kFallbackScore = 3;

struct JudgeVerdict {
  std::string raw_text;
  int score = kFallbackScore;
  bool parsed = false;
};

// Finds the last "N/10" with N an integer in [1, 10]; anything else falls
// back to 3/10.
inline JudgeVerdict parse_score(std::string_view raw) {
  JudgeVerdict v;
  v.raw_text = std::string(raw);
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  std::size_t pos = raw.size();
  while (pos > 0) {
    const std::size_t slash = raw.rfind("/10", pos - 1);
    if (slash == std::string_view::npos) break;
    pos = slash;
    const std::size_t after = slash + 3;
    if (after < raw.size() && is_digit(raw[after])) continue;
    std::size_t begin = slash;
    while (begin > 0 && is_digit(raw[begin - 1])) --begin;
    const std::size_t len = slash - begin;
    if (len == 0 || len > 2) continue;
    const int value = std::stoi(std::string(raw.substr(begin, len)));
    if (value >= 1 && value <= 10) {
      v.score = value;
      v.parsed = true;
      return v;
    }
  }
  return v;
}

// Raised by remote judges once their retries are exhausted.
class JudgeTransportError : public std::runtime_error {
 public:
  JudgeTransportError(const std::string& what, std::string prompt_id = {})
      : std::runtime_error(what), prompt_id_(std::move(prompt_id)) {}
  const std::string& prompt_id() const { return prompt_id_; }

 private:
  std::string prompt_id_;
};

// Produces judgment text for a rendered prompt. Mock judges also see the
// structured request; remote judges only use the prompt.
class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual std::string complete(const std::string& prompt, const JudgeRequest& req) = 0;
};

class ConstantJudge : public JudgeBackend {
 public:
  explicit ConstantJudge(std::string text) : text_(std::move(text)) {}
  std::string complete(const std::string&, const JudgeRequest&) override { return text_; }

 private:
  std::string text_;
};

struct TaskSpec {
  std::optional<int> topic;  // required topic; nullopt = no topic requirement
  std::size_t min_length = ToyGrammar::kMinLength;
  std::size_t max_length = ToyGrammar::kMaxLength;
};

// Rewards on-topic answers of the right length without repeated trigrams and
// ignores grammar entirely:
//   score = 10 - 4*[topic absent] - 2*[length outside band] - 1*[repeated trigram]
// floored at 1.
class GrammarBlindTaskJudge : public JudgeBackend {
 public:
  GrammarBlindTaskJudge(const ToyGrammar& grammar, std::size_t min_length = ToyGrammar::kMinLength,
                        std::size_t max_length = ToyGrammar::kMaxLength)
      : grammar_(grammar), min_length_(min_length), max_length_(max_length) {}

  // Topic comes from the T<k> tag in the last user message.
  TaskSpec task_for(const JudgeRequest& req) const {
    TaskSpec spec{std::nullopt, min_length_, max_length_};
    if (req.conversation_history.empty()) return spec;
    for (const auto& word : split(req.conversation_history.back().content)) {
      if (!grammar_.vocab().contains(word)) continue;
      const TokenId t = grammar_.vocab().id(word);
      if (grammar_.family(t) == ToyGrammar::Family::kTopicTag) {
        spec.topic = t - grammar_.topic_tag(0);
      }
    }
    return spec;
  }

  int score(const JudgeRequest& req, const TaskSpec& spec) const {
    const auto words = split(req.ai_response);
    bool topic_present = !spec.topic.has_value();
    if (spec.topic) {
      for (const auto& w : words) {
        if (!grammar_.vocab().contains(w)) continue;
        const auto topic = grammar_.topic_of(grammar_.vocab().id(w));
        if (topic && *topic == *spec.topic) topic_present = true;
      }
    }
    const bool out_of_band = words.size() < spec.min_length || words.size() > spec.max_length;
    const int s = 10 - 4 * (topic_present ? 0 : 1) - 2 * (out_of_band ? 1 : 0) -
                  (has_repeated_trigram(words) ? 1 : 0);
    return std::max(1, s);
  }

  std::string complete(const std::string&, const JudgeRequest& req) override {
    const TaskSpec spec = task_for(req);
    const int s = score(req, spec);
    std::ostringstream out;
    out << "Checked topic, length and repetition of the response.\n\n**Score:**\n" << s << "/10";
    return out.str();
  }

  static bool has_repeated_trigram(const std::vector<std::string>& words) {
    std::set<std::vector<std::string>> seen;
    for (std::size_t i = 0; i + 3 <= words.size(); ++i) {
      std::vector<std::string> tri(words.begin() + static_cast<std::ptrdiff_t>(i),
                                   words.begin() + static_cast<std::ptrdiff_t>(i + 3));
      if (!seen.insert(tri).second) return true;
    }
    return false;
  }

 private:
  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
  }

  const ToyGrammar& grammar_;
  std::size_t min_length_;
  std::size_t max_length_;
};

struct JudgeOptions {
  // Score transport failures as 3/10 instead of raising.
  bool fallback_on_transport_error = false;
};

struct JudgeOutcome {
  double reward = kFallbackScore;
  JudgeVerdict verdict;
  bool transport_fallback = false;
};

inline JudgeOutcome judge_reward(JudgeBackend& judge, std::string_view tmpl,
                                 const JudgeRequest& req, const JudgeOptions& opts = {},
                                 const std::string& prompt_id = {}) {
  validate_request(req);
  const std::string prompt = render_judge_prompt(tmpl, req);
  JudgeOutcome out;
  try {
    out.verdict = parse_score(judge.complete(prompt, req));
  } catch (const JudgeTransportError& e) {
    if (!opts.fallback_on_transport_error) {
      throw JudgeTransportError(e.what(), prompt_id.empty() ? e.prompt_id() : prompt_id);
    }
    out.verdict = JudgeVerdict{};
    out.transport_fallback = true;
  }
  out.reward = static_cast<double>(out.verdict.score);
  return out;
}

// Judges every request with at most `max_in_flight` concurrent calls; results
// come back in request order.
inline std::vector<JudgeOutcome> judge_batch(JudgeBackend& judge, std::string_view tmpl,
                                             std::span<const JudgeRequest> requests,
                                             std::size_t max_in_flight = 1,
                                             const JudgeOptions& opts = {},
                                             std::span<const std::string> prompt_ids = {}) {
  std::vector<JudgeOutcome> out(requests.size());
  parallel_for(requests.size(), max_in_flight, [&](std::size_t i) {
    out[i] = judge_reward(judge, tmpl, requests[i], opts,
                          i < prompt_ids.size() ? prompt_ids[i] : std::string{});
  });
  return out;
}

}  // namespace fluentrl
