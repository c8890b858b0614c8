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

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentrl/errors.hpp"
#include "fluentrl/vocabulary.hpp"

namespace fluentrl {

struct Message {
  std::string role;  // user | system | assistant
  std::string content;
  bool operator==(const Message&) const = default;
};

struct Conversation {
  std::vector<Message> messages;
  bool operator==(const Conversation&) const = default;
};

inline void to_json(nlohmann::json& j, const Message& m) {
  j = nlohmann::json{{"role", m.role}, {"content", m.content}};
}
inline void from_json(const nlohmann::json& j, Message& m) {
  j.at("role").get_to(m.role);
  j.at("content").get_to(m.content);
}
inline void to_json(nlohmann::json& j, const Conversation& c) {
  j = nlohmann::json{{"messages", c.messages}};
}
inline void from_json(const nlohmann::json& j, Conversation& c) {
  j.at("messages").get_to(c.messages);
}

inline void validate_conversation(const Conversation& conv, bool needs_assistant) {
  if (conv.messages.empty()) throw InputError("conversation: no messages");
  bool has_assistant = false;
  for (const auto& m : conv.messages) {
    if (m.role != "user" && m.role != "system" && m.role != "assistant") {
      throw InputError("conversation: unknown role '" + m.role + "'");
    }
    has_assistant |= m.role == "assistant";
  }
  if (needs_assistant && !has_assistant) {
    throw InputError("conversation: training example has no assistant message");
  }
}

// The minimal chat template:
//   bos
//   user      -> <instruction>CONTENT</instruction>
//   system    -> <system_prompt>CONTENT</system_prompt>
//   assistant -> CONTENT</s>
inline std::string render_chat_text(const Conversation& conv) {
  validate_conversation(conv, false);
  std::string out = "<s>";
  for (const auto& m : conv.messages) {
    if (m.role == "user") {
      out += "<instruction>" + m.content + "</instruction>";
    } else if (m.role == "system") {
      out += "<system_prompt>" + m.content + "</system_prompt>";
    } else {
      out += m.content + "</s>";
    }
  }
  return out;
}

struct RenderedChat {
  std::vector<TokenId> ids;
  // true on assistant content tokens and the eos closing each assistant turn
  std::vector<bool> loss_mask;
};

// Token-level rendering over a toy vocabulary: markers are atomic tokens and
// message content is whitespace-tokenized.
inline RenderedChat render_chat(const Conversation& conv, const Vocabulary& vocab) {
  validate_conversation(conv, false);
  RenderedChat r;
  auto push = [&](TokenId t, bool mask) {
    r.ids.push_back(t);
    r.loss_mask.push_back(mask);
  };
  push(Vocabulary::kBos, false);
  for (const auto& m : conv.messages) {
    const auto content = vocab.tokenize(m.content);
    if (m.role == "user") {
      push(Vocabulary::kInstructionOpen, false);
      for (TokenId t : content) push(t, false);
      push(Vocabulary::kInstructionClose, false);
    } else if (m.role == "system") {
      push(Vocabulary::kSystemOpen, false);
      for (TokenId t : content) push(t, false);
      push(Vocabulary::kSystemClose, false);
    } else {
      for (TokenId t : content) push(t, true);
      push(Vocabulary::kEos, true);
    }
  }
  return r;
}

// Prompt for generation: every message rendered, nothing appended.
inline TokenSequence render_prompt(const Conversation& conv, const Vocabulary& vocab) {
  RenderedChat r = render_chat(conv, vocab);
  TokenSequence seq;
  seq.prompt_length = r.ids.size();
  seq.ids = std::move(r.ids);
  return seq;
}

}  // namespace fluentrl
