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

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fluentrl/errors.hpp"

namespace fluentrl {

using TokenId = std::int32_t;

// Token ids plus the prompt/response split. Responses are always the
// contiguous tail, so the role mask is fully described by prompt_length.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::size_t prompt_length = 0;

  std::size_t size() const { return ids.size(); }
  std::size_t response_length() const { return ids.size() - prompt_length; }
  std::span<const TokenId> prompt() const { return {ids.data(), prompt_length}; }
  std::span<const TokenId> response() const {
    return {ids.data() + prompt_length, ids.size() - prompt_length};
  }
  // true on response positions
  std::vector<bool> role_mask() const {
    std::vector<bool> mask(ids.size(), false);
    for (std::size_t i = prompt_length; i < ids.size(); ++i) mask[i] = true;
    return mask;
  }
  bool operator==(const TokenSequence&) const = default;
};

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kInstructionOpen = 3;
  static constexpr TokenId kInstructionClose = 4;
  static constexpr TokenId kSystemOpen = 5;
  static constexpr TokenId kSystemClose = 6;
  static constexpr std::size_t kReservedCount = 7;

  static const std::vector<std::string>& reserved_labels() {
    static const std::vector<std::string> labels = {
        "<pad>", "<s>", "</s>", "<instruction>", "</instruction>", "<system_prompt>",
        "</system_prompt>"};
    return labels;
  }

  // Reserved labels first, then `words`, then "<unused_N>" fillers up to
  // `size` (0 = no padding).
  explicit Vocabulary(const std::vector<std::string>& words, std::size_t size = 0) {
    labels_ = reserved_labels();
    labels_.insert(labels_.end(), words.begin(), words.end());
    if (size != 0) {
      if (size < labels_.size()) {
        throw ConfigError("vocabulary: " + std::to_string(labels_.size()) +
                          " labels do not fit in size " + std::to_string(size));
      }
      for (std::size_t i = labels_.size(); i < size; ++i) {
        labels_.push_back("<unused_" + std::to_string(i) + ">");
      }
    }
    if (labels_.size() < 8) throw ConfigError("vocabulary: size must be >= 8");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i].empty() || labels_[i].find_first_of(" \t\n") != std::string::npos) {
        throw ConfigError("vocabulary: label '" + labels_[i] + "' is empty or has whitespace");
      }
      if (!index_.emplace(labels_[i], static_cast<TokenId>(i)).second) {
        throw ConfigError("vocabulary: duplicate label '" + labels_[i] + "'");
      }
    }
  }

  std::size_t size() const { return labels_.size(); }

  bool contains(std::string_view label) const {
    return index_.find(std::string(label)) != index_.end();
  }

  TokenId id(std::string_view label) const {
    auto it = index_.find(std::string(label));
    if (it == index_.end()) throw InputError("unknown token '" + std::string(label) + "'");
    return it->second;
  }

  const std::string& label(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= labels_.size()) {
      throw InputError("token id " + std::to_string(id) + " out of range");
    }
    return labels_[static_cast<std::size_t>(id)];
  }

  // Whitespace-separated labels.
  std::vector<TokenId> tokenize(std::string_view text) const {
    std::vector<TokenId> out;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && is_space(text[i])) ++i;
      std::size_t j = i;
      while (j < text.size() && !is_space(text[j])) ++j;
      if (j > i) out.push_back(id(text.substr(i, j - i)));
      i = j;
    }
    return out;
  }

  std::string detokenize(std::span<const TokenId> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += label(ids[i]);
    }
    return out;
  }

  const std::vector<std::string>& labels() const { return labels_; }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

  std::vector<std::string> labels_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace fluentrl
