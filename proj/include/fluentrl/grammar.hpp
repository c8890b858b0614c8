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

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fluentrl/errors.hpp"
#include "fluentrl/rng.hpp"
#include "fluentrl/vocabulary.hpp"

namespace fluentrl {

// A small two-register language.
//
// Native register: SUBJECT VERB OBJECT{1..5}
//   - 8 subjects S0..S7 in 4 agreement classes (class = index / 2)
//   - 6 verb stems, each with one form per class: V<stem><a|b|c|d>
//   - 12 objects O0..O11 in 3 topics (topic = index / 4); all objects of a
//     sentence share one topic
// Foreign register: FS<0|1> FV<0|1> FO<0|1>{1..2}
//
// Prompt tags: T0..T2 ask for a native answer about a topic, FQ asks for a
// foreign answer. Calques C0..C2 are foreign-influenced stand-ins for objects
// of each topic; they never appear in grammatical native text.
class ToyGrammar {
 public:
  static constexpr int kSubjects = 8;
  static constexpr int kClasses = 4;
  static constexpr int kVerbStems = 6;
  static constexpr int kObjects = 12;
  static constexpr int kTopics = 3;
  static constexpr int kObjectsPerTopic = kObjects / kTopics;
  static constexpr int kMinLength = 3;
  static constexpr int kMaxLength = 7;
  static constexpr int kForeignSubjects = 2;
  static constexpr int kForeignVerbs = 2;
  static constexpr int kForeignObjects = 2;

  enum class Family { kOther, kSubject, kVerb, kObject, kTopicTag, kCalque, kForeign, kForeignTag };

  ToyGrammar() : vocab_(make_words(), 64) {
    subject_base_ = vocab_.id("S0");
    verb_base_ = vocab_.id("V0a");
    object_base_ = vocab_.id("O0");
    tag_base_ = vocab_.id("T0");
    calque_base_ = vocab_.id("C0");
    fs_base_ = vocab_.id("FS0");
    fv_base_ = vocab_.id("FV0");
    fo_base_ = vocab_.id("FO0");
    foreign_tag_ = vocab_.id("FQ");
  }

  const Vocabulary& vocab() const { return vocab_; }

  TokenId subject(int i) const { return subject_base_ + i; }
  TokenId verb(int stem, int form) const { return verb_base_ + stem * kClasses + form; }
  TokenId object(int i) const { return object_base_ + i; }
  TokenId topic_tag(int topic) const { return tag_base_ + topic; }
  TokenId calque(int topic) const { return calque_base_ + topic; }
  TokenId foreign_tag() const { return foreign_tag_; }

  Family family(TokenId t) const {
    if (in(t, subject_base_, kSubjects)) return Family::kSubject;
    if (in(t, verb_base_, kVerbStems * kClasses)) return Family::kVerb;
    if (in(t, object_base_, kObjects)) return Family::kObject;
    if (in(t, tag_base_, kTopics)) return Family::kTopicTag;
    if (in(t, calque_base_, kTopics)) return Family::kCalque;
    if (in(t, fs_base_, kForeignSubjects) || in(t, fv_base_, kForeignVerbs) ||
        in(t, fo_base_, kForeignObjects)) {
      return Family::kForeign;
    }
    if (t == foreign_tag_) return Family::kForeignTag;
    return Family::kOther;
  }

  int subject_class(TokenId s) const { return (s - subject_base_) / 2; }
  int verb_stem(TokenId v) const { return (v - verb_base_) / kClasses; }
  int verb_form(TokenId v) const { return (v - verb_base_) % kClasses; }
  int object_topic(TokenId o) const { return (o - object_base_) / kObjectsPerTopic; }
  int calque_topic(TokenId c) const { return c - calque_base_; }

  // Topic of a token that can carry one (objects and calques).
  std::optional<int> topic_of(TokenId t) const {
    if (family(t) == Family::kObject) return object_topic(t);
    if (family(t) == Family::kCalque) return calque_topic(t);
    return std::nullopt;
  }

  // All production and agreement rules of the native register.
  bool is_native_sentence(std::span<const TokenId> s) const {
    if (s.size() < kMinLength || s.size() > kMaxLength) return false;
    if (family(s[0]) != Family::kSubject) return false;
    if (family(s[1]) != Family::kVerb) return false;
    if (verb_form(s[1]) != subject_class(s[0])) return false;
    if (family(s[2]) != Family::kObject) return false;
    const int topic = object_topic(s[2]);
    for (std::size_t i = 3; i < s.size(); ++i) {
      if (family(s[i]) != Family::kObject || object_topic(s[i]) != topic) return false;
    }
    return true;
  }

  bool is_foreign_sentence(std::span<const TokenId> s) const {
    if (s.size() < 3 || s.size() > 4) return false;
    if (!in(s[0], fs_base_, kForeignSubjects) || !in(s[1], fv_base_, kForeignVerbs)) return false;
    for (std::size_t i = 2; i < s.size(); ++i) {
      if (!in(s[i], fo_base_, kForeignObjects)) return false;
    }
    return true;
  }

  // Uniform subject, stem, length and objects; topic drawn uniformly unless given.
  std::vector<TokenId> sample_native(Rng& rng, std::optional<int> topic = std::nullopt) const {
    const int subj = static_cast<int>(uniform_index(rng, kSubjects));
    const int stem = static_cast<int>(uniform_index(rng, kVerbStems));
    const int n_obj = 1 + static_cast<int>(uniform_index(rng, kMaxLength - 2));
    const int t = topic ? *topic : static_cast<int>(uniform_index(rng, kTopics));
    if (t < 0 || t >= kTopics) throw InputError("topic out of range");
    std::vector<TokenId> s = {subject(subj), verb(stem, subj / 2)};
    for (int i = 0; i < n_obj; ++i) {
      s.push_back(object(t * kObjectsPerTopic + static_cast<int>(uniform_index(rng, kObjectsPerTopic))));
    }
    return s;
  }

  std::vector<TokenId> sample_foreign(Rng& rng) const {
    std::vector<TokenId> s = {fs_base_ + static_cast<TokenId>(uniform_index(rng, kForeignSubjects)),
                              fv_base_ + static_cast<TokenId>(uniform_index(rng, kForeignVerbs))};
    const int n_obj = 1 + static_cast<int>(uniform_index(rng, 2));
    for (int i = 0; i < n_obj; ++i) {
      s.push_back(fo_base_ + static_cast<TokenId>(uniform_index(rng, kForeignObjects)));
    }
    return s;
  }

  std::string text(std::span<const TokenId> s) const { return vocab_.detokenize(s); }

 private:
  static bool in(TokenId t, TokenId base, int n) { return t >= base && t < base + n; }

  static std::vector<std::string> make_words() {
    std::vector<std::string> w;
    for (int i = 0; i < kSubjects; ++i) w.push_back("S" + std::to_string(i));
    for (int s = 0; s < kVerbStems; ++s) {
      for (int f = 0; f < kClasses; ++f) {
        w.push_back("V" + std::to_string(s) + static_cast<char>('a' + f));
      }
    }
    for (int i = 0; i < kObjects; ++i) w.push_back("O" + std::to_string(i));
    for (int i = 0; i < kTopics; ++i) w.push_back("T" + std::to_string(i));
    for (int i = 0; i < kTopics; ++i) w.push_back("C" + std::to_string(i));
    for (int i = 0; i < kForeignSubjects; ++i) w.push_back("FS" + std::to_string(i));
    for (int i = 0; i < kForeignVerbs; ++i) w.push_back("FV" + std::to_string(i));
    for (int i = 0; i < kForeignObjects; ++i) w.push_back("FO" + std::to_string(i));
    w.push_back("FQ");
    return w;
  }

  Vocabulary vocab_;
  TokenId subject_base_, verb_base_, object_base_, tag_base_, calque_base_;
  TokenId fs_base_, fv_base_, fo_base_, foreign_tag_;
};

// Channel probabilities of the corruption operator. Channels fire
// independently; draws repeat until at least one fires.
struct CorruptionConfig {
  double agreement = 0.5;
  double transposition = 0.3;
  double calque = 0.4;

  void validate() const {
    for (double p : {agreement, transposition, calque}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("corruption: probabilities must be in [0,1]");
    }
    if (agreement == 0.0 && transposition == 0.0 && calque == 0.0) {
      throw ConfigError("corruption: at least one channel needs a non-zero probability");
    }
  }
};

struct Corruption {
  std::vector<TokenId> tokens;
  bool agreement = false;
  bool transposition = false;
  bool calque = false;
};

// Turns a grammatical native sentence into an ungrammatical one:
//   agreement     - the verb takes a form of a different class
//   calque        - one object is replaced by its topic's calque
//   transposition - subject/verb or verb/first-object swap places
inline Corruption corrupt(const ToyGrammar& g, std::span<const TokenId> sentence,
                          const CorruptionConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!g.is_native_sentence(sentence)) throw InputError("corrupt: input is not a native sentence");
  Corruption c;
  do {
    c.agreement = uniform01(rng) < cfg.agreement;
    c.transposition = uniform01(rng) < cfg.transposition;
    c.calque = uniform01(rng) < cfg.calque;
  } while (!c.agreement && !c.transposition && !c.calque);
  c.tokens.assign(sentence.begin(), sentence.end());
  if (c.calque) {
    const std::size_t pos = 2 + uniform_index(rng, c.tokens.size() - 2);
    c.tokens[pos] = g.calque(g.object_topic(c.tokens[pos]));
  }
  if (c.agreement) {
    const TokenId v = c.tokens[1];
    const int form = g.verb_form(v);
    const int other = (form + 1 + static_cast<int>(uniform_index(rng, ToyGrammar::kClasses - 1))) %
                      ToyGrammar::kClasses;
    c.tokens[1] = g.verb(g.verb_stem(v), other);
  }
  if (c.transposition) {
    const std::size_t pos = uniform_index(rng, 2);
    std::swap(c.tokens[pos], c.tokens[pos + 1]);
  }
  return c;
}

// Strips a trailing eos; responses that never emitted eos do not count.
inline bool response_is_native(const ToyGrammar& g, std::span<const TokenId> response) {
  if (response.empty() || response.back() != Vocabulary::kEos) return false;
  return g.is_native_sentence(response.first(response.size() - 1));
}

// Fraction of responses (full prompt+response sequences) that end in eos and
// obey every native-register rule.
inline double grammar_adherence(const ToyGrammar& g, std::span<const TokenSequence> responses) {
  if (responses.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& r : responses) ok += response_is_native(g, r.response()) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(responses.size());
}

// Same metric over bare sentences (no eos).
inline double sentence_adherence(const ToyGrammar& g,
                                 std::span<const std::vector<TokenId>> sentences) {
  if (sentences.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& s : sentences) ok += g.is_native_sentence(s) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(sentences.size());
}

}  // namespace fluentrl
