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

// Reader and writer for the subset of TOML used by run configs: tables,
// dotted keys, strings, integers, floats, booleans and arrays of scalars.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentrl/errors.hpp"

namespace fluentrl::config {

using Json = nlohmann::ordered_json;

class TomlParser {
 public:
  TomlParser(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

  Json parse() {
    Json root = Json::object();
    Json* table = &root;
    while (true) {
      skip_ws_and_comments(true);
      if (at_end()) break;
      if (peek() == '[') {
        ++pos_;
        if (peek() == '[') fail("arrays of tables are not supported");
        skip_inline_ws();
        const auto path = parse_key_path();
        skip_inline_ws();
        expect(']');
        table = &root;
        for (const auto& part : path) {
          Json& next = (*table)[part];
          if (next.is_null()) next = Json::object();
          if (!next.is_object()) fail("key '" + part + "' is not a table");
          table = &next;
        }
        const std::string joined = join(path);
        if (!defined_tables_.insert(joined).second) fail("table [" + joined + "] defined twice");
      } else {
        const auto path = parse_key_path();
        skip_inline_ws();
        expect('=');
        skip_inline_ws();
        Json value = parse_value();
        Json* target = table;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
          Json& next = (*target)[path[i]];
          if (next.is_null()) next = Json::object();
          if (!next.is_object()) fail("key '" + path[i] + "' is not a table");
          target = &next;
        }
        if (target->contains(path.back())) fail("duplicate key '" + join(path) + "'");
        (*target)[path.back()] = std::move(value);
      }
      skip_inline_ws();
      if (!at_end() && peek() == '#') skip_comment();
      if (!at_end() && peek() != '\n' && peek() != '\r') fail("expected end of line");
    }
    return root;
  }

  // A single value, as used by command-line overrides.
  Json parse_single_value() {
    skip_inline_ws();
    Json v = parse_value();
    skip_inline_ws();
    if (!at_end()) fail("trailing characters after value");
    return v;
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return at_end() ? '\0' : text_[pos_]; }

  [[noreturn]] void fail(const std::string& msg) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < text_.size(); ++i) line += text_[i] == '\n';
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + msg);
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_inline_ws() {
    while (!at_end() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    while (!at_end() && peek() != '\n') ++pos_;
  }

  void skip_ws_and_comments(bool newlines) {
    while (!at_end()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || (newlines && (c == '\n' || c == '\r'))) {
        ++pos_;
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }

  static std::string join(const std::vector<std::string>& path) {
    std::string s;
    for (const auto& p : path) s += (s.empty() ? "" : ".") + p;
    return s;
  }

  std::string parse_key() {
    if (peek() == '"') return parse_basic_string();
    const std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++pos_;
    if (pos_ == start) fail("expected a key");
    return std::string(text_.substr(start, pos_ - start));
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> path{parse_key()};
    while (true) {
      skip_inline_ws();
      if (peek() != '.') break;
      ++pos_;
      skip_inline_ws();
      path.push_back(parse_key());
    }
    return path;
  }

  std::string parse_basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (at_end() || peek() == '\n') fail("unterminated string");
      const char c = text_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (at_end()) fail("unterminated escape");
      const char e = text_[pos_++];
      switch (e) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default: fail(std::string("unsupported escape \\") + e);
      }
    }
    return out;
  }

  std::string parse_literal_string() {
    expect('\'');
    const std::size_t start = pos_;
    while (!at_end() && peek() != '\'' && peek() != '\n') ++pos_;
    if (peek() != '\'') fail("unterminated literal string");
    std::string out(text_.substr(start, pos_ - start));
    ++pos_;
    return out;
  }

  Json parse_value() {
    const char c = peek();
    if (c == '"') return parse_basic_string();
    if (c == '\'') return parse_literal_string();
    if (c == '[') return parse_array();
    if (text_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return true;
    }
    if (text_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return false;
    }
    return parse_number();
  }

  Json parse_array() {
    expect('[');
    Json arr = Json::array();
    while (true) {
      skip_ws_and_comments(true);
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      Json v = parse_value();
      if (v.is_array()) fail("nested arrays are not supported");
      arr.push_back(std::move(v));
      skip_ws_and_comments(true);
      if (peek() == ',') {
        ++pos_;
      } else if (peek() != ']') {
        fail("expected ',' or ']' in array");
      }
    }
  }

  Json parse_number() {
    const std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                         peek() == '.' || peek() == '_')) {
      ++pos_;
    }
    std::string tok;
    for (char ch : text_.substr(start, pos_ - start)) {
      if (ch != '_') tok += ch;
    }
    if (tok.empty()) fail("expected a value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" || tok == "nan";
    if (!is_float) {
      std::int64_t v = 0;
      const char* b = tok.data() + (tok[0] == '+' ? 1 : 0);
      const auto [p, ec] = std::from_chars(b, tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size()) fail("invalid value '" + tok + "'");
      return v;
    }
    std::istringstream in(tok);
    in.imbue(std::locale::classic());
    double d = 0.0;
    in >> d;
    if (!in || in.peek() != std::char_traits<char>::eof()) fail("invalid number '" + tok + "'");
    return d;
  }

  std::string_view text_;
  std::string source_;
  std::size_t pos_ = 0;
  std::set<std::string> defined_tables_;
};

inline Json parse_toml(std::string_view text, const std::string& source = "<string>") {
  return TomlParser(text, source).parse();
}

inline Json load_toml(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str(), path.string());
}

namespace detail {

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

inline std::string scalar(const Json& v) {
  if (v.is_string()) return quote(v.get<std::string>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_float()) {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out.precision(17);
    out << v.get<double>();
    std::string s = out.str();
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
  }
  if (v.is_array()) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + scalar(v[i]);
    return s + "]";
  }
  return v.dump();
}

inline void emit(std::ostringstream& out, const Json& table, const std::string& prefix) {
  for (const auto& [k, v] : table.items()) {
    if (!v.is_object() && !v.is_null()) out << k << " = " << scalar(v) << '\n';
  }
  for (const auto& [k, v] : table.items()) {
    if (!v.is_object()) continue;
    const std::string name = prefix.empty() ? k : prefix + "." + k;
    out << "\n[" << name << "]\n";
    emit(out, v, name);
  }
}

}  // namespace detail

inline std::string to_toml(const Json& root) {
  std::ostringstream out;
  detail::emit(out, root, "");
  return out.str();
}

// Applies "a.b.c=value" on top of a parsed document.
inline void apply_override(Json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  Json value = TomlParser(assignment.substr(eq + 1), "--set " + key).parse_single_value();
  Json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    Json& next = (*node)[part];
    if (next.is_null()) next = Json::object();
    if (!next.is_object()) throw ConfigError("override key '" + key + "': '" + part + "' is not a table");
    node = &next;
    start = dot + 1;
  }
}

// Typed, tracked access to a config tree. Every key read is recorded so that
// leftovers can be reported as unknown.
class Reader {
 public:
  explicit Reader(Json root) : root_(std::move(root)) {}

  template <typename T>
  void get(const std::string& path, T& out) {
    const Json* node = find(path);
    if (!node) return;
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!node->is_number()) throw ConfigError("");
        out = node->get<double>();
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!node->is_boolean()) throw ConfigError("");
        out = node->get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!node->is_number_integer()) throw ConfigError("");
        const auto v = node->get<std::int64_t>();
        if (std::is_unsigned_v<T> && v < 0) throw ConfigError("");
        out = static_cast<T>(v);
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!node->is_string()) throw ConfigError("");
        out = node->get<std::string>();
      } else {
        out = node->get<T>();
      }
    } catch (const std::exception&) {
      throw ConfigError("config key '" + path + "' has the wrong type (got " + node->dump() + ")");
    }
    resolved(path) = *node;
  }

  // Records a default so it appears in the resolved config.
  template <typename T>
  void get_or_record(const std::string& path, T& out) {
    get(path, out);
    if (!find(path)) resolved(path) = out;
  }

  bool has(const std::string& path) const { return find(path) != nullptr; }

  // Throws on the first key never read.
  void check_unknown() const { walk(root_, ""); }

  const Json& resolved_tree() const { return resolved_; }
  const Json& raw() const { return root_; }

 private:
  const Json* find(const std::string& path) const {
    const Json* node = &root_;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(part)) return nullptr;
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    used_.insert(path);
    return node;
  }

  Json& resolved(const std::string& path) {
    Json* node = &resolved_;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      node = &(*node)[part];
      if (dot == std::string::npos) return *node;
      start = dot + 1;
    }
  }

  void walk(const Json& node, const std::string& prefix) const {
    for (const auto& [k, v] : node.items()) {
      const std::string path = prefix.empty() ? k : prefix + "." + k;
      if (v.is_object()) {
        walk(v, path);
      } else if (!used_.count(path)) {
        throw ConfigError("unknown config key '" + path + "'");
      }
    }
  }

  Json root_;
  Json resolved_ = Json::object();
  mutable std::set<std::string> used_;
};

}  // namespace fluentrl::config
