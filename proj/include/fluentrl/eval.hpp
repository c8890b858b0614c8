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
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluentrl/errors.hpp"

namespace fluentrl {

enum class Verdict { kA, kB, kTie };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kA: return "A";
    case Verdict::kB: return "B";
    case Verdict::kTie: return "tie";
  }
  return "?";
}

inline Verdict parse_verdict(const std::string& s) {
  if (s == "A") return Verdict::kA;
  if (s == "B") return Verdict::kB;
  if (s == "tie") return Verdict::kTie;
  throw InputError("invalid verdict '" + s + "' (expected A, B or tie)");
}

struct ComparisonRecord {
  std::string prompt_id;
  std::string model_a;
  std::string model_b;
  std::string annotator_id;
  Verdict verdict = Verdict::kTie;
  // Whether model_a was shown on the right. Kept in memory only; the exported
  // schema is orientation-free.
  bool presented_swapped = false;

  void validate() const {
    if (model_a == model_b) throw InputError("comparison of model '" + model_a + "' with itself");
    if (prompt_id.empty() || model_a.empty() || annotator_id.empty()) {
      throw InputError("comparison record has empty identifiers");
    }
  }

  bool operator==(const ComparisonRecord& o) const {
    return std::tie(prompt_id, model_a, model_b, annotator_id, verdict) ==
           std::tie(o.prompt_id, o.model_a, o.model_b, o.annotator_id, o.verdict);
  }
};

inline void to_json(nlohmann::json& j, const ComparisonRecord& r) {
  j = nlohmann::json{{"prompt_id", r.prompt_id},
                     {"model_a", r.model_a},
                     {"model_b", r.model_b},
                     {"annotator_id", r.annotator_id},
                     {"verdict", to_string(r.verdict)}};
}

inline void from_json(const nlohmann::json& j, ComparisonRecord& r) {
  j.at("prompt_id").get_to(r.prompt_id);
  j.at("model_a").get_to(r.model_a);
  j.at("model_b").get_to(r.model_b);
  j.at("annotator_id").get_to(r.annotator_id);
  r.verdict = parse_verdict(j.at("verdict").get<std::string>());
  r.validate();
}

// Key order fixed so a record serializes to the same bytes everywhere.
inline std::string record_line(const ComparisonRecord& r) {
  nlohmann::ordered_json j{{"prompt_id", r.prompt_id},
                           {"model_a", r.model_a},
                           {"model_b", r.model_b},
                           {"annotator_id", r.annotator_id},
                           {"verdict", to_string(r.verdict)}};
  return j.dump();
}

inline std::vector<ComparisonRecord> parse_records_jsonl(std::istream& in, const std::string& name) {
  std::vector<ComparisonRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<ComparisonRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw InputError(name + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<ComparisonRecord> read_records_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read records " + path.string());
  return parse_records_jsonl(in, path.string());
}

inline void write_records_jsonl(std::ostream& out, std::span<const ComparisonRecord> records) {
  for (const auto& r : records) out << record_line(r) << '\n';
}

namespace detail {

// One response pair: a prompt and an unordered model pair, stored with the
// lexicographically smaller model first.
struct PairKey {
  std::string prompt_id;
  std::string first;
  std::string second;
  auto operator<=>(const PairKey&) const = default;
};

struct VoteCount {
  int first = 0;
  int second = 0;
  int tie = 0;
  int total() const { return first + second + tie; }
};

inline std::map<PairKey, VoteCount> count_votes(std::span<const ComparisonRecord> records) {
  std::map<PairKey, VoteCount> votes;
  for (const auto& r : records) {
    r.validate();
    const bool flip = r.model_b < r.model_a;
    PairKey key{r.prompt_id, flip ? r.model_b : r.model_a, flip ? r.model_a : r.model_b};
    VoteCount& c = votes[key];
    if (r.verdict == Verdict::kTie) {
      ++c.tie;
    } else if ((r.verdict == Verdict::kA) != flip) {
      ++c.first;
    } else {
      ++c.second;
    }
  }
  return votes;
}

// Consensus: a side wins only with strictly more votes than each other option.
inline Verdict consensus(const VoteCount& c) {
  if (c.first > c.second && c.first > c.tie) return Verdict::kA;
  if (c.second > c.first && c.second > c.tie) return Verdict::kB;
  return Verdict::kTie;
}

}  // namespace detail

struct WinRateTable {
  std::vector<std::string> models;
  // matrix[i][j]: win-rate of models[i] against models[j]; empty on the
  // diagonal and for pairs never compared.
  std::vector<std::vector<std::optional<double>>> matrix;
  std::vector<std::optional<double>> average;
  std::vector<std::vector<std::size_t>> pairs;

  std::optional<double> at(const std::string& row, const std::string& col) const {
    const auto i = index(row), j = index(col);
    return matrix[i][j];
  }

  std::size_t index(const std::string& model) const {
    const auto it = std::find(models.begin(), models.end(), model);
    if (it == models.end()) throw InputError("unknown model '" + model + "'");
    return static_cast<std::size_t>(it - models.begin());
  }
};

// 1/0.5/0 aggregation: each response pair awards 1 point to the consensus
// winner, or 0.5 to each side on a consensus tie.
inline WinRateTable copeland_winrates(std::span<const ComparisonRecord> records) {
  const auto votes = detail::count_votes(records);
  WinRateTable t;
  for (const auto& [key, _] : votes) {
    t.models.push_back(key.first);
    t.models.push_back(key.second);
  }
  std::sort(t.models.begin(), t.models.end());
  t.models.erase(std::unique(t.models.begin(), t.models.end()), t.models.end());
  const std::size_t m = t.models.size();
  std::vector<std::vector<double>> points(m, std::vector<double>(m, 0.0));
  t.pairs.assign(m, std::vector<std::size_t>(m, 0));
  for (const auto& [key, c] : votes) {
    const std::size_t i = t.index(key.first), j = t.index(key.second);
    ++t.pairs[i][j];
    ++t.pairs[j][i];
    switch (detail::consensus(c)) {
      case Verdict::kA: points[i][j] += 1.0; break;
      case Verdict::kB: points[j][i] += 1.0; break;
      case Verdict::kTie:
        points[i][j] += 0.5;
        points[j][i] += 0.5;
        break;
    }
  }
  t.matrix.assign(m, std::vector<std::optional<double>>(m));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      if (t.pairs[i][j] == 0) continue;
      const double rate = 100.0 * points[i][j] / static_cast<double>(t.pairs[i][j]);
      t.matrix[i][j] = rate;
      t.matrix[j][i] = 100.0 - rate;
    }
  }
  t.average.assign(m, std::nullopt);
  for (std::size_t i = 0; i < m; ++i) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (t.matrix[i][j]) {
        sum += *t.matrix[i][j];
        ++n;
      }
    }
    if (n) t.average[i] = sum / static_cast<double>(n);
  }
  return t;
}

inline nlohmann::json to_json(const WinRateTable& t) {
  nlohmann::json j;
  j["models"] = t.models;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : t.matrix) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& v : row) r.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    rows.push_back(r);
  }
  j["matrix"] = rows;
  nlohmann::json avg = nlohmann::json::array();
  for (const auto& v : t.average) avg.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  j["average"] = avg;
  return j;
}

// Fixed-width text table, one decimal, "-" where undefined.
inline std::string format_table(const WinRateTable& t) {
  std::size_t w = 8;
  for (const auto& m : t.models) w = std::max(w, m.size() + 2);
  auto cell = [&](const std::optional<double>& v) {
    char buf[32];
    if (v) {
      std::snprintf(buf, sizeof buf, "%.1f", *v);
    } else {
      std::snprintf(buf, sizeof buf, "-");
    }
    std::string s(buf);
    return std::string(w > s.size() ? w - s.size() : 0, ' ') + s;
  };
  auto pad = [&](const std::string& s) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  std::ostringstream out;
  out << pad("");
  for (const auto& m : t.models) out << std::string(w > m.size() ? w - m.size() : 0, ' ') << m;
  out << std::string(w - 7, ' ') << "Average\n";
  for (std::size_t i = 0; i < t.models.size(); ++i) {
    out << pad(t.models[i]);
    for (const auto& v : t.matrix[i]) out << cell(v);
    out << cell(t.average[i]) << '\n';
  }
  return out.str();
}

struct AgreementResult {
  std::size_t matching = 0;
  std::size_t counted = 0;
  double fraction() const { return static_cast<double>(matching) / static_cast<double>(counted); }
};

// Over response pairs with at least two annotators and a non-tie consensus,
// the share of individual non-tie verdicts that side with the consensus.
// Empty when no pair qualifies.
inline std::optional<AgreementResult> annotator_agreement(std::span<const ComparisonRecord> records) {
  AgreementResult res;
  for (const auto& [key, c] : detail::count_votes(records)) {
    if (c.total() < 2) continue;
    const Verdict v = detail::consensus(c);
    if (v == Verdict::kTie) continue;
    res.counted += static_cast<std::size_t>(c.first + c.second);
    res.matching += static_cast<std::size_t>(v == Verdict::kA ? c.first : c.second);
  }
  if (res.counted == 0) return std::nullopt;
  return res;
}

}  // namespace fluentrl
