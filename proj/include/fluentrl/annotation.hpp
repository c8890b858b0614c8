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
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "fluentrl/errors.hpp"
#include "fluentrl/eval.hpp"
#include "fluentrl/rng.hpp"

namespace fluentrl::annotation {

// Failure categories mapped onto HTTP statuses by the server.
class AnnotationError : public std::runtime_error {
 public:
  AnnotationError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct PromptResponses {
  std::string prompt_id;
  std::string prompt;
  std::map<std::string, std::string> responses;  // model -> text
};

inline std::vector<PromptResponses> read_prompt_responses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<PromptResponses> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    PromptResponses p;
    j.at("prompt_id").get_to(p.prompt_id);
    j.at("prompt").get_to(p.prompt);
    j.at("responses").get_to(p.responses);
    if (p.responses.size() < 2) throw InputError("prompt " + p.prompt_id + " needs at least two responses");
    out.push_back(std::move(p));
  }
  return out;
}

struct ResponsePair {
  std::string pair_id;  // opaque
  std::string prompt_id;
  std::string prompt;
  std::string model_a;
  std::string response_a;
  std::string model_b;
  std::string response_b;
};

// Every unordered model pair for every prompt, models in name order.
inline std::vector<ResponsePair> build_pairs(const std::vector<PromptResponses>& prompts) {
  std::vector<ResponsePair> out;
  for (const auto& p : prompts) {
    for (auto i = p.responses.begin(); i != p.responses.end(); ++i) {
      for (auto j = std::next(i); j != p.responses.end(); ++j) {
        out.push_back({"pair-" + std::to_string(out.size()), p.prompt_id, p.prompt, i->first, i->second,
                       j->first, j->second});
      }
    }
  }
  return out;
}

struct PairPayload {
  std::string pair_id;
  std::string prompt_text;
  std::string response_left;
  std::string response_right;
  std::size_t position = 0;
  std::size_t total = 0;
};

inline nlohmann::json to_json(const PairPayload& p) {
  return nlohmann::json{{"pair_id", p.pair_id},
                        {"prompt_text", p.prompt_text},
                        {"response_left", p.response_left},
                        {"response_right", p.response_right},
                        {"position", p.position},
                        {"total", p.total}};
}

struct Progress {
  std::size_t completed = 0;
  std::size_t total = 0;
};

// Sessions, orientation bookkeeping and the append-only verdict journal.
class AnnotationStore {
 public:
  AnnotationStore(std::vector<ResponsePair> pairs, std::vector<std::string> roster,
                  std::filesystem::path data_dir, std::uint64_t seed)
      : pairs_(std::move(pairs)), roster_(std::move(roster)), data_dir_(std::move(data_dir)), seed_(seed) {
    for (std::size_t i = 0; i < pairs_.size(); ++i) index_[pairs_[i].pair_id] = i;
    if (!data_dir_.empty()) {
      std::filesystem::create_directories(data_dir_);
      replay();
    }
  }

  std::filesystem::path journal_path() const { return data_dir_ / "verdicts.jsonl"; }

  std::string login(const std::string& annotator_id) {
    std::lock_guard lock(mu_);
    if (std::find(roster_.begin(), roster_.end(), annotator_id) == roster_.end()) {
      throw AnnotationError(403, "annotator '" + annotator_id + "' is not on the roster");
    }
    session(annotator_id);
    std::random_device rd;
    std::ostringstream tok;
    tok << std::hex;
    for (int i = 0; i < 4; ++i) tok << rd();
    const std::string token = tok.str();
    tokens_[token] = annotator_id;
    return token;
  }

  std::string annotator_for(const std::string& token) const {
    std::lock_guard lock(mu_);
    const auto it = tokens_.find(token);
    if (it == tokens_.end()) throw AnnotationError(401, "unknown session token");
    return it->second;
  }

  // The current pair of the annotator's queue; empty once exhausted. A pair
  // that was served but not answered is served again with its orientation.
  std::optional<PairPayload> next_pair(const std::string& annotator_id) {
    std::lock_guard lock(mu_);
    Session& s = session(annotator_id);
    if (s.cursor >= s.queue.size()) return std::nullopt;
    const std::size_t idx = s.queue[s.cursor];
    const ResponsePair& p = pairs_[idx];
    if (!s.served.count(p.pair_id)) {
      Rng rng(derive_seed(seed_, hash_string(annotator_id), idx, s.servings++));
      s.served[p.pair_id] = (rng() & 1ULL) != 0;
    }
    const bool swapped = s.served[p.pair_id];
    return PairPayload{p.pair_id,
                       p.prompt,
                       swapped ? p.response_b : p.response_a,
                       swapped ? p.response_a : p.response_b,
                       s.cursor,
                       s.queue.size()};
  }

  // Returns true when a new record was stored, false for an identical retry.
  bool record_verdict(const std::string& annotator_id, const std::string& pair_id, const std::string& verdict) {
    if (verdict != "left" && verdict != "right" && verdict != "tie") {
      throw AnnotationError(400, "verdict must be left, right or tie");
    }
    std::lock_guard lock(mu_);
    Session& s = session(annotator_id);
    if (!index_.count(pair_id)) throw AnnotationError(404, "unknown pair '" + pair_id + "'");
    if (const auto it = s.answered.find(pair_id); it != s.answered.end()) {
      if (it->second == verdict) return false;
      throw AnnotationError(409, "pair '" + pair_id + "' was already answered differently");
    }
    const auto served = s.served.find(pair_id);
    if (served == s.served.end() || s.cursor >= s.queue.size() || pairs_[s.queue[s.cursor]].pair_id != pair_id) {
      throw AnnotationError(404, "pair '" + pair_id + "' was not served to this session");
    }
    const ResponsePair& p = pairs_[index_.at(pair_id)];
    const bool swapped = served->second;
    ComparisonRecord rec{p.prompt_id, p.model_a, p.model_b, annotator_id, canonical(verdict, swapped), swapped};
    const nlohmann::json entry{{"annotator_id", annotator_id}, {"pair_id", pair_id},
                               {"queue_position", s.cursor},  {"verdict", verdict},
                               {"swapped", swapped}};
    append(entry.dump());
    s.answered[pair_id] = verdict;
    s.records.emplace_back(s.cursor, rec);
    ++s.cursor;
    return true;
  }

  Progress progress(const std::string& annotator_id) {
    std::lock_guard lock(mu_);
    const Session& s = session(annotator_id);
    return {s.cursor, s.queue.size()};
  }

  // Canonical records ordered by annotator, then queue position.
  std::vector<ComparisonRecord> export_records() const {
    std::lock_guard lock(mu_);
    std::vector<ComparisonRecord> out;
    for (const auto& [annotator, s] : sessions_) {
      auto recs = s.records;
      std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      for (const auto& r : recs) out.push_back(r.second);
    }
    return out;
  }

  std::vector<std::size_t> queue_of(const std::string& annotator_id) {
    std::lock_guard lock(mu_);
    return session(annotator_id).queue;
  }

  std::size_t pair_count() const { return pairs_.size(); }

 private:
  struct Session {
    std::vector<std::size_t> queue;
    std::size_t cursor = 0;
    std::uint64_t servings = 0;
    std::map<std::string, bool> served;         // pair_id -> swapped
    std::map<std::string, std::string> answered;  // pair_id -> raw verdict
    std::vector<std::pair<std::size_t, ComparisonRecord>> records;
  };

  static Verdict canonical(const std::string& v, bool swapped) {
    if (v == "tie") return Verdict::kTie;
    const bool left = v == "left";
    return left != swapped ? Verdict::kA : Verdict::kB;
  }

  Session& session(const std::string& annotator_id) {
    auto it = sessions_.find(annotator_id);
    if (it != sessions_.end()) return it->second;
    Session s;
    s.queue.resize(pairs_.size());
    std::iota(s.queue.begin(), s.queue.end(), 0);
    Rng rng(derive_seed(seed_, hash_string(annotator_id)));
    shuffle(s.queue, rng);
    return sessions_.emplace(annotator_id, std::move(s)).first->second;
  }

  void append(const std::string& line) {
    if (data_dir_.empty()) return;
    std::ofstream out(journal_path(), std::ios::app);
    out << line << '\n';
    out.flush();
    if (!out) throw AnnotationError(500, "failed to append to the verdict journal");
  }

  void replay() {
    std::ifstream in(journal_path());
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json e;
      try {
        e = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        continue;  // torn final line from an interrupted write
      }
      const auto annotator = e.at("annotator_id").get<std::string>();
      const auto pair_id = e.at("pair_id").get<std::string>();
      const auto verdict = e.at("verdict").get<std::string>();
      const bool swapped = e.at("swapped").get<bool>();
      if (!index_.count(pair_id)) throw InputError("journal references unknown pair " + pair_id);
      Session& s = session(annotator);
      const ResponsePair& p = pairs_[index_.at(pair_id)];
      s.served[pair_id] = swapped;
      s.answered[pair_id] = verdict;
      s.records.emplace_back(e.at("queue_position").get<std::size_t>(),
                             ComparisonRecord{p.prompt_id, p.model_a, p.model_b, annotator,
                                              canonical(verdict, swapped), swapped});
      s.cursor = std::max(s.cursor, e.at("queue_position").get<std::size_t>() + 1);
    }
  }

  std::vector<ResponsePair> pairs_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::string> roster_;
  std::filesystem::path data_dir_;
  std::uint64_t seed_;
  mutable std::mutex mu_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, std::string> tokens_;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path data_dir = "annotation-data";
  std::filesystem::path pairs_path;
  std::filesystem::path static_dir;
  std::vector<std::string> roster;
  std::string admin_token;
  std::uint64_t seed = 0;

  // FLUENTRL_ANNOTATION_{PORT,DATA_DIR,ROSTER,ADMIN_TOKEN} override the file.
  void apply_env() {
    if (const char* v = std::getenv("FLUENTRL_ANNOTATION_PORT")) port = std::stoi(v);
    if (const char* v = std::getenv("FLUENTRL_ANNOTATION_DATA_DIR")) data_dir = v;
    if (const char* v = std::getenv("FLUENTRL_ANNOTATION_ADMIN_TOKEN")) admin_token = v;
    if (const char* v = std::getenv("FLUENTRL_ANNOTATION_ROSTER")) {
      roster.clear();
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) roster.push_back(item);
      }
    }
  }

  void validate() const {
    if (roster.empty()) throw ConfigError("annotation.roster must list at least one annotator");
    if (admin_token.empty()) throw ConfigError("annotation.admin_token must be set");
    if (port < 0 || port > 65535) throw ConfigError("annotation.port out of range");
  }
};

// HTTP+JSON front of an AnnotationStore.
class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, ServiceConfig cfg) : store_(store), cfg_(std::move(cfg)) {
    routes();
  }
  ~AnnotationServer() { stop(); }

  // Binds and serves on a background thread; returns the bound port.
  int start() {
    port_ = cfg_.port == 0 ? server_.bind_to_any_port(cfg_.host) : (server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
    if (port_ < 0) throw InputError("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Serves on the calling thread.
  void run() {
    if (cfg_.port == 0) {
      port_ = server_.bind_to_any_port(cfg_.host);
      if (port_ < 0 || !server_.listen_after_bind()) throw InputError("annotation server failed");
      return;
    }
    port_ = cfg_.port;
    if (!server_.listen(cfg_.host, cfg_.port)) throw InputError("cannot listen on port " + std::to_string(cfg_.port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static std::string bearer(const httplib::Request& req) {
    const std::string h = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (h.rfind(prefix, 0) != 0) throw AnnotationError(401, "missing bearer token");
    return h.substr(prefix.size());
  }

  template <typename Fn>
  static auto guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const AnnotationError& e) {
        reply(res, e.status(), {{"error", e.what()}});
      } catch (const nlohmann::json::exception& e) {
        reply(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
      }
    };
  }

  void routes() {
    server_.Post("/session", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      reply(res, 200, {{"token", store_.login(body.at("annotator_id").get<std::string>())}});
    }));
    server_.Get("/pair", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto annotator = store_.annotator_for(bearer(req));
      const auto pair = store_.next_pair(annotator);
      reply(res, 200, pair ? to_json(*pair) : nlohmann::json{{"done", true}});
    }));
    server_.Post("/verdict", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto annotator = store_.annotator_for(bearer(req));
      const auto body = nlohmann::json::parse(req.body);
      const bool stored = store_.record_verdict(annotator, body.at("pair_id").get<std::string>(),
                                                body.at("verdict").get<std::string>());
      const Progress p = store_.progress(annotator);
      reply(res, 200, {{"ok", true}, {"duplicate", !stored}, {"completed", p.completed}, {"total", p.total}});
    }));
    server_.Get("/progress", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const Progress p = store_.progress(store_.annotator_for(bearer(req)));
      reply(res, 200, {{"completed", p.completed}, {"total", p.total}});
    }));
    server_.Get("/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (bearer(req) != cfg_.admin_token) throw AnnotationError(403, "export requires the admin token");
      std::ostringstream out;
      const auto records = store_.export_records();
      write_records_jsonl(out, records);
      res.status = 200;
      res.set_content(out.str(), "application/x-ndjson");
    }));
    if (!cfg_.static_dir.empty()) server_.set_mount_point("/", cfg_.static_dir.string());
  }

  AnnotationStore& store_;
  ServiceConfig cfg_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace fluentrl::annotation
