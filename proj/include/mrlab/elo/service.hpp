// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <httplib.h>

#include "mrlab/common/hash.hpp"
#include "mrlab/common/io.hpp"
#include "mrlab/common/rng.hpp"
#include "mrlab/elo/engine.hpp"

namespace mrlab::elo {

/// One catalog line: {item_id, context, captions: {model: caption}}.
struct CatalogItem {
  std::string item_id;
  std::string context;
  std::map<std::string, std::string> captions;
};

inline std::vector<CatalogItem> read_catalog(const std::filesystem::path& path) {
  std::vector<CatalogItem> out;
  std::set<std::string> models;
  for (const auto& j : read_jsonl(path)) {
    try {
      CatalogItem it{j.at("item_id").get<std::string>(), j.value("context", std::string()),
                     j.at("captions").get<std::map<std::string, std::string>>()};
      out.push_back(std::move(it));
    } catch (const json::exception& ex) {
      throw FormatError(std::string("bad catalog record: ") + ex.what());
    }
  }
  for (const auto& it : out)
    for (const auto& [m, _] : it.captions) models.insert(m);
  for (const auto& it : out)
    if (it.captions.size() != models.size())
      throw FormatError("catalog item " + it.item_id + " lacks a caption for some model");
  return out;
}

struct ServiceConfig {
  std::filesystem::path catalog;
  std::filesystem::path log;
  /// Static annotator bundle; not mounted when empty or missing.
  std::filesystem::path ui_dir;
  bool allow_ties = true;
  EloParams params;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%S}Z", now);
}

/// Appends one line and fsyncs before returning.
inline void append_durably(const std::filesystem::path& path, const std::string& line) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("cannot open match log " + path.string());
  const std::string data = line + "\n";
  std::size_t done = 0;
  while (done < data.size()) {
    const auto n = ::write(fd, data.data() + done, data.size() - done);
    if (n <= 0) {
      ::close(fd);
      throw std::runtime_error("write to match log failed");
    }
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

/// Match scheduling and result intake for pairwise caption annotation. State
/// is rebuilt from the append-only match log on construction.
class EloService {
 public:
  explicit EloService(ServiceConfig cfg) : cfg_(std::move(cfg)), rng_(std::random_device{}()) {
    cfg_.params.validate();
    catalog_ = read_catalog(cfg_.catalog);
    for (const auto& it : catalog_) {
      items_.push_back(it.item_id);
      by_id_.emplace(it.item_id, &it);
    }
    if (!catalog_.empty())
      for (const auto& [m, _] : catalog_.front().captions) models_.push_back(m);
    log_ = read_match_log(cfg_.log);
    state_ = replay(log_, cfg_.params, models_);
    for (const auto& r : log_) done_.insert(r.match_id);
  }

  /// Next blinded match, or {"done": true} when every pair has seen every item.
  json next() {
    std::lock_guard lock(mu_);
    std::vector<MatchShell> history;
    for (const auto& r : log_) history.push_back({r.model_a, r.model_b, r.item_id});
    for (const auto& [_, p] : pending_) history.push_back(p.shell);
    auto shell = schedule_next(state_, models_, items_, history);
    if (!shell) return {{"done", true}};
    std::string id;
    do id = hex64(rng_.next_u64());
    while (pending_.count(id) || done_.count(id));
    const bool swapped = rng_.below(2) == 1;
    pending_.emplace(id, Pending{*shell, swapped});
    const auto& item = *by_id_.at(shell->item_id);
    const auto& left = swapped ? shell->model_b : shell->model_a;
    const auto& right = swapped ? shell->model_a : shell->model_b;
    return {{"done", false},
            {"match_id", id},
            {"item", {{"item_id", item.item_id}, {"context", item.context}}},
            {"caption_a", item.captions.at(left)},
            {"caption_b", item.captions.at(right)}};
  }

  /// Returns an HTTP status and body. The record reaches the log before 200.
  std::pair<int, json> submit(const json& body) {
    std::string id, choice;
    try {
      id = body.at("match_id").get<std::string>();
      choice = body.at("winner").get<std::string>();
    } catch (const json::exception&) {
      return {400, {{"error", "body needs string fields match_id and winner"}}};
    }
    Winner shown;
    try {
      shown = parse_winner(choice);
    } catch (const FormatError& e) {
      return {400, {{"error", e.what()}}};
    }
    std::lock_guard lock(mu_);
    if (done_.count(id)) return {409, {{"error", "match already judged"}, {"match_id", id}}};
    auto it = pending_.find(id);
    if (it == pending_.end()) return {404, {{"error", "unknown match"}, {"match_id", id}}};
    if (shown == Winner::kTie && !cfg_.allow_ties) return {400, {{"error", "ties are disabled"}}};
    const auto& p = it->second;
    Winner w = shown;
    if (p.swapped && w != Winner::kTie) w = w == Winner::kA ? Winner::kB : Winner::kA;
    MatchRecord rec{id, p.shell.model_a, p.shell.model_b, p.shell.item_id, w, utc_timestamp()};
    append_durably(cfg_.log, to_json(rec).dump());
    apply_match(state_, rec);
    log_.push_back(rec);
    done_.insert(id);
    pending_.erase(it);
    return {200, {{"ok", true}, {"match_id", id}}};
  }

  json ratings() const {
    std::lock_guard lock(mu_);
    json rows = json::array();
    for (const auto& [model, r] : leaderboard(state_))
      rows.push_back({{"model", model}, {"rating", r}, {"matches", state_.matches.at(model)}});
    return {{"ratings", rows}, {"total_matches", log_.size()}};
  }

  json config() const {
    return {{"allow_ties", cfg_.allow_ties},
            {"models", models_.size()},
            {"items", items_.size()},
            {"params",
             {{"initial_mean", cfg_.params.initial_mean},
              {"log_base", cfg_.params.log_base},
              {"scale", cfg_.params.scale},
              {"k_factor", cfg_.params.k_factor}}}};
  }

  EloState state() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  void install(httplib::Server& server) {
    server.Get("/api/next", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(next().dump(), "application/json");
    });
    server.Post("/api/result", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception&) {
        res.status = 400;
        res.set_content(json{{"error", "body is not JSON"}}.dump(), "application/json");
        return;
      }
      auto [status, out] = submit(body);
      res.status = status;
      res.set_content(out.dump(), "application/json");
    });
    server.Get("/api/ratings", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(ratings().dump(), "application/json");
    });
    server.Get("/api/config", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(config().dump(), "application/json");
    });
    if (!cfg_.ui_dir.empty() && std::filesystem::is_directory(cfg_.ui_dir))
      server.set_mount_point("/", cfg_.ui_dir.string());
  }

 private:
  struct Pending {
    MatchShell shell;
    bool swapped = false;
  };

  ServiceConfig cfg_;
  std::vector<CatalogItem> catalog_;
  std::map<std::string, const CatalogItem*> by_id_;
  std::vector<std::string> models_;
  std::vector<std::string> items_;
  std::vector<MatchRecord> log_;
  EloState state_;
  std::set<std::string> done_;
  std::map<std::string, Pending> pending_;
  Rng rng_;
  mutable std::mutex mu_;
};

}  // namespace mrlab::elo
