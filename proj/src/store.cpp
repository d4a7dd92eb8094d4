#include "simeval/store.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <fmt/format.h>

#include "simeval/errors.hpp"

namespace simeval::store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kUsers = "users.jsonl";
constexpr const char* kTranscripts = "transcripts.jsonl";
constexpr const char* kAssignments = "assignments.jsonl";
constexpr const char* kRatings = "ratings.jsonl";

template <typename Fn>
void for_each_record(const fs::path& file, Fn&& fn) {
  std::ifstream in(file);
  if (!in) return;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw IoError(fmt::format("{}:{}: {}", file.string(), line_no, e.what()));
    }
  }
}

bool valid_run_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

}  // namespace

RunStore::RunStore(const fs::path& runs_root, std::string run_id) : run_id_(std::move(run_id)) {
  if (!valid_run_id(run_id_)) throw ArgumentError(fmt::format("invalid run id '{}'", run_id_));
  dir_ = runs_root / run_id_;
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir_.string(), ec.message()));
  load();
}

void RunStore::load() {
  for_each_record(dir_ / kUsers, [this](const json& doc) {
    auto user = persona::artificial_user_from_json(doc);
    if (!users_.contains(user.user_id)) user_order_.push_back(user.user_id);
    users_[user.user_id] = std::move(user);
  });
  for_each_record(dir_ / kTranscripts, [this](const json& doc) {
    auto t = orchestrator::transcript_from_json(doc);
    transcripts_.emplace(t.session_id, std::move(t));
  });
  for_each_record(dir_ / kAssignments, [this](const json& doc) {
    assignments_.push_back(assessment::assignment_from_json(doc));
  });
  for_each_record(dir_ / kRatings, [this](const json& doc) {
    std::vector<assessment::Violation> ignored;
    auto form = assessment::rating_from_json(doc, ignored);
    ratings_.emplace(form.session_id, std::move(form));
  });
}

void RunStore::append_line(const fs::path& file, const std::string& line) {
  std::ofstream out(file, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot open " + file.string() + " for append");
  out << line << '\n';
  out.flush();
  if (!out) throw IoError("write to " + file.string() + " failed");
}

bool RunStore::has_manifest() const { return fs::exists(dir_ / kManifest); }

RunManifest RunStore::manifest() const {
  std::lock_guard lock(manifest_mutex_);
  std::ifstream in(dir_ / kManifest);
  if (!in) throw NotFoundError("run " + run_id_ + " has no manifest");
  try {
    return manifest_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw IoError(fmt::format("{}: {}", (dir_ / kManifest).string(), e.what()));
  }
}

void RunStore::write_manifest(const RunManifest& manifest) {
  std::lock_guard lock(manifest_mutex_);
  const auto target = dir_ / kManifest;
  const auto tmp = dir_ / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << to_json(manifest).dump(2) << '\n';
  }
  fs::rename(tmp, target);
}

RunCounts RunStore::recompute_counts() const {
  RunCounts c;
  {
    std::lock_guard lock(users_mutex_);
    c.configs = users_.size();
    for (const auto& [id, u] : users_) {
      if (u.screening_status != persona::ScreeningStatus::pending) ++c.screened;
      if (u.screening_status == persona::ScreeningStatus::accepted) ++c.accepted;
    }
  }
  {
    std::lock_guard lock(transcripts_mutex_);
    c.sessions = transcripts_.size();
  }
  {
    std::lock_guard lock(ratings_mutex_);
    c.ratings = ratings_.size();
  }
  return c;
}

void RunStore::append_users(std::span<const persona::ArtificialUser> users) {
  std::lock_guard lock(users_mutex_);
  for (const auto& u : users) {
    append_line(dir_ / kUsers, persona::to_json(u).dump());
    if (!users_.contains(u.user_id)) user_order_.push_back(u.user_id);
    users_[u.user_id] = u;
  }
}

std::vector<persona::ArtificialUser> RunStore::users() const {
  std::lock_guard lock(users_mutex_);
  std::vector<persona::ArtificialUser> out;
  out.reserve(user_order_.size());
  for (const auto& id : user_order_) out.push_back(users_.at(id));
  return out;
}

std::optional<persona::ArtificialUser> RunStore::user(const std::string& user_id) const {
  std::lock_guard lock(users_mutex_);
  auto it = users_.find(user_id);
  if (it == users_.end()) return std::nullopt;
  return it->second;
}

std::string RunStore::save_transcript(const orchestrator::Transcript& transcript) {
  std::lock_guard lock(transcripts_mutex_);
  if (transcript.session_id.empty()) throw ArgumentError("transcript has no session id");
  if (transcripts_.contains(transcript.session_id)) {
    throw ConflictError(fmt::format("session {} already stored", transcript.session_id));
  }
  append_line(dir_ / kTranscripts, orchestrator::to_json(transcript).dump());
  transcripts_.emplace(transcript.session_id, transcript);
  return transcript.session_id;
}

orchestrator::Transcript RunStore::load_transcript(const std::string& session_id) const {
  std::lock_guard lock(transcripts_mutex_);
  auto it = transcripts_.find(session_id);
  if (it == transcripts_.end()) throw NotFoundError(fmt::format("session {} not found", session_id));
  return it->second;
}

bool RunStore::has_session(const std::string& session_id) const {
  std::lock_guard lock(transcripts_mutex_);
  return transcripts_.contains(session_id);
}

std::vector<std::string> RunStore::session_ids() const {
  std::lock_guard lock(transcripts_mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, t] : transcripts_) ids.push_back(id);
  return ids;
}

std::vector<orchestrator::Transcript> RunStore::transcripts() const {
  std::lock_guard lock(transcripts_mutex_);
  std::vector<orchestrator::Transcript> out;
  for (const auto& [id, t] : transcripts_) out.push_back(t);
  return out;
}

std::vector<SessionSummary> RunStore::list_sessions(const SessionFilter& filter) const {
  std::vector<SessionSummary> out;
  for (const auto& t : transcripts()) {
    SessionSummary s;
    s.session_id = t.session_id;
    s.user_id = t.user_id;
    s.termination = t.termination;
    s.turn_count = t.turn_count;
    s.final_phase = t.final_phase;
    s.phases_entered = t.phases_entered.size();
    if (auto u = user(t.user_id)) {
      auto it = u->config.levels.find(std::string(persona::kSeverity));
      if (it != u->config.levels.end()) s.severity = it->second;
    }
    s.rated = is_rated(t.session_id);
    if (filter.termination && *filter.termination != s.termination) continue;
    if (filter.severity && *filter.severity != s.severity) continue;
    if (filter.rated && *filter.rated != s.rated) continue;
    out.push_back(std::move(s));
  }
  return out;
}

void RunStore::save_assignments(std::span<const assessment::Assignment> assignments) {
  for (const auto& a : assignments) {
    for (const auto& id : a.session_ids) {
      if (!has_session(id)) throw NotFoundError(fmt::format("assigned session {} not found", id));
    }
  }
  std::lock_guard lock(assignments_mutex_);
  if (!assignments_.empty()) throw ConflictError("run " + run_id_ + " already has assignments");
  for (const auto& a : assignments) {
    append_line(dir_ / kAssignments, assessment::to_json(a).dump());
    assignments_.push_back(a);
  }
}

std::vector<assessment::Assignment> RunStore::assignments() const {
  std::lock_guard lock(assignments_mutex_);
  return assignments_;
}

std::optional<std::string> RunStore::rater_for_session(const std::string& session_id) const {
  std::lock_guard lock(assignments_mutex_);
  for (const auto& a : assignments_) {
    if (std::find(a.session_ids.begin(), a.session_ids.end(), session_id) != a.session_ids.end()) {
      return a.rater_id;
    }
  }
  return std::nullopt;
}

std::optional<assessment::Assignment> RunStore::assignment_for_token(const std::string& token) const {
  if (token.empty()) return std::nullopt;
  std::lock_guard lock(assignments_mutex_);
  for (const auto& a : assignments_) {
    if (a.token == token) return a;
  }
  return std::nullopt;
}

void RunStore::save_rating(const assessment::RatingForm& form) {
  std::lock_guard lock(ratings_mutex_);
  if (ratings_.contains(form.session_id)) {
    throw ConflictError(fmt::format("session {} already has a rating", form.session_id));
  }
  append_line(dir_ / kRatings, assessment::to_json(form).dump());
  ratings_.emplace(form.session_id, form);
}

std::vector<assessment::RatingForm> RunStore::ratings() const {
  std::lock_guard lock(ratings_mutex_);
  std::vector<assessment::RatingForm> out;
  for (const auto& [id, r] : ratings_) out.push_back(r);
  return out;
}

bool RunStore::is_rated(const std::string& session_id) const {
  std::lock_guard lock(ratings_mutex_);
  return ratings_.contains(session_id);
}

json to_json(const RunManifest& m) {
  return json{{"run_id", m.run_id},
              {"created_at", m.created_at},
              {"config", m.config},
              {"prompt_hash", m.prompt_hash},
              {"counts",
               {{"configs", m.counts.configs},
                {"screened", m.counts.screened},
                {"accepted", m.counts.accepted},
                {"sessions", m.counts.sessions},
                {"ratings", m.counts.ratings}}}};
}

RunManifest manifest_from_json(const json& doc) {
  RunManifest m;
  m.run_id = doc.at("run_id").get<std::string>();
  m.created_at = doc.value("created_at", "");
  m.config = doc.value("config", json::object());
  m.prompt_hash = doc.value("prompt_hash", "");
  const auto counts = doc.value("counts", json::object());
  m.counts.configs = counts.value("configs", std::size_t{0});
  m.counts.screened = counts.value("screened", std::size_t{0});
  m.counts.accepted = counts.value("accepted", std::size_t{0});
  m.counts.sessions = counts.value("sessions", std::size_t{0});
  m.counts.ratings = counts.value("ratings", std::size_t{0});
  return m;
}

}  // namespace simeval::store
