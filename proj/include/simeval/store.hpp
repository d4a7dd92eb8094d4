#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "simeval/assessment.hpp"
#include "simeval/orchestrator.hpp"
#include "simeval/persona.hpp"

namespace simeval::store {

struct RunCounts {
  std::size_t configs = 0;
  std::size_t screened = 0;
  std::size_t accepted = 0;
  std::size_t sessions = 0;
  std::size_t ratings = 0;

  bool operator==(const RunCounts&) const = default;
};

struct RunManifest {
  std::string run_id;
  std::string created_at;
  nlohmann::json config = nlohmann::json::object();
  std::string prompt_hash;
  RunCounts counts;
};

struct SessionSummary {
  std::string session_id;
  std::string user_id;
  orchestrator::Termination termination = orchestrator::Termination::running;
  int turn_count = 0;
  int final_phase = 1;
  std::size_t phases_entered = 0;
  std::string severity;
  bool rated = false;
};

struct SessionFilter {
  std::optional<orchestrator::Termination> termination;
  std::optional<std::string> severity;
  std::optional<bool> rated;
};

/// Append-only record files under runs/<run_id>/:
///   manifest.json      rewritten as counts change
///   users.jsonl        artificial users; a later line for the same user_id supersedes
///   transcripts.jsonl  one transcript per line, session_id unique
///   assignments.jsonl  one rater assignment per line
///   ratings.jsonl      at most one rating per session
///
/// Appends to different files may run concurrently; each file has one writer.
class RunStore {
 public:
  RunStore(const std::filesystem::path& runs_root, std::string run_id);

  RunStore(const RunStore&) = delete;
  RunStore& operator=(const RunStore&) = delete;

  const std::string& run_id() const { return run_id_; }
  const std::filesystem::path& directory() const { return dir_; }

  bool has_manifest() const;
  RunManifest manifest() const;
  void write_manifest(const RunManifest& manifest);
  RunCounts recompute_counts() const;

  void append_users(std::span<const persona::ArtificialUser> users);
  /// Latest record per user, in first-seen order.
  std::vector<persona::ArtificialUser> users() const;
  std::optional<persona::ArtificialUser> user(const std::string& user_id) const;

  /// Throws ConflictError when the session id already exists.
  std::string save_transcript(const orchestrator::Transcript& transcript);
  /// Throws NotFoundError for unknown ids.
  orchestrator::Transcript load_transcript(const std::string& session_id) const;
  bool has_session(const std::string& session_id) const;
  std::vector<std::string> session_ids() const;  // sorted
  std::vector<orchestrator::Transcript> transcripts() const;  // sorted by session_id
  std::vector<SessionSummary> list_sessions(const SessionFilter& filter = {}) const;

  /// Throws ConflictError if assignments were already written and
  /// NotFoundError for sessions that do not exist.
  void save_assignments(std::span<const assessment::Assignment> assignments);
  std::vector<assessment::Assignment> assignments() const;
  std::optional<std::string> rater_for_session(const std::string& session_id) const;
  std::optional<assessment::Assignment> assignment_for_token(const std::string& token) const;

  /// Throws ConflictError when the session already has a rating.
  void save_rating(const assessment::RatingForm& form);
  std::vector<assessment::RatingForm> ratings() const;  // sorted by session_id
  bool is_rated(const std::string& session_id) const;

  /// Serializes check-then-write sequences for ratings.
  std::mutex& rating_writer() { return rating_writer_; }

 private:
  void load();
  void append_line(const std::filesystem::path& file, const std::string& line);

  std::string run_id_;
  std::filesystem::path dir_;

  mutable std::mutex users_mutex_;
  mutable std::mutex transcripts_mutex_;
  mutable std::mutex assignments_mutex_;
  mutable std::mutex ratings_mutex_;
  mutable std::mutex manifest_mutex_;
  std::mutex rating_writer_;

  std::vector<std::string> user_order_;
  std::map<std::string, persona::ArtificialUser> users_;
  std::map<std::string, orchestrator::Transcript> transcripts_;
  std::vector<assessment::Assignment> assignments_;
  std::map<std::string, assessment::RatingForm> ratings_;
};

nlohmann::json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& doc);

}  // namespace simeval::store
