#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <unistd.h>

#include "simeval/assessment.hpp"
#include "simeval/orchestrator.hpp"
#include "simeval/persona.hpp"
#include "simeval/store.hpp"

namespace fixtures {

inline std::filesystem::path source_dir() { return SIMEVAL_SOURCE_DIR; }
inline std::filesystem::path mock_script_path() { return source_dir() / "tests" / "data" / "mock_script.txt"; }

/// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            fmt::format("simeval-test-{}-{}", ::getpid(), counter.fetch_add(1));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& body) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << body;
}

inline simeval::assessment::RatingForm form(const std::string& session, const std::string& rater, int qbas = 4,
                                            int likert = 5) {
  simeval::assessment::RatingForm f;
  f.session_id = session;
  f.rater_id = rater;
  for (auto& q : f.qbas) q = qbas;
  f.holistic = likert;
  for (auto& c : f.capabilities) c = likert;
  f.authenticity = likert;
  f.difficulty = likert;
  return f;
}

/// A screened user built from the first default config with `severity`.
inline simeval::persona::ArtificialUser accepted_user(const std::string& id, const std::string& severity = "moderate") {
  const auto& matrix = simeval::persona::default_persona_matrix();
  for (const auto& c : simeval::persona::enumerate_configs(matrix.vignettes, matrix.dimensions)) {
    if (c.level(simeval::persona::kSeverity) == severity) {
      auto u = simeval::persona::make_artificial_user(matrix, c, id);
      u.screening_status = simeval::persona::ScreeningStatus::accepted;
      u.severity_class = severity;
      return u;
    }
  }
  throw std::runtime_error("no config with severity " + severity);
}

inline std::string session_id(int i) { return fmt::format("S{:03d}", i); }

inline simeval::orchestrator::Transcript transcript(const std::string& session, const std::string& user,
                                                   simeval::orchestrator::Termination termination =
                                                       simeval::orchestrator::Termination::completed) {
  simeval::orchestrator::Transcript t;
  t.session_id = session;
  t.user_id = user;
  t.prompt_hash = "abc";
  t.messages.push_back({"chatbot", "Hello!", "Hello!", {}, 1, "2024-01-01T00:00:00.000Z", std::nullopt});
  t.messages.push_back({"user", "Hi.", "Hi.", {}, 1, "2024-01-01T00:00:01.000Z", std::nullopt});
  t.phases_entered = {1};
  t.turn_count = 1;
  t.termination = termination;
  return t;
}

/// Stores `n` accepted users U0001.. cycling mild/moderate/severe and one
/// completed session per user, S001..
inline void populate(simeval::store::RunStore& store, int n) {
  static const char* severities[] = {"mild", "moderate", "severe"};
  std::vector<simeval::persona::ArtificialUser> users;
  for (int i = 1; i <= n; ++i) users.push_back(accepted_user(fmt::format("U{:04d}", i), severities[(i - 1) % 3]));
  store.append_users(users);
  for (int i = 1; i <= n; ++i) store.save_transcript(transcript(session_id(i), users[i - 1].user_id));
}

struct CrossedData {
  std::vector<double> scores;
  std::vector<std::string> sessions;
  std::vector<std::string> components;
};

/// y = 3 + a_i + b_j + e_ij with independent normal effects.
inline CrossedData crossed_normal(int n_sessions, int n_components, double var_a, double var_b, double var_e,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> a(n_sessions), b(n_components);
  for (auto& v : a) v = std::sqrt(var_a) * z(rng);
  for (auto& v : b) v = std::sqrt(var_b) * z(rng);
  CrossedData d;
  for (int i = 0; i < n_sessions; ++i) {
    for (int j = 0; j < n_components; ++j) {
      d.scores.push_back(3.0 + a[i] + b[j] + std::sqrt(var_e) * z(rng));
      d.sessions.push_back(fmt::format("S{:04d}", i));
      d.components.push_back(fmt::format("C{:02d}", j));
    }
  }
  return d;
}

}  // namespace fixtures
