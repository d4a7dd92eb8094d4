#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "simeval/llm.hpp"
#include "simeval/persona.hpp"

namespace simeval::orchestrator {

inline constexpr int kPhaseCount = 7;
inline constexpr int kDefaultTurnLimit = 100;

/// The chatbot prompt, split into the components it is assembled from.
struct PromptComponents {
  std::string format_instructions;
  std::string identity;
  std::string constraints;
  std::string task;
  std::array<std::string, kPhaseCount> phase_instructions;
  std::string full_session_example;
  std::string first_message;
};

/// Parses the "@@ section" text format of data/chatbot_prompt.txt.
PromptComponents parse_prompt_components(std::string_view text);
PromptComponents load_prompt_components(const std::filesystem::path& path);
const PromptComponents& default_prompt_components();

/// Format, identity, constraints, task, phases, example, first-message
/// note, then the format instructions again.
std::string build_system_prompt(const PromptComponents& components);

/// Hex SHA-256 of the assembled prompt.
std::string prompt_hash(std::string_view prompt);

// ---------------------------------------------------------------------------
// Markers

struct Marker {
  enum class Kind { phase, stop };
  Kind kind = Kind::phase;
  int phase = 0;  // 1..7 for phase markers

  std::string token() const;
  bool operator==(const Marker&) const = default;
};

struct ParsedMessage {
  std::string clean_text;
  std::vector<Marker> markers;
};

/// Extracts case-exact [Phase1]..[Phase7] and [STOP] tokens in order.
/// Anything else in brackets stays in the text.
ParsedMessage parse_markers(std::string_view text);

// ---------------------------------------------------------------------------
// Phase state

enum class Termination { running, completed, stop_marker, turn_limit, provider_refusal, error };

std::string_view to_string(Termination t);
Termination termination_from_string(std::string_view text);

/// How [PhaseK] is read. `entering`: phase K begins. `completing`: phase K
/// is done, so K+1 begins.
enum class MarkerMode { entering, completing };

struct MarkerPolicy {
  bool strict = true;
  MarkerMode mode = MarkerMode::entering;
};

struct MarkerAnomaly {
  int turn_index = 0;
  std::string marker;
  int phase_at_time = 1;
  std::string reason;
};

struct PhaseEvent {
  int turn_index = 0;
  std::string marker;
};

struct SessionState {
  int current_phase = 1;
  std::set<int> phases_entered{1};
  int turn_count = 0;
  Termination termination = Termination::running;
  std::vector<PhaseEvent> events;
  std::vector<MarkerAnomaly> anomalies;

  bool all_phases_entered() const { return phases_entered.size() == kPhaseCount; }
};

/// Applies markers left to right. Strict mode accepts only the next phase;
/// everything else becomes an anomaly. [STOP] ends the session as
/// `completed` when all seven phases were entered, else `stop_marker`.
SessionState advance_state(SessionState state, std::span<const Marker> markers,
                           const MarkerPolicy& policy = {}, int turn_index = 0);

// ---------------------------------------------------------------------------
// Sessions

struct TranscriptMessage {
  std::string speaker;  // "chatbot" | "user"
  std::string content;  // marker-free text shown to the other party and raters
  std::string raw_content;
  std::vector<std::string> markers;
  int turn_index = 0;  // chatbot turn this message belongs to
  std::string created_at;
  std::optional<llm::ResponseMetadata> metadata;
};

struct Transcript {
  std::string session_id;
  std::string user_id;
  std::string prompt_hash;
  llm::ModelParams chatbot_params;
  llm::ModelParams user_params;
  std::vector<TranscriptMessage> messages;
  std::vector<PhaseEvent> phase_events;
  std::vector<MarkerAnomaly> anomalies;
  std::vector<int> phases_entered;
  int final_phase = 1;
  int turn_count = 0;
  Termination termination = Termination::running;
  std::string termination_detail;
  std::uint64_t seed = 0;
  bool strict_markers = true;
  MarkerMode marker_mode = MarkerMode::entering;
};

nlohmann::json to_json(const Transcript& t);
Transcript transcript_from_json(const nlohmann::json& doc);

/// Hex SHA-256 over the transcript with wall-clock fields (timestamps,
/// latency) removed.
std::string transcript_hash(const Transcript& t);

/// Rater-facing view: speaker, content and turn only. No persona fields.
nlohmann::json rater_transcript_payload(const Transcript& t);

using Clock = std::function<std::string()>;

/// Deterministic clock for mock runs: a fixed epoch plus one second per call.
Clock logical_clock();

struct SessionSpec {
  std::string session_id;
  persona::ArtificialUser user;
  std::string chatbot_prompt;
  std::string first_message;
  llm::ModelParams chatbot_params;
  llm::ModelParams user_params;
  std::string user_preamble;
  int turn_limit = kDefaultTurnLimit;
  MarkerPolicy markers;
  std::uint64_t seed = 0;
  bool allow_unscreened = false;
};

/// Alternates chatbot and artificial-user turns starting from the fixed
/// first message. A turn is one chatbot message plus the user's reply; the
/// first message is turn 1. Never throws for provider failures: they end
/// the session with `provider_refusal` or `error`.
Transcript run_session(const SessionSpec& spec, llm::ChatGateway& chatbot, llm::ChatGateway& user,
                       const Clock& clock = llm::utc_timestamp);

/// A chatbot conversation driven one human message at a time, for live
/// probing of the prompt. Not thread-safe; callers serialize access.
class LiveSession {
 public:
  LiveSession(std::string session_id, std::string chatbot_prompt, const std::string& first_message,
              llm::ModelParams params, int turn_limit = kDefaultTurnLimit, MarkerPolicy markers = {},
              Clock clock = llm::utc_timestamp);

  /// Sends one human message and returns the chatbot's reply, or nothing
  /// when the turn limit or a refusal ended the session instead. A
  /// transport failure leaves the session unchanged and propagates.
  /// Throws ConflictError once the session has ended.
  std::optional<TranscriptMessage> send(const std::string& text, llm::ChatGateway& chatbot);

  const std::string& id() const { return session_id_; }
  const SessionState& state() const { return state_; }
  const std::vector<TranscriptMessage>& messages() const { return messages_; }
  /// Snapshot in the stored transcript format.
  Transcript transcript(std::string user_id = "live") const;

 private:
  void add_chatbot_message(const std::string& raw, std::optional<llm::ResponseMetadata> meta);

  std::string session_id_;
  std::string prompt_;
  llm::ModelParams params_;
  int turn_limit_;
  MarkerPolicy markers_;
  Clock clock_;
  SessionState state_;
  std::string termination_detail_;
  std::vector<llm::ChatMessage> history_;
  std::vector<TranscriptMessage> messages_;
};

}  // namespace simeval::orchestrator
