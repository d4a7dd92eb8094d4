#include "simeval/orchestrator.hpp"

#include <atomic>
#include <fstream>
#include <memory>
#include <sstream>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "simeval/errors.hpp"
#include "simeval/screening.hpp"

namespace simeval::embedded {
extern const std::string_view chatbot_prompt_text;
}

namespace simeval::orchestrator {

using llm::ChatMessage;
using llm::Role;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Prompt

namespace {

std::string trim_copy(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string* section_slot(PromptComponents& c, std::string_view name) {
  if (name == "format_instructions") return &c.format_instructions;
  if (name == "identity") return &c.identity;
  if (name == "constraints") return &c.constraints;
  if (name == "task") return &c.task;
  if (name == "full_session_example") return &c.full_session_example;
  if (name == "first_message") return &c.first_message;
  if (name.starts_with("phase_") && name.size() == 7) {
    const int k = name[6] - '0';
    if (k >= 1 && k <= kPhaseCount) return &c.phase_instructions[static_cast<std::size_t>(k - 1)];
  }
  return nullptr;
}

}  // namespace

PromptComponents parse_prompt_components(std::string_view text) {
  PromptComponents c;
  std::string* current = nullptr;
  std::string buffer;
  std::set<std::string> seen;
  auto flush = [&] {
    if (current) *current = trim_copy(buffer);
    buffer.clear();
  };
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (line.starts_with("@@")) {
      flush();
      const auto name = trim_copy(std::string_view(line).substr(2));
      current = section_slot(c, name);
      if (!current) throw ConfigError(fmt::format("unknown prompt section '{}'", name));
      if (!seen.insert(name).second) throw ConfigError(fmt::format("duplicate prompt section '{}'", name));
      continue;
    }
    if (!current) {
      if (line.empty() || line.starts_with('#')) continue;
      throw ConfigError("prompt text before the first '@@' section");
    }
    buffer += line;
    buffer += '\n';
  }
  flush();
  return c;
}

PromptComponents load_prompt_components(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompt file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_prompt_components(buffer.str());
}

const PromptComponents& default_prompt_components() {
  static const PromptComponents components = parse_prompt_components(embedded::chatbot_prompt_text);
  return components;
}

std::string build_system_prompt(const PromptComponents& c) {
  auto require = [](const std::string& value, std::string_view name) {
    if (trim_copy(value).empty()) throw ConfigError(fmt::format("prompt component '{}' is missing", name));
  };
  require(c.format_instructions, "format_instructions");
  require(c.identity, "identity");
  require(c.constraints, "constraints");
  require(c.task, "task");
  for (int k = 0; k < kPhaseCount; ++k) {
    require(c.phase_instructions[static_cast<std::size_t>(k)], fmt::format("phase_{}", k + 1));
  }
  require(c.full_session_example, "full_session_example");
  require(c.first_message, "first_message");

  std::string out;
  auto section = [&out](std::string_view heading, std::string_view body) {
    if (!out.empty()) out += "\n\n";
    out += "# ";
    out += heading;
    out += "\n";
    out += body;
  };
  section("Format", c.format_instructions);
  section("Identity", c.identity);
  section("Constraints", c.constraints);
  section("Task", c.task);
  std::string phases;
  for (const auto& p : c.phase_instructions) {
    if (!phases.empty()) phases += "\n\n";
    phases += p;
  }
  section("Phase-Specific Tasks", phases);
  section("Complete Example Dialogue", c.full_session_example);
  section("First Message",
          fmt::format("Your first message has already been the following: \"{}\"", c.first_message));
  section("Format", c.format_instructions);
  return out;
}

std::string prompt_hash(std::string_view prompt) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), prompt.data(), prompt.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1) {
    throw Error("internal", "SHA-256 computation failed");
  }
  std::string hex;
  hex.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

// ---------------------------------------------------------------------------
// Markers

std::string Marker::token() const {
  return kind == Kind::stop ? std::string("[STOP]") : fmt::format("[Phase{}]", phase);
}

namespace {

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  std::string line;
  auto flush_line = [&] {
    const auto trimmed = trim_copy(line);
    if (!trimmed.empty()) {
      if (!out.empty()) out += '\n';
      out += trimmed;
    }
    line.clear();
  };
  bool in_space = false;
  for (char c : text) {
    if (c == '\n') {
      flush_line();
      in_space = false;
    } else if (c == ' ' || c == '\t' || c == '\r') {
      if (!in_space) line += ' ';
      in_space = true;
    } else {
      line += c;
      in_space = false;
    }
  }
  flush_line();
  return out;
}

}  // namespace

ParsedMessage parse_markers(std::string_view text) {
  ParsedMessage parsed;
  std::string stripped;
  stripped.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '[') {
      const auto rest = text.substr(i);
      if (rest.starts_with("[STOP]")) {
        parsed.markers.push_back({Marker::Kind::stop, 0});
        i += 6;
        continue;
      }
      if (rest.size() >= 8 && rest.starts_with("[Phase") && rest[6] >= '1' && rest[6] <= '7' &&
          rest[7] == ']') {
        parsed.markers.push_back({Marker::Kind::phase, rest[6] - '0'});
        i += 8;
        continue;
      }
    }
    stripped += text[i];
    ++i;
  }
  parsed.clean_text = parsed.markers.empty() ? std::string(text) : normalize_whitespace(stripped);
  return parsed;
}

// ---------------------------------------------------------------------------
// Phase state

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::running: return "running";
    case Termination::completed: return "completed";
    case Termination::stop_marker: return "stop_marker";
    case Termination::turn_limit: return "turn_limit";
    case Termination::provider_refusal: return "provider_refusal";
    case Termination::error: return "error";
  }
  return "error";
}

Termination termination_from_string(std::string_view text) {
  for (auto t : {Termination::running, Termination::completed, Termination::stop_marker,
                 Termination::turn_limit, Termination::provider_refusal, Termination::error}) {
    if (to_string(t) == text) return t;
  }
  throw ArgumentError(fmt::format("unknown termination '{}'", text));
}

SessionState advance_state(SessionState state, std::span<const Marker> markers,
                           const MarkerPolicy& policy, int turn_index) {
  if (state.termination != Termination::running) {
    throw ArgumentError("cannot advance a session that has terminated");
  }
  auto anomaly = [&](const Marker& m, std::string reason) {
    state.anomalies.push_back({turn_index, m.token(), state.current_phase, std::move(reason)});
  };
  for (const auto& m : markers) {
    if (state.termination != Termination::running) {
      anomaly(m, "after_stop");
      continue;
    }
    if (m.kind == Marker::Kind::stop) {
      state.termination =
          state.all_phases_entered() ? Termination::completed : Termination::stop_marker;
      state.events.push_back({turn_index, m.token()});
      continue;
    }
    const int k = m.phase;
    const bool entering = policy.mode == MarkerMode::entering;
    // Phase the marker refers to as "the one being left" in each reading.
    const int expected = entering ? state.current_phase + 1 : state.current_phase;
    const int target = entering ? k : std::min(k + 1, kPhaseCount);
    bool accept = false;
    if (policy.strict) {
      accept = k == expected;
      if (!accept) anomaly(m, k < expected ? "backward" : "skip");
    } else {
      accept = k >= expected;
      if (!accept) anomaly(m, "backward");
    }
    if (!accept) continue;
    state.phases_entered.insert(target);
    state.current_phase = *state.phases_entered.rbegin();
    state.events.push_back({turn_index, m.token()});
  }
  return state;
}

// ---------------------------------------------------------------------------
// Transcript serialization

namespace {

json to_json(const MarkerAnomaly& a) {
  return json{{"turn_index", a.turn_index}, {"marker", a.marker}, {"phase_at_time", a.phase_at_time},
              {"reason", a.reason}};
}

json to_json(const PhaseEvent& e) { return json{{"turn_index", e.turn_index}, {"marker", e.marker}}; }

std::string_view to_string(MarkerMode mode) {
  return mode == MarkerMode::entering ? "entering" : "completing";
}

}  // namespace

json to_json(const Transcript& t) {
  json messages = json::array();
  for (const auto& m : t.messages) {
    json jm{{"speaker", m.speaker},       {"content", m.content},   {"raw_content", m.raw_content},
            {"markers", m.markers},       {"turn_index", m.turn_index},
            {"created_at", m.created_at}, {"metadata", nullptr}};
    if (m.metadata) jm["metadata"] = llm::to_json(*m.metadata);
    messages.push_back(std::move(jm));
  }
  json events = json::array();
  for (const auto& e : t.phase_events) events.push_back(to_json(e));
  json anomalies = json::array();
  for (const auto& a : t.anomalies) anomalies.push_back(to_json(a));
  return json{{"session_id", t.session_id},
              {"user_id", t.user_id},
              {"prompt_hash", t.prompt_hash},
              {"chatbot_params", llm::to_json(t.chatbot_params)},
              {"user_params", llm::to_json(t.user_params)},
              {"messages", std::move(messages)},
              {"phase_events", std::move(events)},
              {"anomalies", std::move(anomalies)},
              {"phases_entered", t.phases_entered},
              {"final_phase", t.final_phase},
              {"turn_count", t.turn_count},
              {"termination", to_string(t.termination)},
              {"termination_detail", t.termination_detail},
              {"seed", t.seed},
              {"strict_markers", t.strict_markers},
              {"marker_mode", to_string(t.marker_mode)}};
}

Transcript transcript_from_json(const json& doc) {
  Transcript t;
  t.session_id = doc.at("session_id").get<std::string>();
  t.user_id = doc.at("user_id").get<std::string>();
  t.prompt_hash = doc.at("prompt_hash").get<std::string>();
  t.chatbot_params = llm::model_params_from_json(doc.at("chatbot_params"));
  t.user_params = llm::model_params_from_json(doc.at("user_params"));
  for (const auto& jm : doc.at("messages")) {
    TranscriptMessage m;
    m.speaker = jm.at("speaker").get<std::string>();
    m.content = jm.at("content").get<std::string>();
    m.raw_content = jm.at("raw_content").get<std::string>();
    m.markers = jm.at("markers").get<std::vector<std::string>>();
    m.turn_index = jm.at("turn_index").get<int>();
    m.created_at = jm.at("created_at").get<std::string>();
    if (!jm.at("metadata").is_null()) m.metadata = llm::response_metadata_from_json(jm["metadata"]);
    t.messages.push_back(std::move(m));
  }
  for (const auto& je : doc.at("phase_events")) {
    t.phase_events.push_back({je.at("turn_index").get<int>(), je.at("marker").get<std::string>()});
  }
  for (const auto& ja : doc.at("anomalies")) {
    t.anomalies.push_back({ja.at("turn_index").get<int>(), ja.at("marker").get<std::string>(),
                           ja.at("phase_at_time").get<int>(), ja.at("reason").get<std::string>()});
  }
  t.phases_entered = doc.at("phases_entered").get<std::vector<int>>();
  t.final_phase = doc.at("final_phase").get<int>();
  t.turn_count = doc.at("turn_count").get<int>();
  t.termination = termination_from_string(doc.at("termination").get<std::string>());
  t.termination_detail = doc.value("termination_detail", "");
  t.seed = doc.value("seed", std::uint64_t{0});
  t.strict_markers = doc.value("strict_markers", true);
  t.marker_mode =
      doc.value("marker_mode", "entering") == "completing" ? MarkerMode::completing : MarkerMode::entering;
  return t;
}

std::string transcript_hash(const Transcript& t) {
  auto doc = to_json(t);
  for (auto& m : doc["messages"]) {
    m.erase("created_at");
    if (m["metadata"].is_object()) m["metadata"].erase("latency_ms");
  }
  return prompt_hash(doc.dump());
}

json rater_transcript_payload(const Transcript& t) {
  json messages = json::array();
  for (const auto& m : t.messages) {
    messages.push_back({{"speaker", m.speaker}, {"content", m.content}, {"turn_index", m.turn_index}});
  }
  return json{{"session_id", t.session_id}, {"turn_count", t.turn_count}, {"messages", std::move(messages)}};
}

Clock logical_clock() {
  auto counter = std::make_shared<std::atomic<long long>>(0);
  return [counter] {
    // 2024-01-01T00:00:00Z
    const std::time_t t = 1704067200 + counter->fetch_add(1);
    return fmt::format("{:%Y-%m-%dT%H:%M:%S}.000Z", fmt::gmtime(t));
  };
}

// ---------------------------------------------------------------------------
// Session loop

Transcript run_session(const SessionSpec& spec, llm::ChatGateway& chatbot, llm::ChatGateway& user,
                       const Clock& clock) {
  if (!spec.allow_unscreened && spec.user.screening_status != persona::ScreeningStatus::accepted) {
    throw ArgumentError(fmt::format("user {} has not passed screening", spec.user.user_id));
  }
  if (spec.turn_limit < 1) throw ArgumentError("turn limit must be at least 1");
  if (spec.chatbot_prompt.empty() || spec.first_message.empty()) {
    throw ArgumentError("session needs a chatbot prompt and a first message");
  }

  Transcript t;
  t.session_id = spec.session_id;
  t.user_id = spec.user.user_id;
  t.prompt_hash = prompt_hash(spec.chatbot_prompt);
  t.chatbot_params = spec.chatbot_params;
  t.user_params = spec.user_params;
  t.seed = spec.seed;
  t.strict_markers = spec.markers.strict;
  t.marker_mode = spec.markers.mode;

  std::vector<ChatMessage> bot_history{{Role::system, spec.chatbot_prompt, 0, ""}};
  std::vector<ChatMessage> user_history{
      {Role::system, screening::agent_system_prompt(spec.user, spec.user_preamble), 0, ""}};

  SessionState state;
  auto add_chatbot_message = [&](const std::string& raw, std::optional<llm::ResponseMetadata> meta) {
    auto parsed = parse_markers(raw);
    ++state.turn_count;
    state = advance_state(std::move(state), parsed.markers, spec.markers, state.turn_count);
    TranscriptMessage m{"chatbot", parsed.clean_text, raw, {}, state.turn_count, clock(), std::move(meta)};
    for (const auto& marker : parsed.markers) m.markers.push_back(marker.token());
    t.messages.push_back(std::move(m));
    const auto now = clock();
    bot_history.push_back({Role::assistant, raw, state.turn_count, now});
    user_history.push_back({Role::user, parsed.clean_text, state.turn_count, now});
  };

  auto fail = [&](Termination reason, std::string detail) {
    state.termination = reason;
    t.termination_detail = std::move(detail);
  };

  add_chatbot_message(spec.first_message, std::nullopt);
  while (state.termination == Termination::running) {
    llm::ChatReply user_reply;
    try {
      user_reply = user.chat(user_history, spec.user_params);
    } catch (const RefusalError& e) {
      fail(Termination::provider_refusal, fmt::format("artificial user: {}", e.what()));
      break;
    } catch (const Error& e) {
      fail(Termination::error, fmt::format("artificial user: {}", e.what()));
      break;
    }
    // The artificial user cannot steer the state machine; strip anything
    // marker-like so rater-visible text stays clean.
    auto parsed_user = parse_markers(user_reply.message.content);
    TranscriptMessage um{"user", parsed_user.clean_text, user_reply.message.content, {},
                         state.turn_count, clock(), user_reply.metadata};
    for (const auto& marker : parsed_user.markers) um.markers.push_back(marker.token());
    t.messages.push_back(std::move(um));
    const auto now = clock();
    user_history.push_back({Role::assistant, user_reply.message.content, state.turn_count, now});
    bot_history.push_back({Role::user, parsed_user.clean_text, state.turn_count, now});

    if (state.turn_count >= spec.turn_limit) {
      state.termination = Termination::turn_limit;
      break;
    }

    llm::ChatReply bot_reply;
    try {
      bot_reply = chatbot.chat(bot_history, spec.chatbot_params);
    } catch (const RefusalError& e) {
      fail(Termination::provider_refusal, fmt::format("chatbot: {}", e.what()));
      break;
    } catch (const Error& e) {
      fail(Termination::error, fmt::format("chatbot: {}", e.what()));
      break;
    }
    add_chatbot_message(bot_reply.message.content, bot_reply.metadata);
    if (state.turn_count >= spec.turn_limit && state.termination != Termination::running) {
      // The limit takes precedence on the final allowed turn.
      t.termination_detail = fmt::format("{} on final allowed turn", to_string(state.termination));
      state.termination = Termination::turn_limit;
    }
  }

  t.phase_events = state.events;
  t.anomalies = state.anomalies;
  t.phases_entered.assign(state.phases_entered.begin(), state.phases_entered.end());
  t.final_phase = state.current_phase;
  t.turn_count = state.turn_count;
  t.termination = state.termination;
  return t;
}

// ---------------------------------------------------------------------------
// Live sessions

LiveSession::LiveSession(std::string session_id, std::string chatbot_prompt, const std::string& first_message,
                         llm::ModelParams params, int turn_limit, MarkerPolicy markers, Clock clock)
    : session_id_(std::move(session_id)),
      prompt_(std::move(chatbot_prompt)),
      params_(std::move(params)),
      turn_limit_(turn_limit),
      markers_(markers),
      clock_(std::move(clock)) {
  if (turn_limit_ < 1) throw ArgumentError("turn limit must be at least 1");
  if (prompt_.empty() || first_message.empty()) throw ArgumentError("live session needs a prompt and a first message");
  history_.push_back({Role::system, prompt_, 0, ""});
  add_chatbot_message(first_message, std::nullopt);
}

void LiveSession::add_chatbot_message(const std::string& raw, std::optional<llm::ResponseMetadata> meta) {
  auto parsed = parse_markers(raw);
  ++state_.turn_count;
  state_ = advance_state(std::move(state_), parsed.markers, markers_, state_.turn_count);
  TranscriptMessage m{"chatbot", parsed.clean_text, raw, {}, state_.turn_count, clock_(), std::move(meta)};
  for (const auto& marker : parsed.markers) m.markers.push_back(marker.token());
  history_.push_back({Role::assistant, raw, state_.turn_count, m.created_at});
  messages_.push_back(std::move(m));
}

std::optional<TranscriptMessage> LiveSession::send(const std::string& text, llm::ChatGateway& chatbot) {
  if (state_.termination != Termination::running) {
    throw ConflictError(fmt::format("live session {} has ended ({})", session_id_, to_string(state_.termination)));
  }
  auto parsed = parse_markers(text);
  TranscriptMessage um{"user", parsed.clean_text, text, {}, state_.turn_count, clock_(), std::nullopt};
  for (const auto& marker : parsed.markers) um.markers.push_back(marker.token());

  if (state_.turn_count >= turn_limit_) {
    messages_.push_back(std::move(um));
    state_.termination = Termination::turn_limit;
    return std::nullopt;
  }

  history_.push_back({Role::user, parsed.clean_text, state_.turn_count, um.created_at});
  llm::ChatReply reply;
  try {
    reply = chatbot.chat(history_, params_);
  } catch (const RefusalError& e) {
    messages_.push_back(std::move(um));
    state_.termination = Termination::provider_refusal;
    termination_detail_ = fmt::format("chatbot: {}", e.what());
    return std::nullopt;
  } catch (...) {
    history_.pop_back();
    throw;
  }
  messages_.push_back(std::move(um));
  add_chatbot_message(reply.message.content, reply.metadata);
  if (state_.turn_count >= turn_limit_ && state_.termination != Termination::running) {
    termination_detail_ = fmt::format("{} on final allowed turn", to_string(state_.termination));
    state_.termination = Termination::turn_limit;
  }
  return messages_.back();
}

Transcript LiveSession::transcript(std::string user_id) const {
  Transcript t;
  t.session_id = session_id_;
  t.user_id = std::move(user_id);
  t.prompt_hash = prompt_hash(prompt_);
  t.chatbot_params = params_;
  t.messages = messages_;
  t.phase_events = state_.events;
  t.anomalies = state_.anomalies;
  t.phases_entered.assign(state_.phases_entered.begin(), state_.phases_entered.end());
  t.final_phase = state_.current_phase;
  t.turn_count = state_.turn_count;
  t.termination = state_.termination;
  t.termination_detail = termination_detail_;
  t.strict_markers = markers_.strict;
  t.marker_mode = markers_.mode;
  return t;
}

}  // namespace simeval::orchestrator
