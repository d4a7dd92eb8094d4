#include "simeval/screening.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "simeval/errors.hpp"

namespace simeval::embedded {
extern const std::string_view phq9_items_json;
}

namespace simeval::screening {

using llm::ChatMessage;
using llm::Role;

std::string_view SeverityClass::name() const {
  switch (level) {
    case SeverityLevel::subthreshold: return "subthreshold";
    case SeverityLevel::mild: return "mild";
    case SeverityLevel::moderate: return "moderate";
    case SeverityLevel::severe: return "severe";
  }
  return "subthreshold";
}

std::string Phq9Instrument::question(int item_index) const {
  return fmt::format("{} {}.\n{}", stem, items.at(static_cast<std::size_t>(item_index)), instruction);
}

Phq9Instrument parse_phq9_instrument(std::string_view json_text) {
  const auto doc = nlohmann::json::parse(json_text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("PHQ-9 item file is not valid JSON");
  Phq9Instrument inst;
  inst.stem = doc.value("stem", "");
  inst.instruction = doc.value("instruction", "");
  inst.retry_instruction = doc.value("retry_instruction", inst.instruction);
  const auto items = doc.value("items", std::vector<std::string>{});
  if (items.size() != kPhq9Items) {
    throw ConfigError(fmt::format("PHQ-9 item file must list 9 items, found {}", items.size()));
  }
  std::copy(items.begin(), items.end(), inst.items.begin());
  return inst;
}

Phq9Instrument load_phq9_instrument(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open PHQ-9 item file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_phq9_instrument(buffer.str());
}

const Phq9Instrument& default_phq9_instrument() {
  static const Phq9Instrument inst = parse_phq9_instrument(embedded::phq9_items_json);
  return inst;
}

int score_phq9(std::span<const int> items) {
  if (items.size() != kPhq9Items) {
    throw ArgumentError(fmt::format("PHQ-9 needs 9 items, got {}", items.size()));
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i] < 0 || items[i] > 3) {
      throw ArgumentError(fmt::format("PHQ-9 item {} = {} outside 0-3", i + 1, items[i]));
    }
  }
  return std::accumulate(items.begin(), items.end(), 0);
}

SeverityClass classify_severity(int total) {
  if (total < 0 || total > kPhq9MaxTotal) {
    throw ArgumentError(fmt::format("PHQ-9 total {} outside 0-27", total));
  }
  if (total <= 4) return {SeverityLevel::subthreshold, 0, 4};
  if (total <= 9) return {SeverityLevel::mild, 5, 9};
  if (total <= 19) return {SeverityLevel::moderate, 10, 19};
  return {SeverityLevel::severe, 20, 27};
}

std::optional<int> parse_phq9_answer(std::string_view reply) {
  for (char c : reply) {
    if (c >= '0' && c <= '9') {
      const int digit = c - '0';
      if (digit <= 3) return digit;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

std::string agent_system_prompt(const persona::ArtificialUser& user, std::string_view preamble) {
  if (preamble.empty()) return user.persona_prompt;
  return fmt::format("{}\n\n{}", preamble, user.persona_prompt);
}

Phq9Response administer_phq9(const persona::ArtificialUser& user, llm::ChatGateway& gateway,
                             const ScreeningOptions& options, const Phq9Instrument& instrument) {
  if (user.persona_prompt.empty()) throw ArgumentError("user " + user.user_id + " has no persona prompt");
  std::vector<ChatMessage> history;
  history.push_back({Role::system, agent_system_prompt(user, options.system_preamble), 0, ""});
  Phq9Response response;
  auto ask = [&](std::string text) {
    history.push_back({Role::user, std::move(text), static_cast<int>(history.size()), ""});
    auto reply = gateway.chat(history, options.params);
    history.push_back({Role::assistant, reply.message.content, static_cast<int>(history.size()), ""});
    return parse_phq9_answer(reply.message.content);
  };
  for (int i = 0; i < kPhq9Items; ++i) {
    auto answer = ask(instrument.question(i));
    if (!answer) answer = ask(instrument.retry_instruction);
    if (!answer) {
      throw ScreeningError(fmt::format("unparseable answer to PHQ-9 item {} for {}", i + 1, user.user_id));
    }
    response.items[static_cast<std::size_t>(i)] = *answer;
  }
  response.total = score_phq9(response.items);
  response.raw_exchange.assign(history.begin() + 1, history.end());
  return response;
}

GateDecision gate(const persona::ArtificialUser& user, const Phq9Response& response) {
  const auto cls = classify_severity(response.total);
  GateDecision d;
  d.severity_class = std::string(cls.name());
  const auto& intended = user.intended_severity();
  if (d.severity_class == intended) {
    d.status = persona::ScreeningStatus::accepted;
  } else {
    d.status = persona::ScreeningStatus::rejected;
    d.note = fmt::format("severity mismatch: intended {}, PHQ-9 total {} is {}", intended,
                         response.total, d.severity_class);
  }
  return d;
}

persona::ArtificialUser screen_user(persona::ArtificialUser user, llm::ChatGateway& gateway,
                                    const ScreeningOptions& options,
                                    const Phq9Instrument& instrument) {
  try {
    const auto response = administer_phq9(user, gateway, options, instrument);
    const auto decision = gate(user, response);
    user.phq9_items.assign(response.items.begin(), response.items.end());
    user.phq9_total = response.total;
    user.severity_class = decision.severity_class;
    user.screening_status = decision.status;
    user.screening_note = decision.note;
  } catch (const ScreeningError& e) {
    user.screening_status = persona::ScreeningStatus::rejected;
    user.screening_note = std::string("unparseable: ") + e.what();
  }
  return user;
}

}  // namespace simeval::screening
