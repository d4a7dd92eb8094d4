#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "simeval/llm.hpp"
#include "simeval/persona.hpp"

namespace simeval::screening {

inline constexpr int kPhq9Items = 9;
inline constexpr int kPhq9MaxTotal = 27;

enum class SeverityLevel { subthreshold, mild, moderate, severe };

struct SeverityClass {
  SeverityLevel level;
  int min_total;  // inclusive
  int max_total;  // inclusive

  std::string_view name() const;
};

struct Phq9Response {
  std::array<int, kPhq9Items> items{};
  int total = 0;
  std::vector<llm::ChatMessage> raw_exchange;
};

/// Questionnaire wording; swappable for localization.
struct Phq9Instrument {
  std::string stem;
  std::string instruction;
  std::string retry_instruction;
  std::array<std::string, kPhq9Items> items;

  std::string question(int item_index) const;
};

Phq9Instrument parse_phq9_instrument(std::string_view json_text);
Phq9Instrument load_phq9_instrument(const std::filesystem::path& path);
const Phq9Instrument& default_phq9_instrument();

/// Sum of nine item scores, each 0-3.
int score_phq9(std::span<const int> items);

/// subthreshold 0-4, mild 5-9, moderate 10-19, severe 20-27.
SeverityClass classify_severity(int total);

/// First ASCII digit of the reply if it is 0-3.
std::optional<int> parse_phq9_answer(std::string_view reply);

struct ScreeningOptions {
  llm::ModelParams params;
  std::string system_preamble;  // prepended to the persona prompt when non-empty
};

std::string agent_system_prompt(const persona::ArtificialUser& user, std::string_view preamble);

/// Asks the nine items one per turn in a fresh conversation with the
/// persona prompt as system context. Each item gets one stricter retry.
/// Throws ScreeningError when an item stays unparseable.
Phq9Response administer_phq9(const persona::ArtificialUser& user, llm::ChatGateway& gateway,
                             const ScreeningOptions& options = {},
                             const Phq9Instrument& instrument = default_phq9_instrument());

struct GateDecision {
  persona::ScreeningStatus status = persona::ScreeningStatus::pending;
  std::string severity_class;
  std::string note;
};

GateDecision gate(const persona::ArtificialUser& user, const Phq9Response& response);

/// administer + gate, folded into a copy of the user. Unparseable answers
/// reject the user; transport failures propagate.
persona::ArtificialUser screen_user(persona::ArtificialUser user, llm::ChatGateway& gateway,
                                    const ScreeningOptions& options = {},
                                    const Phq9Instrument& instrument = default_phq9_instrument());

}  // namespace simeval::screening
