#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace simeval::persona {

// Trait names folded into the vignette variant rather than appended.
inline constexpr std::string_view kSeverity = "severity";
inline constexpr std::string_view kAgeGroup = "age_group";
inline constexpr std::string_view kGender = "gender";

struct EmbeddedTraits {
  std::string severity;   // mild | moderate | severe
  std::string age_group;  // 14-17 | 18-25 | 26-29
  std::string gender;     // male | female | non-binary

  bool operator==(const EmbeddedTraits&) const = default;
};

/// One narrative variant of a base persona. Severity, age group and gender
/// live in the narrative text, so each variant carries them as traits.
struct BaseVignette {
  std::string id;  // "<persona>/<severity>"
  std::string persona_id;
  std::string display_name;
  EmbeddedTraits traits;
  std::string narrative;
};

struct LevelExpression {
  std::string level;
  std::string expression;
};

/// An appended behavioral characteristic (disclosure, openness, ...).
struct CharacteristicDimension {
  std::string name;
  std::vector<LevelExpression> levels;

  const LevelExpression* find(std::string_view level) const;
};

struct PersonaMatrix {
  std::vector<BaseVignette> vignettes;
  std::vector<CharacteristicDimension> dimensions;

  const BaseVignette* find_vignette(std::string_view id) const;
};

/// Levels cover the embedded traits (copied from the vignette) plus one
/// level per appended dimension.
struct PersonaConfig {
  std::string vignette_id;
  std::map<std::string, std::string> levels;

  /// Canonical "vignette|dim=level|..." form, unique per config.
  std::string key() const;
  const std::string& level(std::string_view dimension) const;

  bool operator==(const PersonaConfig&) const = default;
};

enum class ScreeningStatus { pending, accepted, rejected };

std::string_view to_string(ScreeningStatus status);
ScreeningStatus screening_status_from_string(std::string_view text);

struct ArtificialUser {
  std::string user_id;
  PersonaConfig config;
  std::string persona_prompt;
  std::vector<int> phq9_items;
  std::optional<int> phq9_total;
  std::optional<std::string> severity_class;
  ScreeningStatus screening_status = ScreeningStatus::pending;
  std::string screening_note;

  const std::string& intended_severity() const { return config.level(kSeverity); }
};

PersonaMatrix parse_persona_matrix(const nlohmann::json& doc);
PersonaMatrix load_persona_matrix(const std::filesystem::path& path);
/// The matrix shipped in data/persona_matrix.json, compiled in.
const PersonaMatrix& default_persona_matrix();

/// Full cross product, ordered by vignette id, then by appended dimension
/// name, then by declared level order.
std::vector<PersonaConfig> enumerate_configs(std::span<const BaseVignette> vignettes,
                                             std::span<const CharacteristicDimension> dimensions);

/// Narrative followed by one paragraph per appended dimension, in the
/// order the dimensions are declared.
std::string assemble_persona_prompt(const BaseVignette& vignette, const PersonaConfig& config,
                                    std::span<const CharacteristicDimension> dimensions);

inline constexpr std::string_view kParagraphSeparator = "\n\n";

struct SampleResult {
  std::vector<PersonaConfig> configs;
  int slack_used = 0;  // larger than requested only if every greedy pass stalled
};

inline constexpr std::uint64_t kSampleAttempts = 64;

/// Seeded greedy stratified sample. A config is accepted only if no
/// dimension level would exceed ceil(n / levels) + slack, where levels
/// counts the levels present in `configs`. Severity is balanced like an
/// appended dimension; age group and gender follow the vignette variant
/// and are left unconstrained. Up to kSampleAttempts seeded
/// shuffles are tried before the slack is raised by one.
SampleResult stratified_sample(std::span<const PersonaConfig> configs, std::size_t n,
                               std::uint64_t seed, int slack = 2);

ArtificialUser make_artificial_user(const PersonaMatrix& matrix, const PersonaConfig& config,
                                    std::string user_id);

nlohmann::json to_json(const PersonaConfig& config);
PersonaConfig persona_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ArtificialUser& user);
ArtificialUser artificial_user_from_json(const nlohmann::json& doc);

}  // namespace simeval::persona
