#include "simeval/persona.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "simeval/errors.hpp"
#include "simeval/rng.hpp"

namespace simeval::embedded {
extern const std::string_view persona_matrix_json;
}

namespace simeval::persona {

using nlohmann::json;

namespace {

const std::set<std::string, std::less<>> kSeverities = {"mild", "moderate", "severe"};
const std::set<std::string, std::less<>> kAgeGroups = {"14-17", "18-25", "26-29"};
const std::set<std::string, std::less<>> kGenders = {"male", "female", "non-binary"};

void check_trait(const std::set<std::string, std::less<>>& allowed, const std::string& value,
                 std::string_view trait, const std::string& vignette) {
  if (!allowed.contains(value)) {
    throw ConfigError(fmt::format("vignette {}: invalid {} '{}'", vignette, trait, value));
  }
}

std::string required_string(const json& node, const char* key, std::string_view where) {
  auto it = node.find(key);
  if (it == node.end() || !it->is_string()) {
    throw ConfigError(fmt::format("{}: missing string field '{}'", where, key));
  }
  return it->get<std::string>();
}

}  // namespace

const LevelExpression* CharacteristicDimension::find(std::string_view level) const {
  auto it = std::find_if(levels.begin(), levels.end(),
                         [&](const LevelExpression& l) { return l.level == level; });
  return it == levels.end() ? nullptr : &*it;
}

const BaseVignette* PersonaMatrix::find_vignette(std::string_view id) const {
  auto it = std::find_if(vignettes.begin(), vignettes.end(),
                         [&](const BaseVignette& v) { return v.id == id; });
  return it == vignettes.end() ? nullptr : &*it;
}

std::string PersonaConfig::key() const {
  std::string out = vignette_id;
  for (const auto& [dim, level] : levels) {
    out += '|';
    out += dim;
    out += '=';
    out += level;
  }
  return out;
}

const std::string& PersonaConfig::level(std::string_view dimension) const {
  auto it = levels.find(std::string(dimension));
  if (it == levels.end()) {
    throw ConfigError(fmt::format("config {} has no level for '{}'", vignette_id, dimension));
  }
  return it->second;
}

std::string_view to_string(ScreeningStatus status) {
  switch (status) {
    case ScreeningStatus::pending: return "pending";
    case ScreeningStatus::accepted: return "accepted";
    case ScreeningStatus::rejected: return "rejected";
  }
  return "pending";
}

ScreeningStatus screening_status_from_string(std::string_view text) {
  if (text == "pending") return ScreeningStatus::pending;
  if (text == "accepted") return ScreeningStatus::accepted;
  if (text == "rejected") return ScreeningStatus::rejected;
  throw ArgumentError(fmt::format("unknown screening status '{}'", text));
}

PersonaMatrix parse_persona_matrix(const json& doc) {
  PersonaMatrix matrix;
  if (!doc.is_object() || !doc.contains("vignettes") || !doc.contains("dimensions")) {
    throw ConfigError("persona matrix needs 'vignettes' and 'dimensions'");
  }
  std::set<std::string> ids;
  for (const auto& persona : doc.at("vignettes")) {
    const auto persona_id = required_string(persona, "id", "vignette");
    const auto display = persona.value("display_name", persona_id);
    if (!persona.contains("variants") || persona.at("variants").empty()) {
      throw ConfigError(fmt::format("vignette {} has no narrative variants", persona_id));
    }
    for (const auto& variant : persona.at("variants")) {
      BaseVignette v;
      v.persona_id = persona_id;
      v.traits.severity = required_string(variant, "severity", persona_id);
      v.traits.age_group = required_string(variant, "age_group", persona_id);
      v.traits.gender = required_string(variant, "gender", persona_id);
      v.id = variant.value("id", persona_id + "/" + v.traits.severity);
      v.display_name = fmt::format("{} ({}, {})", display, variant.value("name", persona_id),
                                   v.traits.severity);
      v.narrative = required_string(variant, "narrative", v.id);
      check_trait(kSeverities, v.traits.severity, kSeverity, v.id);
      check_trait(kAgeGroups, v.traits.age_group, kAgeGroup, v.id);
      check_trait(kGenders, v.traits.gender, kGender, v.id);
      if (v.narrative.empty()) throw ConfigError(fmt::format("vignette {}: empty narrative", v.id));
      if (!ids.insert(v.id).second) throw ConfigError(fmt::format("duplicate vignette id {}", v.id));
      matrix.vignettes.push_back(std::move(v));
    }
  }
  std::set<std::string> names;
  for (const auto& dim : doc.at("dimensions")) {
    CharacteristicDimension d;
    d.name = required_string(dim, "name", "dimension");
    if (d.name == kSeverity || d.name == kAgeGroup || d.name == kGender) {
      throw ConfigError(fmt::format("dimension '{}' is embedded in vignettes, not appended", d.name));
    }
    if (!names.insert(d.name).second) throw ConfigError("duplicate dimension " + d.name);
    for (const auto& level : dim.at("levels")) {
      LevelExpression l{required_string(level, "level", d.name),
                        required_string(level, "expression", d.name)};
      if (l.expression.empty()) {
        throw ConfigError(fmt::format("dimension {} level {}: empty expression", d.name, l.level));
      }
      if (d.find(l.level)) throw ConfigError(fmt::format("dimension {}: duplicate level", d.name));
      d.levels.push_back(std::move(l));
    }
    matrix.dimensions.push_back(std::move(d));
  }
  return matrix;
}

PersonaMatrix load_persona_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open persona matrix " + path.string());
  try {
    return parse_persona_matrix(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

const PersonaMatrix& default_persona_matrix() {
  static const PersonaMatrix matrix = parse_persona_matrix(json::parse(embedded::persona_matrix_json));
  return matrix;
}

std::vector<PersonaConfig> enumerate_configs(std::span<const BaseVignette> vignettes,
                                             std::span<const CharacteristicDimension> dimensions) {
  if (vignettes.empty()) throw ConfigError("no vignettes to enumerate");
  std::vector<const CharacteristicDimension*> dims;
  for (const auto& d : dimensions) {
    if (d.levels.empty()) throw ConfigError(fmt::format("dimension {} has no levels", d.name));
    dims.push_back(&d);
  }
  std::sort(dims.begin(), dims.end(),
            [](const auto* a, const auto* b) { return a->name < b->name; });
  std::vector<const BaseVignette*> order;
  for (const auto& v : vignettes) order.push_back(&v);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

  std::vector<PersonaConfig> out;
  std::vector<std::size_t> digits(dims.size(), 0);
  for (const auto* v : order) {
    std::fill(digits.begin(), digits.end(), 0);
    bool done = false;
    while (!done) {
      PersonaConfig c;
      c.vignette_id = v->id;
      c.levels.emplace(kSeverity, v->traits.severity);
      c.levels.emplace(kAgeGroup, v->traits.age_group);
      c.levels.emplace(kGender, v->traits.gender);
      for (std::size_t i = 0; i < dims.size(); ++i) {
        c.levels.emplace(dims[i]->name, dims[i]->levels[digits[i]].level);
      }
      out.push_back(std::move(c));
      // Odometer: the last (lexicographically largest) dimension varies fastest.
      done = true;
      for (std::size_t i = dims.size(); i-- > 0;) {
        if (++digits[i] < dims[i]->levels.size()) {
          done = false;
          break;
        }
        digits[i] = 0;
      }
    }
  }
  return out;
}

std::string assemble_persona_prompt(const BaseVignette& vignette, const PersonaConfig& config,
                                    std::span<const CharacteristicDimension> dimensions) {
  if (config.vignette_id != vignette.id) {
    throw ConfigError(fmt::format("config references vignette {}, got {}", config.vignette_id,
                                  vignette.id));
  }
  std::string prompt = vignette.narrative;
  for (const auto& dim : dimensions) {
    auto it = config.levels.find(dim.name);
    if (it == config.levels.end()) {
      throw ConfigError(fmt::format("config has no level for dimension {}", dim.name));
    }
    const auto* level = dim.find(it->second);
    if (!level) {
      throw ConfigError(fmt::format("unknown level '{}' for dimension {}", it->second, dim.name));
    }
    prompt += kParagraphSeparator;
    prompt += level->expression;
  }
  return prompt;
}

SampleResult stratified_sample(std::span<const PersonaConfig> configs, std::size_t n,
                               std::uint64_t seed, int slack) {
  if (n == 0 || n > configs.size()) {
    throw ArgumentError(fmt::format("sample size {} outside 1..{}", n, configs.size()));
  }
  if (slack < 0) throw ArgumentError("slack must be non-negative");
  {
    std::set<std::string> keys;
    for (const auto& c : configs) {
      if (!keys.insert(c.key()).second) throw ArgumentError("duplicate config " + c.key());
    }
  }

  // Levels present per dimension in the pool.
  const auto balanced = [](const std::string& dim) { return dim != kAgeGroup && dim != kGender; };
  std::map<std::string, std::set<std::string>> present;
  for (const auto& c : configs) {
    for (const auto& [dim, level] : c.levels) {
      if (balanced(dim)) present[dim].insert(level);
    }
  }
  std::map<std::string, std::size_t> base_cap;
  for (const auto& [dim, levels] : present) {
    base_cap[dim] = (n + levels.size() - 1) / levels.size();
  }

  const auto greedy_pass = [&](std::uint64_t attempt_seed, std::size_t cap_slack) {
    std::vector<std::size_t> order(configs.size());
    std::iota(order.begin(), order.end(), 0);
    Prng rng(attempt_seed);
    portable_shuffle(std::span(order), rng);
    std::map<std::string, std::map<std::string, std::size_t>> counts;
    std::vector<PersonaConfig> picked;
    for (std::size_t idx : order) {
      if (picked.size() == n) break;
      const auto& c = configs[idx];
      const bool fits = std::all_of(c.levels.begin(), c.levels.end(), [&](const auto& kv) {
        return !balanced(kv.first) || counts[kv.first][kv.second] + 1 <= base_cap[kv.first] + cap_slack;
      });
      if (!fits) continue;
      for (const auto& [dim, level] : c.levels) ++counts[dim][level];
      picked.push_back(c);
    }
    return picked;
  };

  SampleResult result;
  for (int s = slack;; ++s) {
    for (std::uint64_t attempt = 0; attempt < kSampleAttempts; ++attempt) {
      auto picked = greedy_pass(derive_seed(seed, 0x5A4D504CULL + attempt), static_cast<std::size_t>(s));
      if (picked.size() == n) {
        result.configs = std::move(picked);
        result.slack_used = s;
        return result;
      }
    }
  }
}

ArtificialUser make_artificial_user(const PersonaMatrix& matrix, const PersonaConfig& config,
                                    std::string user_id) {
  const auto* vignette = matrix.find_vignette(config.vignette_id);
  if (!vignette) throw ConfigError("unknown vignette " + config.vignette_id);
  ArtificialUser user;
  user.user_id = std::move(user_id);
  user.config = config;
  user.persona_prompt = assemble_persona_prompt(*vignette, config, matrix.dimensions);
  return user;
}

json to_json(const PersonaConfig& config) {
  return json{{"vignette_id", config.vignette_id}, {"levels", config.levels}};
}

PersonaConfig persona_config_from_json(const json& doc) {
  PersonaConfig c;
  c.vignette_id = doc.at("vignette_id").get<std::string>();
  c.levels = doc.at("levels").get<std::map<std::string, std::string>>();
  return c;
}

json to_json(const ArtificialUser& user) {
  json out{{"user_id", user.user_id},
           {"config", to_json(user.config)},
           {"persona_prompt", user.persona_prompt},
           {"phq9_items", user.phq9_items},
           {"phq9_total", nullptr},
           {"severity_class", nullptr},
           {"screening_status", to_string(user.screening_status)},
           {"screening_note", user.screening_note}};
  if (user.phq9_total) out["phq9_total"] = *user.phq9_total;
  if (user.severity_class) out["severity_class"] = *user.severity_class;
  return out;
}

ArtificialUser artificial_user_from_json(const json& doc) {
  ArtificialUser u;
  u.user_id = doc.at("user_id").get<std::string>();
  u.config = persona_config_from_json(doc.at("config"));
  u.persona_prompt = doc.at("persona_prompt").get<std::string>();
  u.phq9_items = doc.value("phq9_items", std::vector<int>{});
  if (doc.contains("phq9_total") && !doc.at("phq9_total").is_null()) {
    u.phq9_total = doc.at("phq9_total").get<int>();
  }
  if (doc.contains("severity_class") && !doc.at("severity_class").is_null()) {
    u.severity_class = doc.at("severity_class").get<std::string>();
  }
  u.screening_status = screening_status_from_string(doc.at("screening_status").get<std::string>());
  u.screening_note = doc.value("screening_note", "");
  return u;
}

}  // namespace simeval::persona
