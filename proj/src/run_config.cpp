#include "simeval/run_config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "simeval/errors.hpp"

namespace simeval::config {

using nlohmann::json;

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "chatbot",         "user",           "turn_limit",     "strict_markers", "marker_mode",
      "seed",            "persona_matrix", "chatbot_prompt", "phq9_items",     "output_dir",
      "base_url",        "api_key_env",    "concurrency",    "max_retries",    "sample_size",
      "sample_slack",    "raters",         "bootstrap_reps", "user_preamble",  "persist_live_chats",
      "live_chat_idle_minutes"};
  return keys;
}

int positive(const json& doc, const char* key, int fallback, int min) {
  const int v = doc.value(key, fallback);
  if (v < min) throw ConfigError(fmt::format("{} must be at least {}", key, min));
  return v;
}

}  // namespace

RunConfig run_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("run configuration must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!known_keys().contains(key)) throw ConfigError("unknown configuration key '" + key + "'");
  }
  RunConfig c;
  try {
    if (doc.contains("chatbot")) c.chatbot = llm::model_params_from_json(doc["chatbot"], c.chatbot);
    if (doc.contains("user")) c.user = llm::model_params_from_json(doc["user"], c.user);
    c.turn_limit = positive(doc, "turn_limit", c.turn_limit, 1);
    c.strict_markers = doc.value("strict_markers", c.strict_markers);
    const auto mode = doc.value("marker_mode", std::string("entering"));
    if (mode == "entering") {
      c.marker_mode = orchestrator::MarkerMode::entering;
    } else if (mode == "completing") {
      c.marker_mode = orchestrator::MarkerMode::completing;
    } else {
      throw ConfigError("marker_mode must be 'entering' or 'completing'");
    }
    c.seed = doc.value("seed", c.seed);
    c.persona_matrix = doc.value("persona_matrix", std::string());
    c.chatbot_prompt = doc.value("chatbot_prompt", std::string());
    c.phq9_items = doc.value("phq9_items", std::string());
    c.output_dir = doc.value("output_dir", c.output_dir.string());
    c.base_url = doc.value("base_url", c.base_url);
    c.api_key_env = doc.value("api_key_env", c.api_key_env);
    c.concurrency = positive(doc, "concurrency", c.concurrency, 1);
    c.max_retries = positive(doc, "max_retries", c.max_retries, 0);
    c.sample_size = positive(doc, "sample_size", c.sample_size, 1);
    c.sample_slack = positive(doc, "sample_slack", c.sample_slack, 0);
    c.raters = positive(doc, "raters", c.raters, 1);
    c.bootstrap_reps = positive(doc, "bootstrap_reps", c.bootstrap_reps, 0);
    c.user_preamble = doc.value("user_preamble", c.user_preamble);
    c.persist_live_chats = doc.value("persist_live_chats", c.persist_live_chats);
    c.live_chat_idle_minutes = positive(doc, "live_chat_idle_minutes", c.live_chat_idle_minutes, 1);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid run configuration: ") + e.what());
  }
  if (c.chatbot.temperature < 0 || c.user.temperature < 0) throw ConfigError("temperature must be non-negative");
  return c;
}

json to_json(const RunConfig& c) {
  return json{{"chatbot", llm::to_json(c.chatbot)},
              {"user", llm::to_json(c.user)},
              {"turn_limit", c.turn_limit},
              {"strict_markers", c.strict_markers},
              {"marker_mode", c.marker_mode == orchestrator::MarkerMode::entering ? "entering" : "completing"},
              {"seed", c.seed},
              {"persona_matrix", c.persona_matrix.string()},
              {"chatbot_prompt", c.chatbot_prompt.string()},
              {"phq9_items", c.phq9_items.string()},
              {"output_dir", c.output_dir.string()},
              {"base_url", c.base_url},
              {"api_key_env", c.api_key_env},
              {"concurrency", c.concurrency},
              {"max_retries", c.max_retries},
              {"sample_size", c.sample_size},
              {"sample_slack", c.sample_slack},
              {"raters", c.raters},
              {"bootstrap_reps", c.bootstrap_reps},
              {"user_preamble", c.user_preamble},
              {"persist_live_chats", c.persist_live_chats},
              {"live_chat_idle_minutes", c.live_chat_idle_minutes}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  auto c = run_config_from_json(doc);
  const auto base = path.parent_path();
  for (auto* p : {&c.persona_matrix, &c.chatbot_prompt, &c.phq9_items, &c.output_dir}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  return c;
}

}  // namespace simeval::config
