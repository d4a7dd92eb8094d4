#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "simeval/llm.hpp"
#include "simeval/orchestrator.hpp"

namespace simeval::config {

/// Everything a run needs besides the provider credential, which is read
/// from the environment variable named by `api_key_env`.
struct RunConfig {
  llm::ModelParams chatbot;
  llm::ModelParams user;
  int turn_limit = orchestrator::kDefaultTurnLimit;
  bool strict_markers = true;
  orchestrator::MarkerMode marker_mode = orchestrator::MarkerMode::entering;
  std::uint64_t seed = 0;

  // Data files; empty means the built-in defaults.
  std::filesystem::path persona_matrix;
  std::filesystem::path chatbot_prompt;
  std::filesystem::path phq9_items;

  std::filesystem::path output_dir = "runs";
  std::string base_url = "https://api.openai.com";
  std::string api_key_env = "OPENAI_API_KEY";
  int concurrency = 4;
  int max_retries = 3;
  int sample_size = 48;
  int sample_slack = 2;
  int raters = 10;
  int bootstrap_reps = 1000;
  std::string user_preamble;
  bool persist_live_chats = false;
  int live_chat_idle_minutes = 30;
};

/// Unknown keys and out-of-range values are ConfigError.
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& config);

/// Reads a JSON config; relative data paths resolve against its directory.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace simeval::config
