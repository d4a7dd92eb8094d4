#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "simeval/analysis.hpp"
#include "simeval/assessment.hpp"
#include "simeval/llm.hpp"
#include "simeval/orchestrator.hpp"
#include "simeval/persona.hpp"
#include "simeval/run_config.hpp"
#include "simeval/screening.hpp"
#include "simeval/store.hpp"

namespace simeval::pipeline {

/// Data files resolved from a run configuration.
struct Resources {
  persona::PersonaMatrix matrix;
  orchestrator::PromptComponents prompt;
  screening::Phq9Instrument phq9;
  std::string system_prompt;
  std::string prompt_hash;
};

Resources load_resources(const config::RunConfig& config);

/// Mock conversation script. Plain lines are chatbot replies in order;
/// lines starting with "user:" are artificial-user replies, cycled; blank
/// lines and lines starting with '#' are skipped. Every session replays
/// the script from the top.
struct MockScript {
  std::vector<std::string> chatbot;
  std::vector<std::string> user;
};

MockScript parse_mock_script(std::string_view text);
MockScript load_mock_script(const std::filesystem::path& path);

/// Where conversations come from. Live factories share one rate-limited
/// provider client; mock factories hand out fresh scripted state.
struct GatewayFactory {
  std::function<llm::GatewayPtr()> chatbot;
  std::function<llm::GatewayPtr(const persona::ArtificialUser&)> user;
  std::function<llm::GatewayPtr(const persona::ArtificialUser&)> screener;
  bool deterministic = false;
};

GatewayFactory mock_gateways(MockScript script);
/// OpenAI-compatible endpoint from the config, credential from the
/// environment. Throws ConfigError when the credential is missing.
GatewayFactory live_gateways(const config::RunConfig& config);

/// PHQ-9 item answers a scripted user gives for an intended severity:
/// totals 7, 14 and 23 for mild, moderate and severe.
std::array<int, screening::kPhq9Items> mock_phq9_answers(std::string_view severity);

struct PersonasResult {
  std::size_t configs = 0;
  std::size_t written = 0;
  int slack_used = 0;
};

/// Enumerates the matrix and stores either every config or a stratified
/// sample of `sample` configs as pending users U0001, U0002, ...
/// Throws ConflictError when the run already has users.
PersonasResult create_personas(store::RunStore& store, const Resources& resources,
                               const config::RunConfig& config, std::optional<std::size_t> sample);

struct ScreenResult {
  std::size_t screened = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

/// Screens every pending user and appends the verdicts.
ScreenResult screen_pending(store::RunStore& store, const Resources& resources,
                            const config::RunConfig& config, const GatewayFactory& gateways);

struct RunResult {
  std::size_t sessions = 0;
  std::map<std::string, std::size_t> terminations;
  int slack_used = 0;
  std::string transcript_set_hash;  // SHA-256 over the per-session hashes in id order
};

/// Samples `n` accepted users (creating and screening users first if the
/// run has none), runs one session each and stores the transcripts as
/// S001, S002, ... Throws ConflictError when the run already has sessions.
RunResult run_study_sessions(store::RunStore& store, const Resources& resources,
                             const config::RunConfig& config, const GatewayFactory& gateways, std::size_t n);

std::vector<assessment::Assignment> assign_raters(store::RunStore& store, int raters, std::uint64_t seed);

/// Joins stored ratings with sessions and personas and builds the report.
nlohmann::json analyze_run(const store::RunStore& store, const Resources& resources,
                           const analysis::ReportOptions& options);

/// Rewrites the manifest with the current config snapshot and counts.
void update_manifest(store::RunStore& store, const config::RunConfig& config, const Resources& resources);

}  // namespace simeval::pipeline
