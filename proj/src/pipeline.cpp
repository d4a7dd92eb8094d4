#include "simeval/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "simeval/errors.hpp"
#include "simeval/openai_gateway.hpp"
#include "simeval/rng.hpp"
#include "simeval/session_runner.hpp"

namespace simeval::pipeline {

using nlohmann::json;

Resources load_resources(const config::RunConfig& config) {
  Resources r{
      config.persona_matrix.empty() ? persona::default_persona_matrix()
                                    : persona::load_persona_matrix(config.persona_matrix),
      config.chatbot_prompt.empty() ? orchestrator::default_prompt_components()
                                    : orchestrator::load_prompt_components(config.chatbot_prompt),
      config.phq9_items.empty() ? screening::default_phq9_instrument()
                                : screening::load_phq9_instrument(config.phq9_items),
      {},
      {}};
  r.system_prompt = orchestrator::build_system_prompt(r.prompt);
  r.prompt_hash = orchestrator::prompt_hash(r.system_prompt);
  return r;
}

MockScript parse_mock_script(std::string_view text) {
  MockScript script;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (line.rfind("user:", 0) == 0) {
      auto reply = line.substr(5);
      if (!reply.empty() && reply.front() == ' ') reply.erase(0, 1);
      script.user.push_back(std::move(reply));
    } else {
      script.chatbot.push_back(std::move(line));
    }
  }
  if (script.chatbot.empty()) throw ConfigError("mock script has no chatbot lines");
  return script;
}

MockScript load_mock_script(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read mock script " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_mock_script(buffer.str());
}

std::array<int, screening::kPhq9Items> mock_phq9_answers(std::string_view severity) {
  if (severity == "mild") return {1, 1, 1, 1, 1, 1, 1, 0, 0};
  if (severity == "moderate") return {2, 2, 2, 2, 2, 1, 1, 1, 1};
  if (severity == "severe") return {3, 3, 3, 3, 3, 2, 2, 2, 2};
  return {0, 0, 0, 0, 0, 0, 0, 0, 0};
}

GatewayFactory mock_gateways(MockScript script) {
  auto shared = std::make_shared<const MockScript>(std::move(script));
  GatewayFactory f;
  f.deterministic = true;
  f.chatbot = [shared] { return llm::scripted_mock(shared->chatbot); };
  f.user = [shared](const persona::ArtificialUser&) -> llm::GatewayPtr {
    auto lines = shared->user.empty() ? std::vector<std::string>{"Okay."} : shared->user;
    return std::make_shared<llm::CallbackGateway>([lines](std::span<const llm::ChatMessage> history) {
      const auto answered = std::count_if(history.begin(), history.end(),
                                          [](const llm::ChatMessage& m) { return m.role == llm::Role::assistant; });
      return lines[static_cast<std::size_t>(answered) % lines.size()];
    });
  };
  f.screener = [](const persona::ArtificialUser& user) -> llm::GatewayPtr {
    const auto answers = mock_phq9_answers(user.intended_severity());
    return std::make_shared<llm::CallbackGateway>([answers](std::span<const llm::ChatMessage> history) {
      const auto answered = std::count_if(history.begin(), history.end(),
                                          [](const llm::ChatMessage& m) { return m.role == llm::Role::assistant; });
      return std::to_string(answers[static_cast<std::size_t>(answered) % answers.size()]);
    });
  };
  return f;
}

GatewayFactory live_gateways(const config::RunConfig& config) {
  llm::OpenAiEndpoint endpoint;
  endpoint.base_url = config.base_url;
  endpoint.api_key = llm::api_key_from_env(config.api_key_env);
  llm::RetryPolicy policy;
  policy.max_retries = config.max_retries;
  llm::GatewayPtr shared = std::make_shared<llm::ConcurrencyLimitedGateway>(
      std::make_shared<llm::RetryingGateway>(std::make_shared<llm::OpenAiGateway>(endpoint), policy),
      config.concurrency);
  GatewayFactory f;
  f.chatbot = [shared] { return shared; };
  f.user = [shared](const persona::ArtificialUser&) { return shared; };
  f.screener = [shared](const persona::ArtificialUser&) { return shared; };
  return f;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, workers));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(n, std::max<std::size_t>(count, 1)); ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

PersonasResult create_personas(store::RunStore& store, const Resources& resources, const config::RunConfig& config,
                               std::optional<std::size_t> sample) {
  if (!store.users().empty()) throw ConflictError("run " + store.run_id() + " already has artificial users");
  const auto configs = persona::enumerate_configs(resources.matrix.vignettes, resources.matrix.dimensions);
  PersonasResult result;
  result.configs = configs.size();
  std::vector<persona::PersonaConfig> chosen = configs;
  if (sample) {
    auto s = persona::stratified_sample(configs, *sample, config.seed, config.sample_slack);
    chosen = std::move(s.configs);
    result.slack_used = s.slack_used;
  }
  std::vector<persona::ArtificialUser> users;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    users.push_back(persona::make_artificial_user(resources.matrix, chosen[i], fmt::format("U{:04d}", i + 1)));
  }
  store.append_users(users);
  result.written = users.size();
  return result;
}

ScreenResult screen_pending(store::RunStore& store, const Resources& resources, const config::RunConfig& config,
                            const GatewayFactory& gateways) {
  std::vector<persona::ArtificialUser> pending;
  for (auto& u : store.users()) {
    if (u.screening_status == persona::ScreeningStatus::pending) pending.push_back(std::move(u));
  }
  screening::ScreeningOptions options;
  options.params = config.user;
  options.system_preamble = config.user_preamble;

  std::vector<persona::ArtificialUser> screened(pending.size());
  parallel_for(pending.size(), config.concurrency, [&](std::size_t i) {
    auto gateway = gateways.screener(pending[i]);
    screened[i] = screening::screen_user(pending[i], *gateway, options, resources.phq9);
  });
  store.append_users(screened);

  ScreenResult r;
  r.screened = screened.size();
  for (const auto& u : screened) {
    if (u.screening_status == persona::ScreeningStatus::accepted) ++r.accepted;
    if (u.screening_status == persona::ScreeningStatus::rejected) ++r.rejected;
  }
  return r;
}

RunResult run_study_sessions(store::RunStore& store, const Resources& resources, const config::RunConfig& config,
                             const GatewayFactory& gateways, std::size_t n) {
  if (!store.session_ids().empty()) throw ConflictError("run " + store.run_id() + " already has sessions");
  if (store.users().empty()) create_personas(store, resources, config, std::nullopt);
  const auto existing = store.users();
  if (std::any_of(existing.begin(), existing.end(), [](const persona::ArtificialUser& u) {
        return u.screening_status == persona::ScreeningStatus::pending;
      })) {
    screen_pending(store, resources, config, gateways);
  }

  std::vector<persona::ArtificialUser> accepted;
  std::vector<persona::PersonaConfig> pool;
  for (auto& u : store.users()) {
    if (u.screening_status != persona::ScreeningStatus::accepted) continue;
    pool.push_back(u.config);
    accepted.push_back(std::move(u));
  }
  if (n > pool.size()) {
    throw ArgumentError(fmt::format("requested {} sessions but only {} users passed screening", n, pool.size()));
  }
  auto sample = persona::stratified_sample(pool, n, config.seed, config.sample_slack);

  std::vector<orchestrator::SessionSpec> specs;
  for (std::size_t i = 0; i < sample.configs.size(); ++i) {
    const auto it = std::find_if(accepted.begin(), accepted.end(),
                                 [&](const persona::ArtificialUser& u) { return u.config == sample.configs[i]; });
    orchestrator::SessionSpec spec;
    spec.session_id = fmt::format("S{:03d}", i + 1);
    spec.user = *it;
    spec.chatbot_prompt = resources.system_prompt;
    spec.first_message = resources.prompt.first_message;
    spec.chatbot_params = config.chatbot;
    spec.user_params = config.user;
    spec.user_preamble = config.user_preamble;
    spec.turn_limit = config.turn_limit;
    spec.markers = {config.strict_markers, config.marker_mode};
    spec.seed = derive_seed(config.seed, i);
    specs.push_back(std::move(spec));
  }

  const orchestrator::GatewayProvider provider = [&](const orchestrator::SessionSpec& spec, std::size_t) {
    return orchestrator::SessionGateways{gateways.chatbot(), gateways.user(spec.user)};
  };
  orchestrator::BatchOptions batch{config.concurrency, gateways.deterministic};

  RunResult result;
  result.slack_used = sample.slack_used;
  std::string hashes;
  orchestrator::run_sessions(specs, provider, batch, [&](const orchestrator::Transcript& t) {
    store.save_transcript(t);
    ++result.sessions;
    ++result.terminations[std::string(orchestrator::to_string(t.termination))];
    hashes += orchestrator::transcript_hash(t);
  });
  result.transcript_set_hash = orchestrator::prompt_hash(hashes);
  update_manifest(store, config, resources);
  return result;
}

std::vector<assessment::Assignment> assign_raters(store::RunStore& store, int raters, std::uint64_t seed) {
  const auto ids = store.session_ids();
  if (ids.empty()) throw NotFoundError("run " + store.run_id() + " has no sessions to assign");
  auto assignments = assessment::assign_sessions(ids, assessment::default_raters(raters), seed);
  store.save_assignments(assignments);
  return assignments;
}

json analyze_run(const store::RunStore& store, const Resources& resources, const analysis::ReportOptions& options) {
  const auto ratings = store.ratings();
  if (ratings.empty()) throw EmptyOutputError("no ratings ingested");
  const auto sessions = analysis::join_ratings(ratings, store.transcripts(), store.users());
  const auto characteristics = analysis::default_characteristics(resources.matrix);
  auto report = analysis::build_report(sessions, characteristics, options);
  report["run_id"] = store.run_id();
  report["prompt_hash"] = resources.prompt_hash;
  return report;
}

void update_manifest(store::RunStore& store, const config::RunConfig& config, const Resources& resources) {
  store::RunManifest m;
  if (store.has_manifest()) m = store.manifest();
  m.run_id = store.run_id();
  if (m.created_at.empty()) m.created_at = llm::utc_timestamp();
  m.config = config::to_json(config);
  m.prompt_hash = resources.prompt_hash;
  m.counts = store.recompute_counts();
  store.write_manifest(m);
}

}  // namespace simeval::pipeline
