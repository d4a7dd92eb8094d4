#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "simeval/llm.hpp"
#include "simeval/orchestrator.hpp"

namespace simeval::orchestrator {

struct SessionGateways {
  llm::GatewayPtr chatbot;
  llm::GatewayPtr user;
};

/// Supplies the gateways for one session. Real providers return the same
/// shared gateway every time; mocks hand out a fresh script per session.
using GatewayProvider = std::function<SessionGateways(const SessionSpec&, std::size_t index)>;

struct BatchOptions {
  int workers = 4;
  bool deterministic_clock = false;
};

/// Runs every session on a bounded worker pool. `on_done` sees transcripts
/// in input order regardless of completion order, from whichever worker
/// finished the prefix; it is never called concurrently.
std::vector<Transcript> run_sessions(const std::vector<SessionSpec>& specs,
                                     const GatewayProvider& gateways, const BatchOptions& options,
                                     const std::function<void(const Transcript&)>& on_done = {});

}  // namespace simeval::orchestrator
