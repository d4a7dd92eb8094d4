#include "simeval/session_runner.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>

#include "simeval/errors.hpp"

namespace simeval::orchestrator {

std::vector<Transcript> run_sessions(const std::vector<SessionSpec>& specs,
                                     const GatewayProvider& gateways, const BatchOptions& options,
                                     const std::function<void(const Transcript&)>& on_done) {
  if (!gateways) throw ArgumentError("run_sessions needs a gateway provider");
  std::vector<std::optional<Transcript>> results(specs.size());
  std::atomic<std::size_t> next{0};
  std::mutex emit_mutex;
  std::size_t emitted = 0;
  std::exception_ptr failure;

  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= specs.size()) return;
      try {
        auto gw = gateways(specs[i], i);
        // Each session owns its clock so mock timestamps do not depend on scheduling.
        const Clock clock = options.deterministic_clock ? logical_clock() : Clock(llm::utc_timestamp);
        auto transcript = run_session(specs[i], *gw.chatbot, *gw.user, clock);
        std::lock_guard lock(emit_mutex);
        results[i] = std::move(transcript);
        while (emitted < results.size() && results[emitted]) {
          if (on_done) on_done(*results[emitted]);
          ++emitted;
        }
      } catch (...) {
        std::lock_guard lock(emit_mutex);
        if (!failure) failure = std::current_exception();
        next = specs.size();
        return;
      }
    }
  };

  const int count = std::clamp(options.workers, 1, static_cast<int>(std::max<std::size_t>(1, specs.size())));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < count; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<Transcript> out;
  out.reserve(results.size());
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

}  // namespace simeval::orchestrator
