#include <atomic>
#include <thread>

#include <gtest/gtest.h>

#include "simeval/session_runner.hpp"
#include "support/fixtures.hpp"

using namespace simeval;
using namespace simeval::orchestrator;

namespace {

std::vector<SessionSpec> specs(int n) {
  std::vector<SessionSpec> out;
  for (int i = 1; i <= n; ++i) {
    SessionSpec s;
    s.session_id = fixtures::session_id(i);
    s.user = fixtures::accepted_user(fmt::format("U{:04d}", i));
    s.chatbot_prompt = "You are a coach.";
    s.first_message = "Hello!";
    s.seed = static_cast<std::uint64_t>(i);
    out.push_back(std::move(s));
  }
  return out;
}

// Session i stops after i % 4 + 1 scripted chatbot turns, with a jittered user.
GatewayProvider scripted() {
  return [](const SessionSpec&, std::size_t index) {
    std::vector<std::string> lines;
    for (std::size_t k = 0; k < index % 4; ++k) lines.push_back(fmt::format("Line {}", k));
    lines.push_back("Done [STOP]");
    auto user = std::make_shared<llm::CallbackGateway>([index](auto) {
      std::this_thread::sleep_for(std::chrono::microseconds(200 * ((index * 7) % 5)));
      return std::string("ok");
    });
    return SessionGateways{llm::scripted_mock(lines), user};
  };
}

}  // namespace

TEST(RunSessions, CallbackSeesInputOrder) {
  const auto input = specs(12);
  std::vector<std::string> seen;
  std::atomic<int> concurrent{0};
  bool overlapped = false;
  const auto out = run_sessions(input, scripted(), {4, true}, [&](const Transcript& t) {
    if (++concurrent > 1) overlapped = true;
    seen.push_back(t.session_id);
    --concurrent;
  });
  ASSERT_EQ(out.size(), 12u);
  EXPECT_FALSE(overlapped);
  for (int i = 0; i < 12; ++i) {
    EXPECT_EQ(out[i].session_id, input[i].session_id);
    EXPECT_EQ(seen[i], input[i].session_id);
    EXPECT_EQ(out[i].termination, Termination::stop_marker);
    EXPECT_EQ(out[i].turn_count, i % 4 + 2);
  }
}

TEST(RunSessions, DeterministicAcrossWorkerCounts) {
  const auto input = specs(9);
  const auto serial = run_sessions(input, scripted(), {1, true});
  const auto parallel = run_sessions(input, scripted(), {4, true});
  for (std::size_t i = 0; i < input.size(); ++i) {
    EXPECT_EQ(transcript_hash(serial[i]), transcript_hash(parallel[i]));
    EXPECT_EQ(to_json(serial[i]), to_json(parallel[i]));
  }
}

TEST(RunSessions, EmptyBatch) {
  EXPECT_TRUE(run_sessions({}, scripted(), {}).empty());
}
