#include <atomic>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "simeval/errors.hpp"
#include "simeval/llm.hpp"
#include "simeval/openai_gateway.hpp"

using namespace simeval;
using namespace simeval::llm;
using nlohmann::json;

namespace {

std::vector<ChatMessage> history() { return {{Role::system, "You are terse.", 0, ""}, {Role::user, "Hi", 1, ""}}; }

/// Local stand-in for a chat-completions endpoint.
class FakeProvider {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  explicit FakeProvider(Handler h) {
    server_.Post("/v1/chat/completions", [this, h](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      last_body = req.body;
      last_auth = req.get_header_value("Authorization");
      h(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeProvider() {
    server_.stop();
    thread_.join();
  }

  OpenAiEndpoint endpoint() const { return {"http://127.0.0.1:" + std::to_string(port_), "/v1/chat/completions", "sk-test"}; }

  std::atomic<int> requests{0};
  std::string last_body;
  std::string last_auth;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

void completion(httplib::Response& res, const std::string& content, const std::string& finish = "stop") {
  json body{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", finish}}}},
            {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}},
            {"model", "gpt-4o-2024-08-06"}};
  res.set_content(body.dump(), "application/json");
}

}  // namespace

TEST(ScriptedGateway, PopsLinesThenFails) {
  ScriptedGateway gw({"hello"});
  ModelParams p;
  const auto r = gw.chat(history(), p);
  EXPECT_EQ(r.message.content, "hello");
  EXPECT_EQ(r.message.role, Role::assistant);
  EXPECT_DOUBLE_EQ(r.metadata.temperature, 1.0);
  EXPECT_EQ(r.metadata.model_id, "gpt-4o-2024-08-06");
  EXPECT_THROW(gw.chat(history(), p), TransportError);
  ScriptedGateway empty({});
  EXPECT_THROW(empty.chat(history(), p), TransportError);
}

TEST(ScriptedGateway, RefusalIsDistinct) {
  ScriptedGateway gw({"!refuse policy"});
  EXPECT_THROW(gw.chat(history(), {}), RefusalError);
}

TEST(ChatGateway, HistoryMustStartWithOneSystemMessage) {
  ScriptedGateway gw({"a", "b"});
  std::vector<ChatMessage> none{{Role::user, "Hi", 0, ""}};
  EXPECT_THROW(gw.chat(none, {}), ArgumentError);
  std::vector<ChatMessage> two{{Role::system, "a", 0, ""}, {Role::system, "b", 0, ""}};
  EXPECT_THROW(gw.chat(two, {}), ArgumentError);
}

TEST(RetryingGateway, BacksOffExponentiallyThenGivesUp) {
  auto inner = scripted_mock({"!fail a", "!fail b", "ok"});
  std::vector<std::chrono::milliseconds> sleeps;
  RetryingGateway gw(inner, {3, std::chrono::milliseconds(100), 2.0, std::chrono::milliseconds(8000)},
                     [&](auto d) { sleeps.push_back(d); });
  const auto r = gw.chat(history(), {});
  EXPECT_EQ(r.message.content, "ok");
  EXPECT_EQ(r.metadata.attempts, 3);
  EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100), std::chrono::milliseconds(200)}));

  RetryingGateway exhausted(scripted_mock({"!fail", "!fail", "!fail", "!fail", "ok"}), {3}, [](auto) {});
  EXPECT_THROW(exhausted.chat(history(), {}), TransportError);

  RetryingGateway refusal(scripted_mock({"!refuse no", "ok"}), {3}, [](auto) {});
  EXPECT_THROW(refusal.chat(history(), {}), RefusalError);
}

TEST(ConcurrencyLimitedGateway, CapsRequestsInFlight) {
  std::atomic<int> in_flight{0}, peak{0};
  auto inner = std::make_shared<CallbackGateway>([&](auto) {
    const int now = ++in_flight;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --in_flight;
    return std::string("x");
  });
  ConcurrencyLimitedGateway gw(inner, 2);
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) threads.emplace_back([&] { gw.chat(history(), {}); });
  for (auto& t : threads) t.join();
  EXPECT_LE(peak.load(), 2);
  EXPECT_GE(peak.load(), 1);
}

TEST(OpenAiGateway, SendsRequestAndRecordsMetadata) {
  FakeProvider fake([](const httplib::Request&, httplib::Response& res) { completion(res, "Hello there"); });
  OpenAiGateway gw(fake.endpoint());
  ModelParams p;
  p.temperature = 1.0;
  const auto r = gw.chat(history(), p);
  EXPECT_EQ(r.message.content, "Hello there");
  EXPECT_EQ(r.metadata.prompt_tokens, 12);
  EXPECT_EQ(r.metadata.completion_tokens, 3);
  EXPECT_DOUBLE_EQ(r.metadata.temperature, 1.0);
  EXPECT_EQ(fake.last_auth, "Bearer sk-test");
  const auto body = json::parse(fake.last_body);
  EXPECT_EQ(body["model"], "gpt-4o-2024-08-06");
  EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 1.0);
  ASSERT_EQ(body["messages"].size(), 2u);
  EXPECT_EQ(body["messages"][0]["role"], "system");
}

TEST(OpenAiGateway, ServerErrorsAreRetryable) {
  FakeProvider fake([](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  OpenAiGateway gw(fake.endpoint());
  try {
    gw.chat(history(), {});
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_TRUE(e.retryable());
  }
  RetryingGateway retrying(std::make_shared<OpenAiGateway>(fake.endpoint()), {2}, [](auto) {});
  EXPECT_THROW(retrying.chat(history(), {}), TransportError);
  EXPECT_EQ(fake.requests.load(), 1 + 3);
}

TEST(OpenAiGateway, ClientErrorsAreNotRetryable) {
  FakeProvider fake([](const httplib::Request&, httplib::Response& res) {
    res.status = 401;
    res.set_content(R"({"error":{"message":"bad key","code":"invalid_api_key"}})", "application/json");
  });
  OpenAiGateway gw(fake.endpoint());
  try {
    gw.chat(history(), {});
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_FALSE(e.retryable());
  }
}

TEST(OpenAiGateway, ContentPolicyBecomesRefusal) {
  FakeProvider filtered([](const httplib::Request&, httplib::Response& res) { completion(res, "", "content_filter"); });
  EXPECT_THROW(OpenAiGateway(filtered.endpoint()).chat(history(), {}), RefusalError);
  FakeProvider rejected([](const httplib::Request&, httplib::Response& res) {
    res.status = 400;
    res.set_content(R"({"error":{"message":"flagged","code":"content_policy_violation"}})", "application/json");
  });
  EXPECT_THROW(OpenAiGateway(rejected.endpoint()).chat(history(), {}), RefusalError);
}

TEST(OpenAiGateway, UnreachableHostIsTransportError) {
  OpenAiGateway gw({"http://127.0.0.1:1", "/v1/chat/completions", "k"});
  ModelParams p;
  p.request_timeout = std::chrono::milliseconds(500);
  EXPECT_THROW(gw.chat(history(), p), TransportError);
}

TEST(Credentials, MissingEnvironmentVariableIsConfigError) {
  ::unsetenv("SIMEVAL_TEST_MISSING_KEY");
  EXPECT_THROW(api_key_from_env("SIMEVAL_TEST_MISSING_KEY"), ConfigError);
  ::setenv("SIMEVAL_TEST_KEY", "abc", 1);
  EXPECT_EQ(api_key_from_env("SIMEVAL_TEST_KEY"), "abc");
}

TEST(Metadata, JsonRoundTrip) {
  ResponseMetadata m;
  m.model_id = "m";
  m.latency_ms = 42;
  m.prompt_tokens = 5;
  m.finish_reason = "stop";
  m.attempts = 2;
  const auto back = response_metadata_from_json(to_json(m));
  EXPECT_EQ(back.model_id, "m");
  EXPECT_EQ(back.latency_ms, 42);
  EXPECT_EQ(back.prompt_tokens, 5);
  EXPECT_EQ(back.completion_tokens, std::nullopt);
  EXPECT_EQ(back.attempts, 2);
}
