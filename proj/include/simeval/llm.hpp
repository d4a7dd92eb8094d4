#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace simeval::llm {

enum class Role { system, assistant, user };

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);

struct ChatMessage {
  Role role = Role::user;
  std::string content;
  int turn_index = 0;
  std::string created_at;
};

struct ModelParams {
  std::string model_id = "gpt-4o-2024-08-06";
  double temperature = 1.0;
  int max_output_tokens = 256;
  std::chrono::milliseconds request_timeout{60'000};
};

/// Provenance recorded for every completion.
struct ResponseMetadata {
  std::string model_id;
  double temperature = 1.0;
  std::int64_t latency_ms = 0;
  std::optional<int> prompt_tokens;
  std::optional<int> completion_tokens;
  std::string finish_reason;
  int attempts = 1;
};

struct ChatReply {
  ChatMessage message;
  ResponseMetadata metadata;
};

/// Chat-completion endpoint. Implementations override `complete`; callers
/// use `chat`, which checks the history shape first.
///
/// Throws TransportError when the provider cannot produce an answer and
/// RefusalError when it declines to.
class ChatGateway {
 public:
  virtual ~ChatGateway() = default;

  ChatReply chat(std::span<const ChatMessage> history, const ModelParams& params);

 protected:
  virtual ChatReply complete(std::span<const ChatMessage> history, const ModelParams& params) = 0;
};

using GatewayPtr = std::shared_ptr<ChatGateway>;

/// Pops one scripted line per call. Lines starting with "!refuse" raise a
/// refusal, "!fail" a transport failure; an exhausted script is a transport
/// failure too.
class ScriptedGateway final : public ChatGateway {
 public:
  explicit ScriptedGateway(std::vector<std::string> lines);

  std::size_t remaining() const;
  std::size_t calls() const;

 protected:
  ChatReply complete(std::span<const ChatMessage> history, const ModelParams& params) override;

 private:
  mutable std::mutex mutex_;
  std::deque<std::string> lines_;
  std::size_t calls_ = 0;
};

GatewayPtr scripted_mock(std::vector<std::string> lines);

/// Delegates each reply to a callback; handy for stateful fakes.
class CallbackGateway final : public ChatGateway {
 public:
  using Responder = std::function<std::string(std::span<const ChatMessage>)>;
  explicit CallbackGateway(Responder responder) : responder_(std::move(responder)) {}

 protected:
  ChatReply complete(std::span<const ChatMessage> history, const ModelParams& params) override;

 private:
  Responder responder_;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_delay{500};
  double backoff_factor = 2.0;
  std::chrono::milliseconds max_delay{8'000};
};

/// Retries retryable transport failures with exponential backoff.
/// Refusals pass straight through.
class RetryingGateway final : public ChatGateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  RetryingGateway(GatewayPtr inner, RetryPolicy policy, Sleeper sleeper = {});

 protected:
  ChatReply complete(std::span<const ChatMessage> history, const ModelParams& params) override;

 private:
  GatewayPtr inner_;
  RetryPolicy policy_;
  Sleeper sleeper_;
};

/// Caps the number of requests in flight across every session sharing it.
class ConcurrencyLimitedGateway final : public ChatGateway {
 public:
  ConcurrencyLimitedGateway(GatewayPtr inner, int max_in_flight = 4);

 protected:
  ChatReply complete(std::span<const ChatMessage> history, const ModelParams& params) override;

 private:
  GatewayPtr inner_;
  std::counting_semaphore<1024> slots_;
};

nlohmann::json to_json(const ResponseMetadata& meta);
ResponseMetadata response_metadata_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const ModelParams& params);
ModelParams model_params_from_json(const nlohmann::json& doc, ModelParams defaults = {});

/// Current UTC time as ISO-8601 with milliseconds.
std::string utc_timestamp();

}  // namespace simeval::llm
