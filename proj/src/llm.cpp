#include "simeval/llm.hpp"

#include <algorithm>
#include <thread>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "simeval/errors.hpp"

namespace simeval::llm {

using nlohmann::json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::assistant: return "assistant";
    case Role::user: return "user";
  }
  return "user";
}

Role role_from_string(std::string_view text) {
  if (text == "system") return Role::system;
  if (text == "assistant") return Role::assistant;
  if (text == "user") return Role::user;
  throw ArgumentError(fmt::format("unknown role '{}'", text));
}

ChatReply ChatGateway::chat(std::span<const ChatMessage> history, const ModelParams& params) {
  if (history.empty() || history.front().role != Role::system) {
    throw ArgumentError("chat history must start with a system message");
  }
  const auto systems = std::count_if(history.begin(), history.end(),
                                     [](const ChatMessage& m) { return m.role == Role::system; });
  if (systems != 1) throw ArgumentError("chat history must contain exactly one system message");
  if (params.temperature < 0.0) throw ArgumentError("temperature must be >= 0");
  return complete(history, params);
}

ScriptedGateway::ScriptedGateway(std::vector<std::string> lines)
    : lines_(std::make_move_iterator(lines.begin()), std::make_move_iterator(lines.end())) {}

std::size_t ScriptedGateway::remaining() const {
  std::lock_guard lock(mutex_);
  return lines_.size();
}

std::size_t ScriptedGateway::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

ChatReply ScriptedGateway::complete(std::span<const ChatMessage> history,
                                    const ModelParams& params) {
  std::string line;
  {
    std::lock_guard lock(mutex_);
    ++calls_;
    if (lines_.empty()) throw TransportError("scripted mock exhausted", false);
    line = std::move(lines_.front());
    lines_.pop_front();
  }
  if (line.starts_with("!refuse")) throw RefusalError(line.size() > 8 ? line.substr(8) : "refused");
  if (line.starts_with("!fail")) throw TransportError(line.size() > 6 ? line.substr(6) : "failed");
  ChatReply reply;
  reply.message.role = Role::assistant;
  reply.message.content = std::move(line);
  reply.message.turn_index = static_cast<int>(history.size());
  reply.metadata.model_id = params.model_id;
  reply.metadata.temperature = params.temperature;
  reply.metadata.finish_reason = "stop";
  return reply;
}

GatewayPtr scripted_mock(std::vector<std::string> lines) {
  return std::make_shared<ScriptedGateway>(std::move(lines));
}

ChatReply CallbackGateway::complete(std::span<const ChatMessage> history,
                                    const ModelParams& params) {
  ChatReply reply;
  reply.message.role = Role::assistant;
  reply.message.content = responder_(history);
  reply.message.turn_index = static_cast<int>(history.size());
  reply.metadata.model_id = params.model_id;
  reply.metadata.temperature = params.temperature;
  reply.metadata.finish_reason = "stop";
  return reply;
}

RetryingGateway::RetryingGateway(GatewayPtr inner, RetryPolicy policy, Sleeper sleeper)
    : inner_(std::move(inner)), policy_(policy), sleeper_(std::move(sleeper)) {
  if (!inner_) throw ArgumentError("retrying gateway needs an inner gateway");
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

ChatReply RetryingGateway::complete(std::span<const ChatMessage> history,
                                    const ModelParams& params) {
  auto delay = policy_.initial_delay;
  for (int attempt = 0;; ++attempt) {
    try {
      auto reply = inner_->chat(history, params);
      reply.metadata.attempts = attempt + 1;
      return reply;
    } catch (const TransportError& e) {
      if (!e.retryable() || attempt >= policy_.max_retries) {
        throw TransportError(fmt::format("{} (after {} attempt(s))", e.what(), attempt + 1), false);
      }
    }
    sleeper_(delay);
    const auto next = std::chrono::duration<double, std::milli>(delay) * policy_.backoff_factor;
    delay = std::min(policy_.max_delay,
                     std::chrono::duration_cast<std::chrono::milliseconds>(next));
  }
}

ConcurrencyLimitedGateway::ConcurrencyLimitedGateway(GatewayPtr inner, int max_in_flight)
    : inner_(std::move(inner)), slots_(std::clamp(max_in_flight, 1, 1024)) {
  if (!inner_) throw ArgumentError("concurrency limiter needs an inner gateway");
}

ChatReply ConcurrencyLimitedGateway::complete(std::span<const ChatMessage> history,
                                              const ModelParams& params) {
  slots_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{slots_};
  return inner_->chat(history, params);
}

json to_json(const ResponseMetadata& meta) {
  json out{{"model_id", meta.model_id},
           {"temperature", meta.temperature},
           {"latency_ms", meta.latency_ms},
           {"finish_reason", meta.finish_reason},
           {"attempts", meta.attempts},
           {"prompt_tokens", nullptr},
           {"completion_tokens", nullptr}};
  if (meta.prompt_tokens) out["prompt_tokens"] = *meta.prompt_tokens;
  if (meta.completion_tokens) out["completion_tokens"] = *meta.completion_tokens;
  return out;
}

ResponseMetadata response_metadata_from_json(const json& doc) {
  ResponseMetadata m;
  m.model_id = doc.value("model_id", "");
  m.temperature = doc.value("temperature", 1.0);
  m.latency_ms = doc.value("latency_ms", std::int64_t{0});
  m.finish_reason = doc.value("finish_reason", "");
  m.attempts = doc.value("attempts", 1);
  if (doc.contains("prompt_tokens") && !doc["prompt_tokens"].is_null()) {
    m.prompt_tokens = doc["prompt_tokens"].get<int>();
  }
  if (doc.contains("completion_tokens") && !doc["completion_tokens"].is_null()) {
    m.completion_tokens = doc["completion_tokens"].get<int>();
  }
  return m;
}

json to_json(const ModelParams& params) {
  return json{{"model_id", params.model_id},
              {"temperature", params.temperature},
              {"max_output_tokens", params.max_output_tokens},
              {"request_timeout_ms", params.request_timeout.count()}};
}

ModelParams model_params_from_json(const json& doc, ModelParams p) {
  if (!doc.is_object()) throw ConfigError("model params must be an object");
  p.model_id = doc.value("model_id", p.model_id);
  p.temperature = doc.value("temperature", p.temperature);
  p.max_output_tokens = doc.value("max_output_tokens", p.max_output_tokens);
  p.request_timeout =
      std::chrono::milliseconds(doc.value("request_timeout_ms", p.request_timeout.count()));
  if (p.temperature < 0.0) throw ConfigError("temperature must be >= 0");
  return p;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()) % 1000;
  return fmt::format("{:%Y-%m-%dT%H:%M:%S}.{:03d}Z", fmt::gmtime(std::chrono::system_clock::to_time_t(now)),
                     static_cast<int>(ms.count()));
}

}  // namespace simeval::llm
