#include "simeval/openai_gateway.hpp"

#include <cstdlib>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "simeval/errors.hpp"

namespace simeval::llm {

using nlohmann::json;

namespace {

bool is_content_policy(const json& body) {
  if (!body.is_object() || !body.contains("error")) return false;
  const auto& err = body["error"];
  const auto code = err.value("code", json()).is_string() ? err["code"].get<std::string>() : "";
  const auto type = err.value("type", json()).is_string() ? err["type"].get<std::string>() : "";
  return code == "content_policy_violation" || code == "content_filter" ||
         type == "content_policy_violation";
}

}  // namespace

OpenAiGateway::OpenAiGateway(OpenAiEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_.base_url.empty()) throw ConfigError("endpoint base_url is empty");
}

ChatReply OpenAiGateway::complete(std::span<const ChatMessage> history,
                                  const ModelParams& params) {
  json messages = json::array();
  for (const auto& m : history) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  const json request{{"model", params.model_id},
                     {"temperature", params.temperature},
                     {"max_tokens", params.max_output_tokens},
                     {"messages", std::move(messages)}};

  httplib::Client client(endpoint_.base_url);
  const auto timeout = std::chrono::duration_cast<std::chrono::seconds>(params.request_timeout);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!endpoint_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
  }

  const auto started = std::chrono::steady_clock::now();
  auto res = client.Post(endpoint_.path, headers, request.dump(), "application/json");
  const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);
  if (!res) {
    throw TransportError(fmt::format("request to {} failed: {}", endpoint_.base_url,
                                     httplib::to_string(res.error())));
  }

  json body = json::parse(res->body, nullptr, false);
  if (res->status == 429 || res->status >= 500) {
    throw TransportError(fmt::format("provider returned HTTP {}", res->status));
  }
  if (res->status >= 400) {
    if (is_content_policy(body)) {
      throw RefusalError(body["error"].value("message", "content policy refusal"));
    }
    throw TransportError(fmt::format("provider returned HTTP {}: {}", res->status, res->body),
                         false);
  }
  if (body.is_discarded() || !body.contains("choices") || body["choices"].empty()) {
    throw TransportError("malformed completion response", false);
  }

  const auto& choice = body["choices"][0];
  const auto& message = choice.at("message");
  const auto finish = choice.value("finish_reason", json()).is_string()
                          ? choice["finish_reason"].get<std::string>()
                          : std::string{};
  if (message.contains("refusal") && message["refusal"].is_string()) {
    throw RefusalError(message["refusal"].get<std::string>());
  }
  if (finish == "content_filter") throw RefusalError("completion stopped by content filter");

  ChatReply reply;
  reply.message.role = Role::assistant;
  reply.message.content =
      message.value("content", json()).is_string() ? message["content"].get<std::string>() : "";
  reply.message.turn_index = static_cast<int>(history.size());
  reply.metadata.model_id = body.value("model", params.model_id);
  reply.metadata.temperature = params.temperature;
  reply.metadata.latency_ms = latency.count();
  reply.metadata.finish_reason = finish;
  if (body.contains("usage") && body["usage"].is_object()) {
    const auto& usage = body["usage"];
    if (usage.contains("prompt_tokens")) reply.metadata.prompt_tokens = usage["prompt_tokens"].get<int>();
    if (usage.contains("completion_tokens")) {
      reply.metadata.completion_tokens = usage["completion_tokens"].get<int>();
    }
  }
  return reply;
}

std::string api_key_from_env(const std::string& env_var) {
  const char* value = std::getenv(env_var.c_str());
  if (!value || !*value) throw ConfigError(fmt::format("environment variable {} is not set", env_var));
  return value;
}

}  // namespace simeval::llm
