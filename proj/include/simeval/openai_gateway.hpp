#pragma once

#include <string>

#include "simeval/llm.hpp"

namespace simeval::llm {

struct OpenAiEndpoint {
  std::string base_url = "https://api.openai.com";  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string api_key;
};

/// Chat completions over HTTP(S) against an OpenAI-compatible endpoint.
/// 429 and 5xx responses and connection failures are retryable transport
/// errors; other 4xx are not. Content-policy rejections become RefusalError.
class OpenAiGateway final : public ChatGateway {
 public:
  explicit OpenAiGateway(OpenAiEndpoint endpoint);

 protected:
  ChatReply complete(std::span<const ChatMessage> history, const ModelParams& params) override;

 private:
  OpenAiEndpoint endpoint_;
};

/// Reads the credential from `env_var`; throws ConfigError when unset.
std::string api_key_from_env(const std::string& env_var);

}  // namespace simeval::llm
