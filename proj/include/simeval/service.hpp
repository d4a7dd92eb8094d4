#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>

#include "simeval/llm.hpp"
#include "simeval/orchestrator.hpp"
#include "simeval/pipeline.hpp"
#include "simeval/store.hpp"

namespace simeval::service {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::chrono::milliseconds live_chat_idle_timeout = std::chrono::minutes(30);
  bool persist_live_chats = false;
  int turn_limit = orchestrator::kDefaultTurnLimit;
  orchestrator::MarkerPolicy markers;
  llm::ModelParams chatbot_params;
  std::string cors_origin = "*";
};

/// HTTP API over one run directory.
///
///   GET  /sessions               sessions assigned to the caller
///   GET  /sessions/{id}          blinded transcript
///   GET  /assignments/{rater}    the caller's assignment
///   POST /ratings                submit one rating form
///   GET  /analysis/summary       counts, descriptives, adequacy
///   POST /chat                   open a live chat with the chatbot
///   POST /chat/{id}/message      send one message, get the reply
///   GET  /chat/{id}/state        phase state of a live chat
///
/// Rater endpoints need "Authorization: Bearer <token>" with a token from
/// the run's assignments. Errors are {"error": code, "message": text}.
class Service {
 public:
  using ChatbotFactory = std::function<llm::GatewayPtr()>;

  Service(store::RunStore& store, pipeline::Resources resources, ChatbotFactory chatbot, ServiceOptions options = {});
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the listening socket and returns the bound port. Throws IoError.
  int bind();
  /// Serves on the calling thread until stop().
  void listen();
  /// bind() plus listen() on a background thread.
  int start();
  void stop();

  /// Drops live chats idle for longer than the timeout; returns how many.
  std::size_t expire_idle_chats();
  std::size_t live_chat_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace simeval::service
