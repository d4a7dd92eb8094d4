#include "simeval/service.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "simeval/analysis.hpp"
#include "simeval/assessment.hpp"
#include "simeval/errors.hpp"

namespace simeval::service {

using nlohmann::json;
using SteadyClock = std::chrono::steady_clock;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
  send_json(res, status, json{{"error", code}, {"message", message}});
}

json violations_json(const std::vector<assessment::Violation>& violations) {
  json out = json::array();
  for (const auto& v : violations) out.push_back({{"field", v.field}, {"message", v.message}});
  return out;
}

json state_json(const orchestrator::SessionState& s) {
  json anomalies = json::array();
  for (const auto& a : s.anomalies) {
    anomalies.push_back(
        {{"turn_index", a.turn_index}, {"marker", a.marker}, {"phase_at_time", a.phase_at_time}, {"reason", a.reason}});
  }
  return json{{"current_phase", s.current_phase},
              {"phases_entered", std::vector<int>(s.phases_entered.begin(), s.phases_entered.end())},
              {"turn_count", s.turn_count},
              {"termination", orchestrator::to_string(s.termination)},
              {"ended", s.termination != orchestrator::Termination::running},
              {"anomalies", anomalies}};
}

json chat_message_json(const orchestrator::TranscriptMessage& m) {
  return json{{"speaker", m.speaker}, {"content", m.content}, {"turn_index", m.turn_index}, {"markers", m.markers}};
}

std::string random_id() {
  std::random_device rd;
  return fmt::format("{:08x}{:08x}", rd(), rd());
}

}  // namespace

struct LiveChat {
  std::mutex mutex;
  orchestrator::LiveSession session;
  llm::GatewayPtr gateway;
  SteadyClock::time_point last_used;
  bool persisted = false;

  LiveChat(orchestrator::LiveSession s, llm::GatewayPtr g)
      : session(std::move(s)), gateway(std::move(g)), last_used(SteadyClock::now()) {}
};

struct Service::Impl {
  store::RunStore& store;
  pipeline::Resources resources;
  ChatbotFactory chatbot;
  ServiceOptions options;
  httplib::Server server;
  std::jthread thread;
  int bound_port = -1;

  mutable std::mutex chats_mutex;
  std::map<std::string, std::shared_ptr<LiveChat>> chats;

  Impl(store::RunStore& s, pipeline::Resources r, ChatbotFactory c, ServiceOptions o)
      : store(s), resources(std::move(r)), chatbot(std::move(c)), options(std::move(o)) {
    routes();
  }

  std::optional<assessment::Assignment> authenticate(const httplib::Request& req, httplib::Response& res) {
    const auto header = req.get_header_value("Authorization");
    constexpr std::string_view prefix = "Bearer ";
    if (header.rfind(prefix, 0) != 0) {
      send_error(res, 401, "unauthorized", "missing bearer token");
      return std::nullopt;
    }
    auto assignment = store.assignment_for_token(header.substr(prefix.size()));
    if (!assignment) send_error(res, 401, "unauthorized", "unknown token");
    return assignment;
  }

  void persist(LiveChat& chat) {
    if (!options.persist_live_chats || chat.persisted) return;
    auto t = chat.session.transcript("live");
    t.session_id = "LIVE-" + chat.session.id();
    try {
      store.save_transcript(t);
      chat.persisted = true;
    } catch (const ConflictError&) {
      chat.persisted = true;
    }
  }

  std::shared_ptr<LiveChat> find_chat(const std::string& id) {
    expire();
    std::lock_guard lock(chats_mutex);
    auto it = chats.find(id);
    return it == chats.end() ? nullptr : it->second;
  }

  std::size_t expire() {
    std::vector<std::shared_ptr<LiveChat>> expired;
    {
      std::lock_guard lock(chats_mutex);
      const auto now = SteadyClock::now();
      for (auto it = chats.begin(); it != chats.end();) {
        std::unique_lock chat_lock(it->second->mutex, std::try_to_lock);
        if (chat_lock.owns_lock() && now - it->second->last_used > options.live_chat_idle_timeout) {
          expired.push_back(it->second);
          it = chats.erase(it);
        } else {
          ++it;
        }
      }
    }
    for (auto& chat : expired) {
      std::lock_guard lock(chat->mutex);
      persist(*chat);
    }
    return expired.size();
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin},
                                {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const NotFoundError& e) {
        send_error(res, 404, e.code(), e.what());
      } catch (const ConflictError& e) {
        send_error(res, 409, e.code(), e.what());
      } catch (const ArgumentError& e) {
        send_error(res, 400, e.code(), e.what());
      } catch (const EmptyOutputError& e) {
        send_error(res, 404, e.code(), e.what());
      } catch (const Error& e) {
        send_error(res, 500, e.code(), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal_error", e.what());
      }
    });

    server.Get("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      auto who = authenticate(req, res);
      if (!who) return;
      json list = json::array();
      for (const auto& id : who->session_ids) {
        const auto t = store.load_transcript(id);
        list.push_back({{"session_id", id}, {"turn_count", t.turn_count}, {"rated", store.is_rated(id)}});
      }
      send_json(res, 200, json{{"rater_id", who->rater_id}, {"sessions", list}});
    });

    server.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto who = authenticate(req, res);
      if (!who) return;
      const std::string id = req.matches[1];
      if (!store.has_session(id)) return send_error(res, 404, "not_found", "session " + id + " not found");
      if (std::find(who->session_ids.begin(), who->session_ids.end(), id) == who->session_ids.end()) {
        return send_error(res, 403, "forbidden", "session " + id + " is not assigned to " + who->rater_id);
      }
      send_json(res, 200, orchestrator::rater_transcript_payload(store.load_transcript(id)));
    });

    server.Get(R"(/assignments/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto who = authenticate(req, res);
      if (!who) return;
      const std::string rater = req.matches[1];
      if (rater != who->rater_id) {
        const auto all = store.assignments();
        const bool known = std::any_of(all.begin(), all.end(), [&](const auto& a) { return a.rater_id == rater; });
        if (!known) return send_error(res, 404, "not_found", "rater " + rater + " not found");
        return send_error(res, 403, "forbidden", "token does not belong to " + rater);
      }
      json rated = json::array();
      for (const auto& id : who->session_ids) {
        if (store.is_rated(id)) rated.push_back(id);
      }
      send_json(res, 200, json{{"rater_id", who->rater_id}, {"session_ids", who->session_ids}, {"rated", rated}});
    });

    server.Post("/ratings", [this](const httplib::Request& req, httplib::Response& res) {
      auto who = authenticate(req, res);
      if (!who) return;
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        return send_error(res, 400, "invalid_json", e.what());
      }
      std::vector<assessment::Violation> violations;
      auto form = assessment::rating_from_json(body, violations);
      if (form.rater_id.empty()) form.rater_id = who->rater_id;
      if (form.rater_id != who->rater_id) {
        return send_error(res, 403, "forbidden", "rater_id does not match the token");
      }
      for (const auto& v : assessment::validate_rating(form)) {
        const bool dup = std::any_of(violations.begin(), violations.end(),
                                     [&](const assessment::Violation& p) { return p.field == v.field; });
        if (!dup) violations.push_back(v);
      }
      if (!violations.empty()) {
        return send_json(res, 400, json{{"error", "validation"}, {"violations", violations_json(violations)}});
      }
      const auto result = assessment::submit_rating(store, form);
      switch (result.outcome) {
        case assessment::SubmitOutcome::accepted:
          return send_json(res, 201, json{{"session_id", form.session_id}, {"status", "accepted"}});
        case assessment::SubmitOutcome::invalid:
          return send_json(res, 400, json{{"error", "validation"}, {"violations", violations_json(result.violations)}});
        case assessment::SubmitOutcome::unknown_session:
          return send_error(res, 404, "not_found", result.violations.front().message);
        case assessment::SubmitOutcome::unassigned:
          return send_error(res, 403, "forbidden", result.violations.front().message);
        case assessment::SubmitOutcome::duplicate:
          return send_error(res, 409, "conflict", result.violations.front().message);
      }
    });

    server.Get("/analysis/summary", [this](const httplib::Request&, httplib::Response& res) {
      const auto counts = store.recompute_counts();
      json body{{"run_id", store.run_id()},
                {"counts",
                 {{"configs", counts.configs},
                  {"screened", counts.screened},
                  {"accepted", counts.accepted},
                  {"sessions", counts.sessions},
                  {"ratings", counts.ratings}}}};
      const auto ratings = store.ratings();
      if (ratings.empty()) {
        body["tables"] = nullptr;
        body["message"] = "no ratings ingested";
      } else {
        analysis::ReportOptions opts;
        opts.tables = {"descriptives", "adequacy"};
        const auto sessions = analysis::join_ratings(ratings, {}, {});
        body["tables"] = analysis::build_report(sessions, {}, opts)["tables"];
      }
      send_json(res, 200, body);
    });

    server.Post("/chat", [this](const httplib::Request& req, httplib::Response& res) {
      auto markers = options.markers;
      if (!req.body.empty()) {
        try {
          const auto body = json::parse(req.body);
          markers.strict = body.value("strict_markers", markers.strict);
        } catch (const json::exception& e) {
          return send_error(res, 400, "invalid_json", e.what());
        }
      }
      expire();
      const auto id = random_id();
      orchestrator::LiveSession session(id, resources.system_prompt, resources.prompt.first_message,
                                        options.chatbot_params, options.turn_limit, markers);
      auto chat = std::make_shared<LiveChat>(std::move(session), chatbot());
      json body{{"chat_id", id},
                {"message", chat_message_json(chat->session.messages().front())},
                {"state", state_json(chat->session.state())}};
      {
        std::lock_guard lock(chats_mutex);
        chats.emplace(id, std::move(chat));
      }
      send_json(res, 201, body);
    });

    server.Post(R"(/chat/([^/]+)/message)", [this](const httplib::Request& req, httplib::Response& res) {
      auto chat = find_chat(req.matches[1]);
      if (!chat) return send_error(res, 404, "not_found", "live chat not found");
      std::string content;
      try {
        const auto body = json::parse(req.body);
        content = body.at("content").get<std::string>();
      } catch (const json::exception&) {
        return send_error(res, 400, "invalid_request", "body must be {\"content\": string}");
      }
      std::lock_guard lock(chat->mutex);
      chat->last_used = SteadyClock::now();
      std::optional<orchestrator::TranscriptMessage> reply;
      try {
        reply = chat->session.send(content, *chat->gateway);
      } catch (const ConflictError& e) {
        return send_error(res, 409, e.code(), e.what());
      } catch (const Error& e) {
        return send_error(res, 502, "gateway_error", e.what());
      }
      if (chat->session.state().termination != orchestrator::Termination::running) persist(*chat);
      send_json(res, 200,
                json{{"reply", reply ? chat_message_json(*reply) : json(nullptr)},
                     {"state", state_json(chat->session.state())}});
    });

    server.Get(R"(/chat/([^/]+)/state)", [this](const httplib::Request& req, httplib::Response& res) {
      auto chat = find_chat(req.matches[1]);
      if (!chat) return send_error(res, 404, "not_found", "live chat not found");
      std::lock_guard lock(chat->mutex);
      send_json(res, 200, json{{"chat_id", chat->session.id()}, {"state", state_json(chat->session.state())}});
    });
  }
};

Service::Service(store::RunStore& store, pipeline::Resources resources, ChatbotFactory chatbot, ServiceOptions options)
    : impl_(std::make_unique<Impl>(store, std::move(resources), std::move(chatbot), std::move(options))) {}

Service::~Service() { stop(); }

int Service::bind() {
  if (impl_->bound_port > 0) return impl_->bound_port;
  const auto& o = impl_->options;
  const int port = o.port == 0 ? impl_->server.bind_to_any_port(o.host) : impl_->server.bind_to_port(o.host, o.port)
                                                                            ? o.port
                                                                            : -1;
  if (port <= 0) throw IoError(fmt::format("cannot bind {}:{}", o.host, o.port));
  impl_->bound_port = port;
  return port;
}

void Service::listen() {
  bind();
  impl_->server.listen_after_bind();
}

int Service::start() {
  const int port = bind();
  impl_->thread = std::jthread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::size_t Service::expire_idle_chats() { return impl_->expire(); }

std::size_t Service::live_chat_count() const {
  std::lock_guard lock(impl_->chats_mutex);
  return impl_->chats.size();
}

}  // namespace simeval::service
