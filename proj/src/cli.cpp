#include "simeval/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "simeval/analysis.hpp"
#include "simeval/errors.hpp"
#include "simeval/pipeline.hpp"
#include "simeval/run_config.hpp"
#include "simeval/service.hpp"

namespace simeval {

using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::string run;
  std::optional<std::uint64_t> seed;
  std::string mock;
  std::optional<bool> strict_markers;
  std::string runs_dir;
  std::optional<std::size_t> n;
  std::optional<int> raters;
  int port = 8080;
  std::string host = "127.0.0.1";
  std::vector<std::string> tables;
  std::optional<int> bootstrap;
  std::optional<int> turn_limit;
  std::string out_dir;
  std::string ratings_file;
};

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << body;
  if (!f) throw IoError("cannot write " + path.string());
}

class Commands {
 public:
  Commands(const Flags& flags, std::istream& in, std::ostream& out) : f_(flags), in_(in), out_(out) {
    config_ = f_.config.empty() ? config::RunConfig{} : config::load_run_config(f_.config);
    if (f_.seed) config_.seed = *f_.seed;
    if (f_.strict_markers) config_.strict_markers = *f_.strict_markers;
    if (f_.turn_limit) config_.turn_limit = *f_.turn_limit;
    if (f_.bootstrap) config_.bootstrap_reps = *f_.bootstrap;
    if (f_.raters) config_.raters = *f_.raters;
    if (!f_.runs_dir.empty()) config_.output_dir = f_.runs_dir;
    if (f_.turn_limit && *f_.turn_limit < 1) throw ArgumentError("--turn-limit must be at least 1");
    if (f_.bootstrap && *f_.bootstrap < 0) throw ArgumentError("--bootstrap must be non-negative");
  }

  void personas() {
    const auto resources = pipeline::load_resources(config_);
    if (f_.run.empty()) {
      const auto configs = persona::enumerate_configs(resources.matrix.vignettes, resources.matrix.dimensions);
      json body{{"configs", configs.size()}};
      if (f_.n) {
        auto s = persona::stratified_sample(configs, *f_.n, config_.seed, config_.sample_slack);
        json keys = json::array();
        for (const auto& c : s.configs) keys.push_back(c.key());
        body["sample"] = keys;
        body["slack_used"] = s.slack_used;
      }
      out_ << body.dump(2) << '\n';
      return;
    }
    auto& s = open_store();
    const auto r = pipeline::create_personas(s, resources, config_, f_.n);
    pipeline::update_manifest(s, config_, resources);
    out_ << json{{"run_id", s.run_id()}, {"configs", r.configs}, {"users", r.written}, {"slack_used", r.slack_used}}
                .dump(2)
         << '\n';
  }

  void screen() {
    const auto resources = pipeline::load_resources(config_);
    auto& s = open_store();
    if (s.users().empty()) pipeline::create_personas(s, resources, config_, std::nullopt);
    const auto r = pipeline::screen_pending(s, resources, config_, gateways());
    pipeline::update_manifest(s, config_, resources);
    out_ << json{{"run_id", s.run_id()}, {"screened", r.screened}, {"accepted", r.accepted}, {"rejected", r.rejected}}
                .dump(2)
         << '\n';
  }

  void run() {
    const auto resources = pipeline::load_resources(config_);
    auto& s = open_store();
    const std::size_t n = f_.n.value_or(static_cast<std::size_t>(config_.sample_size));
    const auto r = pipeline::run_study_sessions(s, resources, config_, gateways(), n);
    out_ << json{{"run_id", s.run_id()},
                 {"sessions", r.sessions},
                 {"terminations", r.terminations},
                 {"slack_used", r.slack_used},
                 {"transcript_set_hash", r.transcript_set_hash}}
                .dump(2)
         << '\n';
  }

  void assign() {
    auto& s = open_store();
    const auto assignments = pipeline::assign_raters(s, config_.raters, config_.seed);
    json list = json::array();
    for (const auto& a : assignments) list.push_back(assessment::to_json(a));
    out_ << json{{"run_id", s.run_id()}, {"assignments", list}}.dump(2) << '\n';
  }

  bool ingest() {
    auto& s = open_store();
    const auto report = assessment::ingest_ratings_file(s, f_.ratings_file);
    pipeline::update_manifest(s, config_, pipeline::load_resources(config_));
    json rejected = json::array();
    for (const auto& r : report.rejected) {
      json v = json::array();
      for (const auto& x : r.violations) v.push_back({{"field", x.field}, {"message", x.message}});
      rejected.push_back({{"line", r.line}, {"session_id", r.session_id}, {"kind", r.kind}, {"violations", v}});
    }
    out_ << json{{"run_id", s.run_id()}, {"ingested", report.ingested}, {"rejected", rejected}}.dump(2) << '\n';
    return report.clean();
  }

  void analyze() {
    const auto resources = pipeline::load_resources(config_);
    auto& s = open_store();
    analysis::ReportOptions options;
    options.tables = {f_.tables.begin(), f_.tables.end()};
    options.reml.bootstrap_reps = config_.bootstrap_reps;
    options.reml.seed = config_.seed;
    const auto report = pipeline::analyze_run(s, resources, options);
    const auto dir = output_dir(s);
    write_file(dir / "report.json", report.dump(2) + "\n");
    write_file(dir / "report.txt", analysis::render_report_text(report));
    out_ << json{{"run_id", s.run_id()},
                 {"report", (dir / "report.json").string()},
                 {"text", (dir / "report.txt").string()},
                 {"tables", report["tables"].size()}}
                .dump(2)
         << '\n';
  }

  void export_heatmap() {
    auto& s = open_store();
    const auto heatmap = analysis::export_heatmap(s.ratings(), s.session_ids());
    const auto paths = analysis::write_heatmap(heatmap, output_dir(s));
    out_ << json{{"run_id", s.run_id()},
                 {"rows", heatmap.session_ids.size()},
                 {"excluded", heatmap.excluded},
                 {"files", {paths[0].string(), paths[1].string()}}}
                .dump(2)
         << '\n';
  }

  void serve() {
    auto resources = pipeline::load_resources(config_);
    auto& s = open_store();
    service::ServiceOptions options;
    options.host = f_.host;
    options.port = f_.port;
    options.live_chat_idle_timeout = std::chrono::minutes(config_.live_chat_idle_minutes);
    options.persist_live_chats = config_.persist_live_chats;
    options.turn_limit = config_.turn_limit;
    options.markers = {config_.strict_markers, config_.marker_mode};
    options.chatbot_params = config_.chatbot;
    service::Service svc(s, std::move(resources), gateways().chatbot, options);
    const int port = svc.bind();
    out_ << json{{"listening", fmt::format("http://{}:{}", f_.host, port)}}.dump() << std::endl;
    svc.listen();
  }

  void chat() {
    const auto resources = pipeline::load_resources(config_);
    auto gw = gateways().chatbot();
    orchestrator::LiveSession session("terminal", resources.system_prompt, resources.prompt.first_message,
                                      config_.chatbot, config_.turn_limit,
                                      {config_.strict_markers, config_.marker_mode});
    auto show_state = [&] {
      const auto& st = session.state();
      out_ << fmt::format("[phase {} | turn {} | {}]\n", st.current_phase, st.turn_count,
                          orchestrator::to_string(st.termination));
    };
    out_ << "chatbot: " << session.messages().front().content << '\n';
    show_state();
    for (std::string line; session.state().termination == orchestrator::Termination::running;) {
      out_ << "you: " << std::flush;
      if (!std::getline(in_, line)) break;
      if (line == "/quit") break;
      auto reply = session.send(line, *gw);
      if (reply) out_ << "chatbot: " << reply->content << '\n';
      show_state();
    }
  }

 private:
  store::RunStore& open_store() {
    if (f_.run.empty()) throw UsageError("--run is required for this command");
    if (!store_) store_ = std::make_unique<store::RunStore>(config_.output_dir, f_.run);
    return *store_;
  }

  pipeline::GatewayFactory gateways() const {
    if (!f_.mock.empty()) return pipeline::mock_gateways(pipeline::load_mock_script(f_.mock));
    return pipeline::live_gateways(config_);
  }

  std::filesystem::path output_dir(const store::RunStore& s) const {
    std::filesystem::path dir = f_.out_dir.empty() ? s.directory() / "analysis" : std::filesystem::path(f_.out_dir);
    std::filesystem::create_directories(dir);
    return dir;
  }

  const Flags& f_;
  std::istream& in_;
  std::ostream& out_;
  config::RunConfig config_;
  std::unique_ptr<store::RunStore> store_;
};

void print_error(std::ostream& err, std::string_view code, std::string_view message) {
  err << "error: " << json{{"code", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return run_cli(args, std::cin, out, err);
}

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Evaluation harness for protocol-driven chatbots", "simeval"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--run", f.run, "Run identifier under the runs directory");
  app.add_option("--runs-dir", f.runs_dir, "Directory holding run directories");
  app.add_option("--seed", f.seed, "Root seed for sampling and assignment");
  app.add_option("--mock", f.mock, "Scripted mock conversation file instead of the live provider")
      ->check(CLI::ExistingFile);
  app.add_flag("--strict-markers,!--no-strict-markers", f.strict_markers, "Accept only the next phase marker");

  auto* personas = app.add_subcommand("personas", "Enumerate or sample artificial-user configurations");
  personas->add_option("--n", f.n, "Stratified sample size")->check(CLI::PositiveNumber);
  auto* screen = app.add_subcommand("screen", "Administer the PHQ-9 to pending users");
  auto* run = app.add_subcommand("run", "Run simulated sessions");
  run->add_option("--n", f.n, "Number of sessions")->check(CLI::PositiveNumber);
  run->add_option("--turn-limit", f.turn_limit, "Maximum chatbot turns per session");
  auto* assign = app.add_subcommand("assign", "Assign sessions to raters");
  assign->add_option("--raters", f.raters, "Number of raters")->check(CLI::PositiveNumber);
  auto* ingest = app.add_subcommand("ingest", "Ingest a ratings CSV file");
  ingest->add_option("file", f.ratings_file, "Ratings file")->required()->check(CLI::ExistingFile);
  auto* analyze = app.add_subcommand("analyze", "Write the analysis report");
  analyze->add_option("--tables", f.tables, "Table families: descriptives, adequacy, variance, comparisons")
      ->delimiter(',');
  analyze->add_option("--bootstrap", f.bootstrap, "Bootstrap replicates for variance intervals");
  analyze->add_option("--out", f.out_dir, "Output directory (default: <run>/analysis)");
  auto* exp = app.add_subcommand("export", "Write heatmap matrices");
  exp->add_option("--out", f.out_dir, "Output directory (default: <run>/analysis)");
  auto* serve = app.add_subcommand("serve", "Serve the rater and live-chat HTTP API");
  serve->add_option("--port", f.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", f.host, "Bind address");
  auto* chat = app.add_subcommand("chat", "Chat with the chatbot in the terminal");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage_error", e.what());
    return 2;
  }

  try {
    Commands commands(f, in, out);
    if (personas->parsed()) commands.personas();
    else if (screen->parsed()) commands.screen();
    else if (run->parsed()) commands.run();
    else if (assign->parsed()) commands.assign();
    else if (ingest->parsed()) {
      if (!commands.ingest()) {
        print_error(err, "rejected_rows", "some rating rows were rejected; see the report on stdout");
        return 1;
      }
    } else if (analyze->parsed()) commands.analyze();
    else if (exp->parsed()) commands.export_heatmap();
    else if (serve->parsed()) commands.serve();
    else if (chat->parsed()) commands.chat();
  } catch (const UsageError& e) {
    print_error(err, e.code(), e.what());
    return 2;
  } catch (const Error& e) {
    print_error(err, e.code(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error(err, "internal_error", e.what());
    return 1;
  }
  return 0;
}

}  // namespace simeval
