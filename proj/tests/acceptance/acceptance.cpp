#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <regex>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "simeval/analysis.hpp"
#include "simeval/assessment.hpp"
#include "simeval/errors.hpp"
#include "simeval/orchestrator.hpp"
#include "simeval/reml.hpp"
#include "simeval/screening.hpp"
#include "simeval/stats.hpp"
#include "simeval/store.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace simeval;
using nlohmann::json;
using Seconds = std::chrono::duration<double>;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) detail = what;
    ok = ok && cond;
  }
};

int failures = 0;

void report(const std::string& name, const std::function<Check()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  try {
    c = body();
  } catch (const std::exception& e) {
    c.ok = false;
    c.detail = std::string("exception: ") + e.what();
  }
  const double secs = Seconds(std::chrono::steady_clock::now() - t0).count();
  if (!c.ok) ++failures;
  std::printf("%s %s (%.2f s)%s%s\n", c.ok ? "PASS" : "FAIL", name.c_str(), secs, c.detail.empty() ? "" : ": ",
              c.detail.c_str());
  std::fflush(stdout);
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return Seconds(std::chrono::steady_clock::now() - t0).count();
}

// PHQ-9 ---------------------------------------------------------------------

Check phq9_classification() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  for (int total = 0; total <= 27; ++total) {
    const char* want = total <= 4 ? "subthreshold" : total <= 9 ? "mild" : total <= 19 ? "moderate" : "severe";
    c.expect(screening::classify_severity(total).name() == want, fmt::format("total {} misclassified", total));
  }
  c.expect(elapsed_since(t0) < 1.0, "slower than 1 s");
  return c;
}

// Orchestrator --------------------------------------------------------------

orchestrator::SessionSpec session_spec() {
  orchestrator::SessionSpec s;
  s.session_id = "S001";
  s.user = fixtures::accepted_user("U0001");
  s.chatbot_prompt = orchestrator::build_system_prompt(orchestrator::default_prompt_components());
  s.first_message = orchestrator::default_prompt_components().first_message;
  return s;
}

orchestrator::Transcript scripted_session(std::vector<std::string> bot_lines) {
  llm::ScriptedGateway bot(std::move(bot_lines));
  llm::CallbackGateway user([](auto) { return std::string("I guess that makes sense."); });
  return orchestrator::run_session(session_spec(), bot, user, orchestrator::logical_clock());
}

bool marker_free(const orchestrator::Transcript& t) {
  static const std::regex marker(R"(\[\s*(Phase\s*\d+|STOP)\s*\])", std::regex::icase);
  for (const auto& m : t.messages) {
    if (std::regex_search(m.content, marker)) return false;
  }
  return true;
}

Check orchestrator_termination() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;

  std::vector<std::string> ordered;
  for (int k = 2; k <= 7; ++k) ordered.push_back(fmt::format("Let's move on. [Phase{}] Here we go.", k));
  ordered.push_back("Take care! [STOP]");
  const auto done = scripted_session(ordered);
  c.expect(done.termination == orchestrator::Termination::completed, "ordered script did not complete");
  c.expect(done.phases_entered == std::vector<int>{1, 2, 3, 4, 5, 6, 7}, "phases entered are not 1..7");

  const auto limited = scripted_session(std::vector<std::string>(300, "Tell me more about that."));
  c.expect(limited.termination == orchestrator::Termination::turn_limit, "markerless script did not hit the limit");
  c.expect(limited.turn_count == 100, fmt::format("markerless turn count {} != 100", limited.turn_count));

  const auto early = scripted_session({"Welcome. [Phase2]", "We should stop here. [STOP]"});
  c.expect(early.termination == orchestrator::Termination::stop_marker, "early stop not reported as stop_marker");

  for (const auto* t : {&done, &limited, &early}) c.expect(marker_free(*t), "marker left in visible text");

  std::set<std::string> hashes;
  for (int i = 0; i < 3; ++i) hashes.insert(orchestrator::transcript_hash(scripted_session(ordered)));
  c.expect(hashes.size() == 1, "transcript hashes differ across runs");
  c.expect(elapsed_since(t0) < 5.0, "slower than 5 s");
  return c;
}

// Adequacy ------------------------------------------------------------------

Check adequacy_arithmetic() {
  std::vector<assessment::RatingForm> forms;
  for (int i = 1; i <= 48; ++i) {
    auto f = fixtures::form(fixtures::session_id(i), "R01", 4);
    if (i == 1) f.qbas[0] = 2;
    if (i > 27) f.qbas[1] = 1;
    forms.push_back(f);
  }
  const auto stats = analysis::component_descriptives(forms);
  Check c;
  c.expect(stats[0].adequacy_count == 47 && stats[1].adequacy_count == 27, "wrong adequacy counts");
  const auto a = stats::format_percent(stats[0].adequacy_count, stats[0].n);
  const auto b = stats::format_percent(stats[1].adequacy_count, stats[1].n);
  c.expect(a == "97.9%", "47/48 rendered as " + a);
  c.expect(b == "56.2%", "27/48 rendered as " + b);

  std::vector<analysis::RatedSession> sessions;
  for (const auto& f : forms) sessions.push_back({f.session_id, f, {}});
  analysis::ReportOptions opt;
  opt.tables = {"adequacy"};
  const auto rows = analysis::build_report(sessions, {}, opt)["tables"]["adequacy"]["rows"];
  c.expect(rows[0]["percent_text"] == "97.9%" && rows[1]["percent_text"] == "56.2%", "report rows disagree");
  return c;
}

// REML ----------------------------------------------------------------------

Check reml_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  reml::RemlOptions opt;
  opt.bootstrap_reps = 0;
  const std::array<double, 3> target{1.27 / 3.46, 0.42 / 3.46, 1.77 / 3.46};
  std::array<double, 3> sum{};
  constexpr int kReplicates = 20;
  for (int r = 0; r < kReplicates; ++r) {
    const auto d = fixtures::crossed_normal(200, 14, 1.27, 0.42, 1.77, 1000 + r);
    const auto fit = reml::reml_variance_decomposition(d.scores, d.sessions, d.components, opt);
    c.expect(fit.converged, fmt::format("replicate {} did not converge", r));
    for (int k = 0; k < 3; ++k) sum[k] += fit.proportions[k];
  }
  std::string got;
  for (int k = 0; k < 3; ++k) {
    const double mean = sum[k] / kReplicates;
    got += fmt::format("{}{:.3f}", k ? ", " : "", mean);
    c.expect(std::abs(mean - target[k]) <= 0.05, "");
  }
  if (!c.ok && c.detail.empty()) c.detail = "mean proportions " + got;

  for (int r = 0; r < kReplicates; ++r) {
    const auto d = fixtures::crossed_normal(200, 14, 0.0, 0.0, 1.0, 5000 + r);
    const auto fit = reml::reml_variance_decomposition(d.scores, d.sessions, d.components, opt);
    c.expect(fit.proportions[0] < 0.05 && fit.proportions[1] < 0.05,
             fmt::format("noise replicate {} gave ({:.3f}, {:.3f})", r, fit.proportions[0], fit.proportions[1]));
  }
  c.expect(elapsed_since(t0) < 120.0, "slower than 2 min");
  if (c.ok) c.detail = "mean proportions " + got;
  return c;
}

// Rank tests ----------------------------------------------------------------

std::vector<double> draw(std::mt19937_64& rng, std::size_t n, int levels) {
  std::uniform_int_distribution<int> pick(0, levels - 1);
  std::vector<double> out(n);
  for (auto& v : out) v = pick(rng);
  return out;
}

std::vector<double> transformed(const std::vector<double>& v) {
  std::vector<double> out;
  for (double x : v) out.push_back(std::exp(0.7 * x) + 2.0 * x * x * x);
  return out;
}

Check rank_tests() {
  Check c;
  std::mt19937_64 rng(20240601);
  double worst = 0.0;
  for (std::size_t n = 1; n < 10; ++n) {
    for (std::size_t m = 1; n + m <= 10; ++m) {
      for (int levels : {3, 5, 50}) {
        const auto x = draw(rng, n, levels);
        const auto y = draw(rng, m, levels);
        const auto got = stats::wilcoxon_rank_sum(x, y, stats::WilcoxonMode::exact);
        const auto want = oracle::wilcoxon_enumeration(x, y);
        worst = std::max({worst, std::abs(got.p_value - want.p), std::abs(got.statistic - want.w)});
      }
    }
  }
  c.expect(worst <= 1e-12, fmt::format("Wilcoxon deviates by {:.3g}", worst));

  double worst_h = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<std::vector<double>> groups;
    const int k = 2 + i % 4;
    for (int g = 0; g < k; ++g) groups.push_back(draw(rng, 2 + (i + g) % 6, 6));
    worst_h = std::max(worst_h, std::abs(stats::kruskal_wallis(groups).statistic - oracle::kruskal_h(groups)));
  }
  c.expect(worst_h <= 1e-12, fmt::format("Kruskal-Wallis H deviates by {:.3g}", worst_h));

  for (int i = 0; i < 100; ++i) {
    const auto x = draw(rng, 3 + i % 5, 7);
    const auto y = draw(rng, 2 + i % 7, 7);
    const auto w0 = stats::wilcoxon_rank_sum(x, y);
    const auto w1 = stats::wilcoxon_rank_sum(transformed(x), transformed(y));
    c.expect(w0.statistic == w1.statistic && std::abs(w0.p_value - w1.p_value) <= 1e-12,
             fmt::format("Wilcoxon not invariant on instance {}", i));
    const std::vector<std::vector<double>> g0{x, y, draw(rng, 4, 7)};
    const std::vector<std::vector<double>> g1{transformed(g0[0]), transformed(g0[1]), transformed(g0[2])};
    const auto k0 = stats::kruskal_wallis(g0);
    const auto k1 = stats::kruskal_wallis(g1);
    c.expect(std::abs(k0.statistic - k1.statistic) <= 1e-12 && std::abs(k0.p_value - k1.p_value) <= 1e-12,
             fmt::format("Kruskal-Wallis not invariant on instance {}", i));
  }
  return c;
}

// Welch ---------------------------------------------------------------------

Check welch_tests() {
  Check c;
  const std::vector<double> g{2.0, 3.5, 4.0, 5.5, 1.0};
  const auto same = stats::welch_t(g, g);
  c.expect(same.statistic == 0.0 && same.p_value == 1.0, "identical groups do not give t = 0, p = 1");

  std::mt19937_64 rng(77);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0.0, worst_f = 0.0;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> x(3 + i % 9), y(2 + (i * 7) % 11);
    for (auto& v : x) v = 4.0 + 1.5 * z(rng);
    for (auto& v : y) v = 3.0 + 0.5 * (1 + i % 3) * z(rng);
    const auto got = stats::welch_t(x, y);
    const auto want = oracle::welch_t(x, y);
    worst = std::max({worst, std::abs(got.df.at(0) - want.df), std::abs(got.statistic - want.t)});

    std::vector<std::vector<double>> groups{x, y};
    std::vector<double> w(4 + i % 5);
    for (auto& v : w) v = 3.5 + z(rng);
    groups.push_back(w);
    const auto f = stats::welch_anova(groups);
    const auto fo = oracle::welch_anova(groups);
    worst_f = std::max({worst_f, std::abs(f.statistic - fo.f) / std::max(1.0, std::abs(fo.f)),
                        std::abs(f.df.at(1) - fo.df2)});
  }
  c.expect(worst <= 1e-9, fmt::format("Welch t/df deviates by {:.3g}", worst));
  c.expect(worst_f <= 1e-9, fmt::format("Welch ANOVA deviates by {:.3g}", worst_f));
  return c;
}

// Assignment ----------------------------------------------------------------

Check assignment_constraints() {
  Check c;
  std::vector<std::string> ids;
  for (int i = 1; i <= 48; ++i) ids.push_back(fixtures::session_id(i));
  const auto raters = assessment::default_raters(10);
  const auto a = assessment::assign_sessions(ids, raters, 11);
  std::multiset<std::string> covered;
  for (const auto& x : a) {
    c.expect(x.session_ids.size() >= 3 && x.session_ids.size() <= 6, x.rater_id + " outside [3,6]");
    covered.insert(x.session_ids.begin(), x.session_ids.end());
  }
  c.expect(covered == std::multiset<std::string>(ids.begin(), ids.end()), "sessions not covered exactly once");
  const auto b = assessment::assign_sessions(ids, raters, 11);
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].session_ids == b[i].session_ids;
  c.expect(same, "assignment differs for the same seed");

  const auto rejects = [&](std::size_t n, int count, const char* needle) {
    try {
      assessment::assign_sessions(std::span(ids).first(n), assessment::default_raters(count), 1);
    } catch (const InfeasibleError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
  };
  c.expect(rejects(20, 10, "minimum"), "too few sessions not rejected by the minimum bound");
  c.expect(rejects(48, 5, "maximum"), "too many sessions not rejected by the maximum bound");
  return c;
}

// Pipeline dry run ----------------------------------------------------------

int cli(const fixtures::TempDir& dir, const std::string& args) {
  const auto cmd = fmt::format("\"{}\" --runs-dir \"{}\" --run dry --seed 3 --mock \"{}\" {} >>\"{}\" 2>&1",
                               SIMEVAL_CLI_PATH, dir.path().string(), fixtures::mock_script_path().string(), args,
                               (dir.path() / "cli.log").string());
  return std::system(cmd.c_str());
}

std::vector<assessment::RatingForm> synthetic_ratings(const store::RunStore& s) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> z(0.0, 1.0);
  const auto clamp = [](double v, int lo, int hi) { return std::clamp(static_cast<int>(std::lround(v)), lo, hi); };
  std::vector<assessment::RatingForm> forms;
  for (const auto& a : s.assignments()) {
    for (const auto& id : a.session_ids) {
      assessment::RatingForm f;
      f.session_id = id;
      f.rater_id = a.rater_id;
      const double quality = 4.0 + z(rng);
      for (std::size_t k = 0; k < f.qbas.size(); ++k) f.qbas[k] = clamp(quality + 0.3 * k - 2.0 + 0.8 * z(rng), 0, 6);
      f.holistic = clamp(quality + 1.0 + z(rng), 1, 7);
      for (auto& cap : f.capabilities) cap = clamp(quality + 1.0 + z(rng), 1, 7);
      f.authenticity = clamp(4.0 + z(rng), 1, 7);
      f.difficulty = clamp(4.0 + z(rng), 1, 7);
      forms.push_back(f);
    }
  }
  return forms;
}

Check pipeline_dry_run() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  fixtures::TempDir dir;
  c.expect(cli(dir, "personas") == 0, "personas failed");
  c.expect(cli(dir, "screen") == 0, "screen failed");
  c.expect(cli(dir, "run --n 48") == 0, "run failed");
  c.expect(cli(dir, "assign --raters 10") == 0, "assign failed");
  if (!c.ok) {
    c.detail += "; " + fixtures::read_file(dir.path() / "cli.log");
    return c;
  }

  std::vector<assessment::RatingForm> forms;
  {
    store::RunStore s(dir.path(), "dry");
    c.expect(s.session_ids().size() == 48, "run did not store 48 sessions");
    forms = synthetic_ratings(s);
  }
  const auto csv = dir.path() / "ratings.csv";
  fixtures::write_file(csv, assessment::ratings_to_csv(forms));
  c.expect(cli(dir, "ingest \"" + csv.string() + "\"") == 0, "ingest failed");
  c.expect(cli(dir, "analyze --bootstrap 20") == 0, "analyze failed");
  const auto heat = dir.path() / "heat";
  c.expect(cli(dir, "export --out \"" + heat.string() + "\"") == 0, "export failed");
  if (!c.ok) {
    c.detail += "; " + fixtures::read_file(dir.path() / "cli.log");
    return c;
  }

  const auto report = json::parse(fixtures::read_file(dir.path() / "dry" / "analysis" / "report.json"));
  for (const char* family : {"descriptives", "adequacy", "variance", "comparisons"}) {
    c.expect(report["tables"].contains(family) && !report["tables"][family].empty(),
             std::string("report lacks ") + family);
  }
  const auto rows = assessment::parse_csv(fixtures::read_file(heat / "qbas_heatmap.csv"));
  c.expect(rows.size() == 49, fmt::format("heatmap has {} lines, expected header + 48", rows.size()));
  bool shape = !rows.empty();
  for (const auto& r : rows) shape = shape && r.cells.size() == 15;
  c.expect(shape, "heatmap rows are not session_id + 14 items");
  c.expect(elapsed_since(t0) < 60.0, "slower than 60 s");
  return c;
}

// Blinding ------------------------------------------------------------------

void collect_keys(const json& j, std::set<std::string>& keys) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      keys.insert(k);
      collect_keys(v, keys);
    }
  } else if (j.is_array()) {
    for (const auto& v : j) collect_keys(v, keys);
  }
}

Check blinding() {
  Check c;
  fixtures::TempDir dir;
  c.expect(cli(dir, "run --n 6") == 0, "run failed");
  if (!c.ok) return c;
  store::RunStore s(dir.path(), "dry");
  std::set<std::string> forbidden{"user_id",    "vignette_id",     "levels",       "persona_prompt", "persona",
                                  "config",     "phq9_items",      "phq9_total",   "severity_class", "screening",
                                  "screening_status", "screening_note", "intended_severity", "display_name",
                                  "narrative",  std::string(persona::kSeverity), std::string(persona::kAgeGroup),
                                  std::string(persona::kGender)};
  for (const auto& d : persona::default_persona_matrix().dimensions) forbidden.insert(d.name);
  for (const auto& t : s.transcripts()) {
    const auto payload = orchestrator::rater_transcript_payload(t);
    std::set<std::string> keys;
    collect_keys(payload, keys);
    for (const auto& k : keys) c.expect(!forbidden.contains(k), t.session_id + " exposes field " + k);
    const auto text = payload.dump();
    const auto user = s.user(t.user_id);
    c.expect(text.find(t.user_id) == std::string::npos, t.session_id + " exposes its user id");
    c.expect(user && text.find(user->config.vignette_id) == std::string::npos, t.session_id + " exposes its vignette");
  }
  return c;
}

}  // namespace

int main() {
  report("phq9_classification", phq9_classification);
  report("orchestrator_termination", orchestrator_termination);
  report("adequacy_arithmetic", adequacy_arithmetic);
  report("reml_recovery", reml_recovery);
  report("rank_test_oracles", rank_tests);
  report("welch_tests", welch_tests);
  report("assignment_constraints", assignment_constraints);
  report("pipeline_dry_run", pipeline_dry_run);
  report("blinding", blinding);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
