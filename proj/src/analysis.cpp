#include "simeval/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "simeval/errors.hpp"

namespace simeval::analysis {

using assessment::RatingForm;
using nlohmann::json;
using stats::format_fixed;

std::vector<ComponentStats> component_descriptives(std::span<const RatingForm> ratings) {
  std::vector<ComponentStats> out;
  for (const auto& component : assessment::qbas_components()) {
    ComponentStats c;
    c.index = component.index;
    c.phase = component.phase;
    c.label = std::string(component.label);
    std::vector<double> values;
    for (const auto& r : ratings) {
      if (const auto& v = r.qbas[static_cast<std::size_t>(component.index - 1)]) {
        values.push_back(*v);
        if (*v >= assessment::kAdequacyThreshold) ++c.adequacy_count;
      }
    }
    c.n = values.size();
    if (c.n > 0) {
      c.mean = stats::mean(values);
      c.sd = stats::sample_sd(values);
      c.adequacy_rate = static_cast<double>(c.adequacy_count) / static_cast<double>(c.n);
    }
    out.push_back(std::move(c));
  }
  return out;
}

double session_qbas_mean(const RatingForm& rating) {
  if (!rating.qbas_complete()) {
    throw ArgumentError(fmt::format("rating for session {} has missing Q-BAS items", rating.session_id));
  }
  double sum = 0.0;
  for (const auto& v : rating.qbas) sum += *v;
  return sum / assessment::kQbasItems;
}

namespace {

struct ValueSource {
  std::string key;
  std::string label;
};

std::vector<ValueSource> scale_sources() {
  std::vector<ValueSource> out{{"qbas_mean", "Q-BAS session mean (0-6)"},
                               {"holistic", "Holistic rating (1-7)"},
                               {"holistic_0_6", "Holistic rating rescaled (0-6)"}};
  for (const auto& cap : assessment::capabilities()) {
    out.push_back({std::string(cap.key), std::string(cap.label) + " (1-7)"});
  }
  out.push_back({"authenticity", "Authenticity (1-7)"});
  out.push_back({"difficulty", "Difficulty (1-7)"});
  return out;
}

}  // namespace

std::optional<double> outcome_value(const RatingForm& rating, const std::string& key) {
  if (key == "qbas_mean") {
    if (!rating.qbas_complete()) return std::nullopt;
    return session_qbas_mean(rating);
  }
  if (key == "holistic") {
    if (!rating.holistic) return std::nullopt;
    return *rating.holistic;
  }
  if (key == "holistic_0_6") {
    if (!rating.holistic) return std::nullopt;
    return assessment::holistic_normalized(*rating.holistic);
  }
  if (key == "authenticity") {
    if (!rating.authenticity) return std::nullopt;
    return *rating.authenticity;
  }
  if (key == "difficulty") {
    if (!rating.difficulty) return std::nullopt;
    return *rating.difficulty;
  }
  for (const auto& cap : assessment::capabilities()) {
    if (cap.key == key) {
      const auto& v = rating.capabilities[static_cast<std::size_t>(cap.index - 1)];
      if (!v) return std::nullopt;
      return *v;
    }
  }
  throw ArgumentError("unknown outcome '" + key + "'");
}

std::vector<ScaleStats> scale_descriptives(std::span<const RatingForm> ratings) {
  std::vector<ScaleStats> out;
  for (const auto& src : scale_sources()) {
    std::vector<double> values;
    for (const auto& r : ratings) {
      if (auto v = outcome_value(r, src.key)) values.push_back(*v);
    }
    ScaleStats s;
    s.key = src.key;
    s.label = src.label;
    s.n = values.size();
    if (!values.empty()) {
      s.mean = stats::mean(values);
      s.sd = stats::sample_sd(values);
      s.median = stats::quantile(values, 0.5);
      s.iqr = stats::quantile(values, 0.75) - stats::quantile(values, 0.25);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<RatedSession> join_ratings(std::span<const RatingForm> ratings,
                                       std::span<const orchestrator::Transcript> transcripts,
                                       std::span<const persona::ArtificialUser> users) {
  std::map<std::string, const orchestrator::Transcript*> by_session;
  for (const auto& t : transcripts) by_session[t.session_id] = &t;
  std::map<std::string, const persona::ArtificialUser*> by_user;
  for (const auto& u : users) by_user[u.user_id] = &u;

  std::vector<RatedSession> out;
  for (const auto& r : ratings) {
    RatedSession s;
    s.session_id = r.session_id;
    s.rating = r;
    if (auto t = by_session.find(r.session_id); t != by_session.end()) {
      if (auto u = by_user.find(t->second->user_id); u != by_user.end()) s.levels = u->second->config.levels;
    }
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(),
            [](const RatedSession& a, const RatedSession& b) { return a.session_id < b.session_id; });
  return out;
}

namespace {

const std::map<std::string, std::string>& characteristic_labels() {
  static const std::map<std::string, std::string> labels{
      {"openness", "Openness"},
      {"severity", "Depression severity"},
      {"dominance", "Conversational dominance"},
      {"chatbot_attitude", "Attitudes toward chatbots"},
      {"info_disclosure", "Willingness to disclose info"},
      {"age_group", "Age group"},
      {"gender", "Gender"},
  };
  return labels;
}

const std::vector<std::string>& characteristic_order() {
  static const std::vector<std::string> order{"openness",        "severity",  "dominance", "chatbot_attitude",
                                              "info_disclosure", "age_group", "gender"};
  return order;
}

std::vector<std::string> ordered_levels(const std::set<std::string>& present,
                                        const std::vector<std::string>& canonical) {
  std::vector<std::string> out;
  for (const auto& l : canonical) {
    if (present.contains(l)) out.push_back(l);
  }
  for (const auto& l : present) {
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  }
  return out;
}

std::string display_level(const std::string& level) {
  std::string out = level;
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

std::string display_characteristic(const std::string& key) {
  const auto& labels = characteristic_labels();
  if (auto it = labels.find(key); it != labels.end()) return it->second;
  return key;
}

}  // namespace

std::vector<Characteristic> default_characteristics(const persona::PersonaMatrix& matrix) {
  std::map<std::string, Characteristic> by_key;
  std::set<std::string> severities, ages, genders;
  for (const auto& v : matrix.vignettes) {
    severities.insert(v.traits.severity);
    ages.insert(v.traits.age_group);
    genders.insert(v.traits.gender);
  }
  by_key["severity"] = {"severity", display_characteristic("severity"),
                        ordered_levels(severities, {"mild", "moderate", "severe"})};
  by_key["age_group"] = {"age_group", display_characteristic("age_group"),
                         ordered_levels(ages, {"14-17", "18-25", "26-29"})};
  by_key["gender"] = {"gender", display_characteristic("gender"),
                      ordered_levels(genders, {"male", "non-binary", "female"})};
  for (const auto& d : matrix.dimensions) {
    Characteristic c{d.name, display_characteristic(d.name), {}};
    for (const auto& l : d.levels) c.levels.push_back(l.level);
    by_key[d.name] = std::move(c);
  }

  std::vector<Characteristic> out;
  for (const auto& key : characteristic_order()) {
    if (auto it = by_key.find(key); it != by_key.end()) {
      out.push_back(it->second);
      by_key.erase(it);
    }
  }
  for (auto& [key, c] : by_key) out.push_back(std::move(c));
  return out;
}

const std::vector<Outcome>& comparison_outcomes() {
  static const std::vector<Outcome> outcomes = [] {
    std::vector<Outcome> o{{"holistic", "Single-Item Holistic Rating", OutcomeFamily::rank},
                           {"qbas_mean", "Q-BAS Average", OutcomeFamily::welch}};
    for (const auto& key : {"safety", "flow", "clarity", "objectivity", "rapport", "responds_to_concerns",
                            "validation_empathy"}) {
      for (const auto& cap : assessment::capabilities()) {
        if (cap.key == key) o.push_back({std::string(cap.key), std::string(cap.label), OutcomeFamily::rank});
      }
    }
    o.push_back({"authenticity", "Authenticity", OutcomeFamily::rank});
    o.push_back({"difficulty", "Difficulty", OutcomeFamily::rank});
    return o;
  }();
  return outcomes;
}

namespace {

std::string statistic_text(const stats::StatResult& r) {
  std::string df;
  if (r.statistic_name == "H" && !r.df.empty()) {
    df = fmt::format("({})", format_fixed(r.df[0], 0));
  } else if (r.statistic_name == "t" && !r.df.empty()) {
    df = fmt::format("({})", format_fixed(r.df[0], 2));
  } else if (r.statistic_name == "F" && r.df.size() == 2) {
    df = fmt::format("({},{})", format_fixed(r.df[0], 0), format_fixed(r.df[1], 2));
  }
  return fmt::format("{}{}={}", r.statistic_name, df, format_fixed(r.statistic, 2));
}

}  // namespace

ComparisonTable characteristic_comparison(std::span<const RatedSession> sessions,
                                          std::span<const Characteristic> characteristics,
                                          const Outcome& outcome) {
  const bool rank = outcome.family == OutcomeFamily::rank;
  const std::size_t min_n = rank ? 1 : 2;

  ComparisonTable table;
  table.outcome = outcome;
  table.summary_heading = rank ? "Median (IQR)" : "Mean (SD)";
  table.footnote = rank ? "Tests: Wilcoxon W for two-level factors; Kruskal-Wallis H for factors with three "
                          "or more levels. P-values are uncorrected."
                        : "Tests: Welch t for two-level factors; Welch ANOVA F for factors with three or "
                          "more levels. P-values are uncorrected.";

  for (const auto& ch : characteristics) {
    CharacteristicResult row;
    row.key = ch.key;
    row.label = ch.label;
    std::vector<std::vector<double>> groups;
    for (const auto& level : ch.levels) {
      std::vector<double> values;
      for (const auto& s : sessions) {
        auto it = s.levels.find(ch.key);
        if (it == s.levels.end() || it->second != level) continue;
        if (auto v = outcome_value(s.rating, outcome.key)) values.push_back(*v);
      }
      SubgroupRow sub;
      sub.level = level;
      sub.label = display_level(level);
      sub.n = values.size();
      sub.computable = values.size() >= min_n;
      if (!sub.computable) {
        sub.summary = "not computable";
      } else {
        const auto g = stats::summarize(level, values);
        sub.summary = rank ? fmt::format("{} ({})", format_fixed(g.median, 2), format_fixed(g.q3 - g.q1, 2))
                           : fmt::format("{} ({})", format_fixed(g.mean, 2), format_fixed(g.sd, 2));
        groups.push_back(std::move(values));
      }
      row.subgroups.push_back(std::move(sub));
    }

    if (groups.size() < 2) {
      row.note = "fewer than two subgroups with data";
    } else {
      try {
        stats::StatResult r;
        if (groups.size() == 2) {
          r = rank ? stats::wilcoxon_rank_sum(groups[0], groups[1]) : stats::welch_t(groups[0], groups[1]);
        } else {
          r = rank ? stats::kruskal_wallis(groups) : stats::welch_anova(groups);
        }
        row.statistic_text = statistic_text(r);
        row.p_text = stats::format_p(r.p_value);
        row.computable = true;
        row.note = r.note;
        row.result = std::move(r);
      } catch (const ArgumentError& e) {
        row.note = e.what();
      }
    }
    if (row.computable &&
        std::any_of(row.subgroups.begin(), row.subgroups.end(), [](const SubgroupRow& s) { return !s.computable; })) {
      row.note = row.note.empty() ? "empty subgroups omitted from the test" : row.note + "; empty subgroups omitted";
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::vector<ComparisonTable> characteristic_comparisons(std::span<const RatedSession> sessions,
                                                        std::span<const Characteristic> characteristics) {
  std::vector<ComparisonTable> out;
  for (const auto& outcome : comparison_outcomes()) {
    out.push_back(characteristic_comparison(sessions, characteristics, outcome));
  }
  return out;
}

// ---------------------------------------------------------------------------

HeatmapExport export_heatmap(std::span<const RatingForm> ratings, std::span<const std::string> all_session_ids) {
  std::vector<const RatingForm*> rows;
  for (const auto& r : ratings) {
    if (r.qbas_complete()) rows.push_back(&r);
  }
  if (rows.empty()) throw EmptyOutputError("no ratings ingested");
  std::sort(rows.begin(), rows.end(),
            [](const RatingForm* a, const RatingForm* b) { return a->session_id < b->session_id; });

  HeatmapExport out;
  std::ostringstream q;
  std::ostringstream c;
  q << "session_id";
  for (int k = 1; k <= assessment::kQbasItems; ++k) q << ",qbas_" << k;
  q << '\n';
  c << "session_id";
  for (const auto& cap : assessment::capabilities()) c << ',' << cap.key;
  c << '\n';
  for (const auto* r : rows) {
    out.session_ids.push_back(r->session_id);
    q << assessment::csv_escape(r->session_id);
    for (const auto& v : r->qbas) q << ',' << *v;
    q << '\n';
    c << assessment::csv_escape(r->session_id);
    for (const auto& v : r->capabilities) {
      c << ',';
      if (v) c << *v;
    }
    c << '\n';
  }
  out.qbas_csv = q.str();
  out.capabilities_csv = c.str();

  std::set<std::string> rated(out.session_ids.begin(), out.session_ids.end());
  std::set<std::string> known(all_session_ids.begin(), all_session_ids.end());
  for (const auto& id : known) {
    if (!rated.contains(id)) ++out.excluded;
  }
  return out;
}

std::vector<std::filesystem::path> write_heatmap(const HeatmapExport& heatmap, const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", directory.string(), ec.message()));
  std::vector<std::filesystem::path> paths{directory / "qbas_heatmap.csv", directory / "capabilities_heatmap.csv"};
  const std::string* bodies[] = {&heatmap.qbas_csv, &heatmap.capabilities_csv};
  for (std::size_t i = 0; i < paths.size(); ++i) {
    std::ofstream out(paths[i], std::ios::binary | std::ios::trunc);
    out << *bodies[i];
    if (!out) throw IoError("cannot write " + paths[i].string());
  }
  return paths;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& table_families() {
  static const std::vector<std::string> families{"descriptives", "adequacy", "variance", "comparisons"};
  return families;
}

namespace {

json interval_json(const reml::Interval& i) { return json::array({i.lo, i.hi}); }

json variance_json(std::span<const RatedSession> sessions, const reml::RemlOptions& options) {
  std::vector<double> scores;
  std::vector<std::string> session_ids;
  std::vector<std::string> components;
  for (const auto& s : sessions) {
    for (int k = 0; k < assessment::kQbasItems; ++k) {
      if (const auto& v = s.rating.qbas[static_cast<std::size_t>(k)]) {
        scores.push_back(*v);
        session_ids.push_back(s.session_id);
        components.push_back(fmt::format("qbas_{}", k + 1));
      }
    }
  }
  json out{{"model", "score ~ 1 + (1 | session) + (1 | component)"}, {"method", "REML"}};
  try {
    const auto d = reml::reml_variance_decomposition(scores, session_ids, components, options);
    out["computable"] = true;
    out["intercept"] = d.intercept;
    out["components"] = json::array({
        {{"source", "session"}, {"variance", d.var_session}, {"proportion", d.proportions[0]},
         {"ci", interval_json(d.ci_session)}},
        {{"source", "component"}, {"variance", d.var_component}, {"proportion", d.proportions[1]},
         {"ci", interval_json(d.ci_component)}},
        {{"source", "residual"}, {"variance", d.var_residual}, {"proportion", d.proportions[2]},
         {"ci", interval_json(d.ci_residual)}},
    });
    out["ci_method"] = fmt::format("parametric bootstrap percentile, {:.0f}%", options.ci_level * 100.0);
    out["bootstrap_reps"] = d.bootstrap_reps;
    out["bootstrap_failures"] = d.bootstrap_failures;
    out["converged"] = d.converged;
    out["iterations"] = d.iterations;
    out["evaluations"] = d.evaluations;
    out["deviance"] = d.deviance;
    out["n_obs"] = d.n_obs;
    out["n_sessions"] = d.n_sessions;
    out["n_components"] = d.n_components;
  } catch (const ArgumentError& e) {
    out["computable"] = false;
    out["note"] = e.what();
  }
  return out;
}

json comparison_json(const ComparisonTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json subs = json::array();
    for (const auto& s : r.subgroups) {
      subs.push_back({{"level", s.level}, {"label", s.label}, {"n", s.n}, {"summary", s.summary},
                      {"computable", s.computable}});
    }
    json row{{"characteristic", r.key},
             {"label", r.label},
             {"subgroups", subs},
             {"computable", r.computable},
             {"statistic_text", r.statistic_text},
             {"p_text", r.p_text},
             {"note", r.note}};
    if (r.result) {
      row["test"] = r.result->test;
      row["statistic_name"] = r.result->statistic_name;
      row["statistic"] = std::isfinite(r.result->statistic) ? json(r.result->statistic) : json(nullptr);
      row["df"] = r.result->df;
      row["p"] = r.result->p_value;
      row["exact"] = r.result->exact;
      row["infinite_statistic"] = r.result->infinite_statistic;
    }
    rows.push_back(std::move(row));
  }
  return json{{"outcome", t.outcome.key},
              {"title", "Effects of Artificial User Characteristics on " + t.outcome.label},
              {"family", t.outcome.family == OutcomeFamily::rank ? "rank" : "welch"},
              {"columns", json::array({"Characteristic", "Subgroup", "N", t.summary_heading, "Statistic", "p"})},
              {"rows", rows},
              {"p_uncorrected", true},
              {"footnote", t.footnote}};
}

}  // namespace

json build_report(std::span<const RatedSession> sessions, std::span<const Characteristic> characteristics,
                  const ReportOptions& options) {
  for (const auto& t : options.tables) {
    const auto& fam = table_families();
    if (std::find(fam.begin(), fam.end(), t) == fam.end()) {
      throw ArgumentError(fmt::format("unknown table family '{}'; expected one of {}", t, fmt::join(fam, ", ")));
    }
  }
  if (sessions.empty()) throw EmptyOutputError("no ratings ingested");
  auto want = [&](const char* family) { return options.tables.empty() || options.tables.contains(family); };

  std::vector<RatingForm> ratings;
  for (const auto& s : sessions) ratings.push_back(s.rating);
  const auto components = component_descriptives(ratings);

  json report{{"n_ratings", ratings.size()}, {"tables", json::object()}};
  auto& tables = report["tables"];

  if (want("descriptives")) {
    json scales = json::array();
    for (const auto& s : scale_descriptives(ratings)) {
      scales.push_back({{"key", s.key}, {"label", s.label}, {"n", s.n}, {"mean", s.mean}, {"sd", s.sd},
                        {"median", s.median}, {"iqr", s.iqr}, {"mean_text", format_fixed(s.mean, 2)},
                        {"sd_text", format_fixed(s.sd, 2)}});
    }
    json comps = json::array();
    for (const auto& c : components) {
      comps.push_back({{"index", c.index}, {"phase", c.phase}, {"label", c.label}, {"n", c.n}, {"mean", c.mean},
                       {"sd", c.sd}, {"mean_text", format_fixed(c.mean, 2)}, {"sd_text", format_fixed(c.sd, 2)}});
    }
    tables["descriptives"] = {{"scales", scales}, {"components", comps}};
  }
  if (want("adequacy")) {
    json rows = json::array();
    for (const auto& c : components) {
      rows.push_back({{"index", c.index},
                      {"label", fmt::format("{} (P{})", c.label, c.phase)},
                      {"n", c.n},
                      {"adequate", c.adequacy_count},
                      {"rate", c.adequacy_rate},
                      {"percent_text", stats::format_percent(c.adequacy_count, c.n)}});
    }
    tables["adequacy"] = {{"threshold", assessment::kAdequacyThreshold}, {"rows", rows}};
  }
  if (want("variance")) tables["variance"] = variance_json(sessions, options.reml);
  if (want("comparisons")) {
    json list = json::array();
    for (const auto& t : characteristic_comparisons(sessions, characteristics)) list.push_back(comparison_json(t));
    tables["comparisons"] = list;
  }
  return report;
}

std::string render_report_text(const json& report) {
  std::ostringstream out;
  const auto& tables = report.at("tables");
  out << "Ratings analysed: " << report.at("n_ratings").get<std::size_t>() << "\n";

  if (tables.contains("descriptives")) {
    out << "\n== Descriptives ==\n";
    for (const auto& s : tables["descriptives"]["scales"]) {
      out << fmt::format("{:<40} n={:<4} M={} SD={}\n", s["label"].get<std::string>(), s["n"].get<std::size_t>(),
                         s["mean_text"].get<std::string>(), s["sd_text"].get<std::string>());
    }
    out << "\nQ-BAS components\n";
    for (const auto& c : tables["descriptives"]["components"]) {
      out << fmt::format("{:>2} P{} {:<40} M={} SD={}\n", c["index"].get<int>(), c["phase"].get<int>(),
                         c["label"].get<std::string>(), c["mean_text"].get<std::string>(),
                         c["sd_text"].get<std::string>());
    }
  }
  if (tables.contains("adequacy")) {
    out << "\n== Q-BAS component adequacy (>= " << tables["adequacy"]["threshold"].get<int>() << ") ==\n";
    for (const auto& r : tables["adequacy"]["rows"]) {
      out << fmt::format("{:<48} {:>3} {:>7}\n", r["label"].get<std::string>(), r["adequate"].get<std::size_t>(),
                         r["percent_text"].get<std::string>());
    }
  }
  if (tables.contains("variance")) {
    const auto& v = tables["variance"];
    out << "\n== Variance decomposition (REML) ==\n";
    if (!v["computable"].get<bool>()) {
      out << "not computable: " << v["note"].get<std::string>() << "\n";
    } else {
      for (const auto& c : v["components"]) {
        out << fmt::format("{:<10} variance={} ({}%) 95% CI [{}, {}]\n", c["source"].get<std::string>(),
                           format_fixed(c["variance"].get<double>(), 2),
                           format_fixed(100.0 * c["proportion"].get<double>(), 1),
                           format_fixed(c["ci"][0].get<double>(), 2), format_fixed(c["ci"][1].get<double>(), 2));
      }
      out << "converged: " << (v["converged"].get<bool>() ? "yes" : "no") << ", "
          << v["ci_method"].get<std::string>() << ", " << v["bootstrap_reps"].get<int>() << " replicates\n";
    }
  }
  if (tables.contains("comparisons")) {
    for (const auto& t : tables["comparisons"]) {
      out << "\n== " << t["title"].get<std::string>() << " ==\n";
      const auto cols = t["columns"];
      out << fmt::format("{:<30} {:<12} {:>3} {:<16} {:<20} {}\n", cols[0].get<std::string>(),
                         cols[1].get<std::string>(), cols[2].get<std::string>(), cols[3].get<std::string>(),
                         cols[4].get<std::string>(), cols[5].get<std::string>());
      for (const auto& r : t["rows"]) {
        bool first = true;
        for (const auto& s : r["subgroups"]) {
          const std::string stat = first ? (r["computable"].get<bool>() ? r["statistic_text"].get<std::string>()
                                                                        : std::string("not computable"))
                                         : std::string();
          const std::string p = first ? r["p_text"].get<std::string>() : std::string();
          out << fmt::format("{:<30} {:<12} {:>3} {:<16} {:<20} {}\n",
                             first ? r["label"].get<std::string>() : std::string(), s["label"].get<std::string>(),
                             s["n"].get<std::size_t>(), s["summary"].get<std::string>(), stat, p);
          first = false;
        }
      }
      out << t["footnote"].get<std::string>() << "\n";
    }
  }
  return out.str();
}

}  // namespace simeval::analysis
