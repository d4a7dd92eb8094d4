#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "simeval/analysis.hpp"
#include "simeval/errors.hpp"
#include "support/fixtures.hpp"

using namespace simeval;
using namespace simeval::analysis;
using assessment::RatingForm;

namespace {

std::vector<RatingForm> forms(int n, int qbas = 4) {
  std::vector<RatingForm> out;
  for (int i = 1; i <= n; ++i) out.push_back(fixtures::form(fixtures::session_id(i), "R01", qbas));
  return out;
}

std::vector<RatedSession> rated(const std::vector<RatingForm>& ratings, const std::string& key,
                                const std::vector<std::string>& cycle) {
  std::vector<RatedSession> out;
  for (std::size_t i = 0; i < ratings.size(); ++i) {
    out.push_back({ratings[i].session_id, ratings[i], {{key, cycle[i % cycle.size()]}}});
  }
  return out;
}

}  // namespace

TEST(ComponentDescriptives, AdequacyRounding) {
  auto r = forms(48, 4);
  r[0].qbas[0] = 2;
  for (int i = 0; i < 21; ++i) r[i].qbas[1] = 1;
  const auto stats = component_descriptives(r);
  ASSERT_EQ(stats.size(), 14u);
  EXPECT_EQ(stats[0].adequacy_count, 47u);
  EXPECT_EQ(stats::format_percent(stats[0].adequacy_count, stats[0].n), "97.9%");
  EXPECT_EQ(stats[1].adequacy_count, 27u);
  EXPECT_EQ(stats::format_percent(stats[1].adequacy_count, stats[1].n), "56.2%");
  EXPECT_EQ(stats::format_percent(stats[2].adequacy_count, stats[2].n), "100.0%");
  EXPECT_DOUBLE_EQ(stats[2].sd, 0.0);
  EXPECT_DOUBLE_EQ(stats[0].adequacy_rate, 47.0 / 48.0);
  EXPECT_EQ(stats[3].phase, 2);
}

TEST(ComponentDescriptives, PermutationInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> d(0, 6);
  auto r = forms(30);
  for (auto& f : r) {
    for (auto& q : f.qbas) q = d(rng);
  }
  auto shuffled = r;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto a = component_descriptives(r);
  const auto b = component_descriptives(shuffled);
  for (int k = 0; k < 14; ++k) {
    EXPECT_EQ(a[k].adequacy_count, b[k].adequacy_count);
    EXPECT_NEAR(a[k].mean, b[k].mean, 1e-12);
  }
}

TEST(SessionMean, Arithmetic) {
  auto f = fixtures::form("S001", "R01", 3);
  EXPECT_DOUBLE_EQ(session_qbas_mean(f), 3.0);
  const int items[14] = {6, 6, 6, 6, 6, 6, 6, 2, 2, 2, 2, 2, 2, 2};
  for (int k = 0; k < 14; ++k) f.qbas[k] = items[k];
  EXPECT_DOUBLE_EQ(session_qbas_mean(f), 4.0);
  f.qbas[3].reset();
  EXPECT_THROW(session_qbas_mean(f), ArgumentError);
}

TEST(SessionMean, AggregateMatchesIndependentSum) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> d(0, 6);
  auto r = forms(48);
  double total = 0.0;
  for (auto& f : r) {
    for (auto& q : f.qbas) {
      q = d(rng);
      total += *q;
    }
  }
  const auto scales = scale_descriptives(r);
  const auto it = std::find_if(scales.begin(), scales.end(), [](const ScaleStats& s) { return s.key == "qbas_mean"; });
  ASSERT_NE(it, scales.end());
  EXPECT_NEAR(it->mean, total / (48.0 * 14.0), 1e-12);
}

TEST(ScaleDescriptives, ReportsHolisticOnBothScales) {
  auto r = forms(4);
  r[0].holistic = 1;
  r[1].holistic = 7;
  r[2].holistic = 4;
  r[3].holistic = 4;
  const auto scales = scale_descriptives(r);
  std::map<std::string, ScaleStats> by_key;
  for (const auto& s : scales) by_key[s.key] = s;
  EXPECT_DOUBLE_EQ(by_key.at("holistic").mean, 4.0);
  EXPECT_DOUBLE_EQ(by_key.at("holistic_0_6").mean, 3.0);
  for (const auto& c : assessment::capabilities()) EXPECT_TRUE(by_key.count(std::string(c.key)));
  EXPECT_TRUE(by_key.count("authenticity"));
  EXPECT_TRUE(by_key.count("difficulty"));
}

TEST(Comparisons, TableLayoutAndTestChoice) {
  auto r = forms(12);
  for (int i = 0; i < 12; ++i) r[i].holistic = 1 + i % 7;
  const std::vector<Characteristic> chars{{"openness", "Openness", {"high", "low"}},
                                          {"severity", "Depression severity", {"mild", "moderate", "severe"}}};
  std::vector<RatedSession> sessions;
  const char* sev[] = {"mild", "moderate", "severe"};
  for (int i = 0; i < 12; ++i) {
    sessions.push_back({r[i].session_id, r[i], {{"openness", i % 2 ? "low" : "high"}, {"severity", sev[i % 3]}}});
  }
  const auto rank = characteristic_comparison(sessions, chars, {"holistic", "Single-Item Holistic Rating", OutcomeFamily::rank});
  EXPECT_EQ(rank.summary_heading, "Median (IQR)");
  ASSERT_EQ(rank.rows.size(), 2u);
  EXPECT_EQ(rank.rows[0].label, "Openness");
  EXPECT_EQ(rank.rows[0].subgroups.size(), 2u);
  EXPECT_EQ(rank.rows[0].subgroups[0].label, "High");
  EXPECT_EQ(rank.rows[0].subgroups[0].n, 6u);
  EXPECT_EQ(rank.rows[0].result->test, "wilcoxon_rank_sum");
  EXPECT_EQ(rank.rows[0].statistic_text.rfind("W=", 0), 0u);
  EXPECT_EQ(rank.rows[1].result->test, "kruskal_wallis");
  EXPECT_EQ(rank.rows[1].statistic_text.rfind("H(2)=", 0), 0u);
  EXPECT_NE(rank.footnote.find("uncorrected"), std::string::npos);

  for (int i = 0; i < 12; ++i) sessions[i].rating.qbas[0] = i % 7;
  const auto welch = characteristic_comparison(sessions, chars, {"qbas_mean", "Q-BAS Average", OutcomeFamily::welch});
  EXPECT_EQ(welch.summary_heading, "Mean (SD)");
  EXPECT_EQ(welch.rows[0].result->test, "welch_t");
  EXPECT_EQ(welch.rows[0].statistic_text.rfind("t(", 0), 0u);
  EXPECT_EQ(welch.rows[1].result->test, "welch_anova");
  EXPECT_EQ(welch.rows[1].statistic_text.rfind("F(2,", 0), 0u);
}

TEST(Comparisons, IdenticalOutcomesGiveUnitPValues) {
  const auto r = forms(24);
  const std::vector<Characteristic> chars{{"openness", "Openness", {"high", "low"}},
                                          {"severity", "Depression severity", {"mild", "moderate", "severe"}}};
  std::vector<RatedSession> sessions;
  const char* sev[] = {"mild", "moderate", "severe"};
  for (int i = 0; i < 24; ++i) {
    sessions.push_back({r[i].session_id, r[i], {{"openness", i % 2 ? "low" : "high"}, {"severity", sev[i % 3]}}});
  }
  for (const auto& table : characteristic_comparisons(sessions, chars)) {
    for (const auto& row : table.rows) {
      ASSERT_TRUE(row.result) << table.outcome.key << " " << row.key;
      EXPECT_DOUBLE_EQ(row.result->p_value, 1.0) << table.outcome.key << " " << row.key;
    }
  }
}

TEST(Comparisons, EmptyLevelIsNotComputable) {
  const auto r = forms(6);
  const std::vector<Characteristic> chars{{"gender", "Gender", {"male", "non-binary", "female"}}};
  const auto sessions = rated(r, "gender", {"male", "female"});
  const auto t = characteristic_comparison(sessions, chars, {"holistic", "Holistic", OutcomeFamily::rank});
  EXPECT_EQ(t.rows[0].subgroups[1].summary, "not computable");
  EXPECT_FALSE(t.rows[0].subgroups[1].computable);
  EXPECT_TRUE(t.rows[0].computable);
  EXPECT_EQ(t.rows[0].result->test, "wilcoxon_rank_sum");

  const auto single = rated(r, "gender", {"male"});
  const auto none = characteristic_comparison(single, chars, {"holistic", "Holistic", OutcomeFamily::rank});
  EXPECT_FALSE(none.rows[0].computable);
  EXPECT_FALSE(none.rows[0].note.empty());
}

TEST(Comparisons, DetectsTwoSdShift) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> z(0.0, 1.0);
  int rejections = 0;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> x(24), y(24);
    for (auto& v : x) v = z(rng);
    for (auto& v : y) v = z(rng) + 2.0;
    if (stats::wilcoxon_rank_sum(x, y).p_value < 0.05) ++rejections;
  }
  EXPECT_GE(rejections, 80);
}

TEST(Comparisons, DefaultCharacteristicsFollowMatrix) {
  const auto chars = default_characteristics(persona::default_persona_matrix());
  std::vector<std::string> keys;
  for (const auto& c : chars) keys.push_back(c.key);
  EXPECT_EQ(keys, (std::vector<std::string>{"openness", "severity", "dominance", "chatbot_attitude", "info_disclosure",
                                            "age_group", "gender"}));
  EXPECT_EQ(chars[1].levels, (std::vector<std::string>{"mild", "moderate", "severe"}));
  EXPECT_EQ(chars[1].label, "Depression severity");
}

TEST(Heatmap, RowsInSessionOrderAndExclusions) {
  auto r = forms(48);
  std::reverse(r.begin(), r.end());
  const auto h = export_heatmap(r);
  const auto rows = assessment::parse_csv(h.qbas_csv);
  ASSERT_EQ(rows.size(), 49u);
  EXPECT_EQ(rows[0].cells.size(), 15u);
  EXPECT_EQ(rows[1].cells[0], "S001");
  EXPECT_EQ(rows[48].cells[0], "S048");
  EXPECT_EQ(assessment::parse_csv(h.capabilities_csv)[0].cells.size(), 8u);

  const auto one = export_heatmap(forms(1));
  EXPECT_EQ(assessment::parse_csv(one.qbas_csv).size(), 2u);

  std::vector<std::string> all;
  for (int i = 1; i <= 50; ++i) all.push_back(fixtures::session_id(i));
  EXPECT_EQ(export_heatmap(forms(48), all).excluded, 2u);
  EXPECT_THROW(export_heatmap(std::vector<RatingForm>{}), EmptyOutputError);

  fixtures::TempDir dir;
  const auto paths = write_heatmap(h, dir.path());
  ASSERT_EQ(paths.size(), 2u);
  EXPECT_EQ(fixtures::read_file(paths[0]), h.qbas_csv);
}

TEST(Report, AllFamiliesAndSelection) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> q(0, 6), l(1, 7);
  auto r = forms(24);
  for (auto& f : r) {
    for (auto& v : f.qbas) v = q(rng);
    f.holistic = l(rng);
  }
  const auto sessions = rated(r, "openness", {"high", "low"});
  const std::vector<Characteristic> chars{{"openness", "Openness", {"high", "low"}}};
  ReportOptions opt;
  opt.reml.bootstrap_reps = 10;
  const auto report = build_report(sessions, chars, opt);
  for (const auto& family : table_families()) EXPECT_TRUE(report["tables"].contains(family)) << family;
  EXPECT_EQ(report["n_ratings"], 24);
  EXPECT_EQ(report["tables"]["adequacy"]["rows"].size(), 14u);
  EXPECT_EQ(report["tables"]["comparisons"].size(), comparison_outcomes().size());
  EXPECT_TRUE(report["tables"]["variance"]["computable"].get<bool>());
  EXPECT_EQ(report["tables"]["variance"]["components"].size(), 3u);
  EXPECT_NE(render_report_text(report).find("Q-BAS component adequacy"), std::string::npos);

  ReportOptions only;
  only.tables = {"adequacy"};
  const auto partial = build_report(sessions, chars, only);
  EXPECT_EQ(partial["tables"].size(), 1u);
  only.tables = {"bogus"};
  EXPECT_THROW(build_report(sessions, chars, only), ArgumentError);
  EXPECT_THROW(build_report(std::vector<RatedSession>{}, chars, {}), EmptyOutputError);
}

TEST(JoinRatings, AttachesPersonaLevels) {
  const auto u = fixtures::accepted_user("U0001", "severe");
  const auto t = fixtures::transcript("S001", "U0001");
  const std::vector<RatingForm> r{fixtures::form("S001", "R01"), fixtures::form("S404", "R01")};
  const auto joined = join_ratings(r, std::vector{t}, std::vector{u});
  ASSERT_EQ(joined.size(), 2u);
  EXPECT_EQ(joined[0].levels.at("severity"), "severe");
  EXPECT_TRUE(joined[1].levels.empty());
}
