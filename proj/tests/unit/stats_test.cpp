#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "simeval/errors.hpp"
#include "simeval/stats.hpp"
#include "support/oracles.hpp"

using namespace simeval;
using namespace simeval::stats;

namespace {

std::vector<double> draw_ties(std::mt19937_64& rng, std::size_t n, int distinct) {
  std::uniform_int_distribution<int> d(0, distinct - 1);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST(Descriptives, MeanSdAndType7Quantiles) {
  const std::vector<double> v{1, 2, 3, 4, 10};
  EXPECT_DOUBLE_EQ(mean(v), 4.0);
  EXPECT_NEAR(sample_sd(v), std::sqrt(12.5), 1e-12);
  EXPECT_DOUBLE_EQ(quantile(v, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(quantile(v, 0.25), 2.0);
  EXPECT_DOUBLE_EQ(quantile(v, 0.75), 4.0);
  const std::vector<double> w{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile(w, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(sample_sd(std::vector<double>{5.0}), 0.0);
}

TEST(Descriptives, MidranksShareTiedPositions) {
  const std::vector<double> v{10, 20, 20, 30, 20};
  EXPECT_EQ(midranks(v), (std::vector<double>{1, 3, 3, 5, 3}));
}

TEST(Wilcoxon, SeparatedTriplesGiveOneTenth) {
  const std::vector<double> x{1, 2, 3}, y{4, 5, 6};
  const auto r = wilcoxon_rank_sum(x, y);
  EXPECT_TRUE(r.exact);
  EXPECT_DOUBLE_EQ(r.statistic, 6.0);
  EXPECT_NEAR(r.p_value, 0.1, 1e-12);
  EXPECT_EQ(r.statistic_name, "W");
}

TEST(Wilcoxon, IdenticalSamplesHaveNoSeparation) {
  const std::vector<double> x{1, 2, 3, 4}, y{1, 2, 3, 4};
  EXPECT_GE(wilcoxon_rank_sum(x, y).p_value, 0.999);
  const std::vector<double> big(20, 2.0);
  std::vector<double> big2{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  EXPECT_GE(wilcoxon_rank_sum(big2, big2).p_value, 0.999);
  const auto tied = wilcoxon_rank_sum(big, big);
  EXPECT_DOUBLE_EQ(tied.p_value, 1.0);
  EXPECT_DOUBLE_EQ(tied.statistic, 20 * 20.5);
}

TEST(Wilcoxon, ExactMatchesEnumerationWithTies) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const auto x = draw_ties(rng, 3 + trial % 3, 3);
    const auto y = draw_ties(rng, 4 + trial % 4, 3);
    const auto expected = oracle::wilcoxon_enumeration(x, y);
    const auto got = wilcoxon_rank_sum(x, y, WilcoxonMode::exact);
    EXPECT_NEAR(got.statistic, expected.w, 1e-12);
    EXPECT_NEAR(got.p_value, expected.p, 1e-12);
  }
}

TEST(Wilcoxon, AutomaticModeSwitchesToNormalAboveLimit) {
  std::vector<double> x, y;
  for (int i = 0; i < 7; ++i) {
    x.push_back(i);
    y.push_back(i + 3.5);
  }
  const auto r = wilcoxon_rank_sum(x, y);
  EXPECT_FALSE(r.exact);
  EXPECT_GT(r.p_value, 0.0);
  EXPECT_LT(r.p_value, 1.0);
  const auto forced = wilcoxon_rank_sum(x, y, WilcoxonMode::exact);
  EXPECT_TRUE(forced.exact);
  EXPECT_NEAR(forced.p_value, r.p_value, 0.03);
}

TEST(Wilcoxon, NormalApproximationMatchesHandComputation) {
  // x ranks 1..6 of 12 untied values: W = 21, E = 39, Var = 39, z = (18 - 0.5) / sqrt(39).
  std::vector<double> x{1, 2, 3, 4, 5, 6}, y{7, 8, 9, 10, 11, 12};
  const auto r = wilcoxon_rank_sum(x, y, WilcoxonMode::normal);
  const double z = 17.5 / std::sqrt(39.0);
  EXPECT_NEAR(r.p_value, std::erfc(z / std::sqrt(2.0)), 1e-12);
}

TEST(Wilcoxon, RejectsEmptyGroups) {
  const std::vector<double> x{1}, none;
  EXPECT_THROW(wilcoxon_rank_sum(x, none), ArgumentError);
}

TEST(KruskalWallis, MatchesFormulaOracle) {
  std::vector<std::vector<double>> g{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  auto r = kruskal_wallis(g);
  EXPECT_NEAR(r.statistic, oracle::kruskal_h(g), 1e-12);
  EXPECT_NEAR(r.statistic, 7.2, 1e-12);
  EXPECT_EQ(r.df, std::vector<double>{2.0});
  EXPECT_NEAR(r.p_value, std::exp(-3.6), 1e-12);

  std::vector<std::vector<double>> tied{{1, 1, 2, 3}, {2, 2, 3}, {3, 4, 4, 4, 1}};
  EXPECT_NEAR(kruskal_wallis(tied).statistic, oracle::kruskal_h(tied), 1e-12);
}

TEST(KruskalWallis, AllTiedIsNull) {
  std::vector<std::vector<double>> g{{2, 2}, {2, 2, 2}, {2}};
  const auto r = kruskal_wallis(g);
  EXPECT_DOUBLE_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0);
}

TEST(KruskalWallis, TwoGroupsAcceptedWithNote) {
  std::vector<std::vector<double>> g{{1, 2}, {3, 4}};
  const auto r = kruskal_wallis(g);
  EXPECT_FALSE(r.note.empty());
  EXPECT_EQ(r.df, std::vector<double>{1.0});
}

TEST(RankTests, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> x(6 + trial % 5), y(9);
    for (auto& v : x) v = std::round(z(rng) * 2.0);
    for (auto& v : y) v = std::round(z(rng) * 2.0 + 0.5);
    auto ex = x, ey = y;
    for (auto& v : ex) v = std::exp(v);
    for (auto& v : ey) v = std::exp(v);
    EXPECT_DOUBLE_EQ(wilcoxon_rank_sum(x, y).p_value, wilcoxon_rank_sum(ex, ey).p_value);
    std::vector<std::vector<double>> g{x, y, {0.0, 1.0, -1.0}}, eg{ex, ey, {1.0, std::exp(1.0), std::exp(-1.0)}};
    EXPECT_DOUBLE_EQ(kruskal_wallis(g).p_value, kruskal_wallis(eg).p_value);
  }
}

TEST(WelchT, IdenticalGroupsAreNull) {
  const std::vector<double> x{1, 3, 4, 8};
  const auto r = welch_t(x, x);
  EXPECT_DOUBLE_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0);
}

TEST(WelchT, MatchesSatterthwaiteOracle) {
  const std::vector<double> x{19.1, 21.4, 18.7, 23.2, 20.5, 22.0}, y{25.3, 31.8, 22.1, 28.4, 35.0};
  const auto o = oracle::welch_t(x, y);
  const auto r = welch_t(x, y);
  EXPECT_NEAR(r.statistic, o.t, 1e-9);
  ASSERT_EQ(r.df.size(), 1u);
  EXPECT_NEAR(r.df[0], o.df, 1e-9);
  EXPECT_GT(r.p_value, 0.0);
  EXPECT_LT(r.p_value, 0.05);
}

TEST(WelchT, ZeroVarianceCases) {
  const std::vector<double> a{2, 2, 2}, b{2, 2}, c{3, 3, 3};
  auto same = welch_t(a, b);
  EXPECT_DOUBLE_EQ(same.statistic, 0.0);
  EXPECT_DOUBLE_EQ(same.p_value, 1.0);
  auto apart = welch_t(a, c);
  EXPECT_TRUE(apart.infinite_statistic);
  EXPECT_TRUE(std::isinf(apart.statistic));
  EXPECT_DOUBLE_EQ(apart.p_value, 0.0);
  EXPECT_THROW(welch_t(std::vector<double>{1.0}, c), ArgumentError);
}

TEST(WelchAnova, MatchesOracleAndNullCase) {
  std::vector<std::vector<double>> g{{4.1, 5.2, 3.9, 6.0}, {7.3, 8.8, 6.1, 9.9, 7.7}, {5.0, 5.5, 4.2}};
  const auto o = oracle::welch_anova(g);
  const auto r = welch_anova(g);
  EXPECT_NEAR(r.statistic, o.f, 1e-9);
  ASSERT_EQ(r.df.size(), 2u);
  EXPECT_NEAR(r.df[0], o.df1, 1e-12);
  EXPECT_NEAR(r.df[1], o.df2, 1e-9);

  std::vector<std::vector<double>> equal{{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  const auto n = welch_anova(equal);
  EXPECT_NEAR(n.statistic, 0.0, 1e-12);
  EXPECT_NEAR(n.p_value, 1.0, 1e-12);
}

TEST(Formatting, PercentAndPValueText) {
  EXPECT_EQ(format_percent(47, 48), "97.9%");
  EXPECT_EQ(format_percent(27, 48), "56.2%");
  EXPECT_EQ(format_percent(48, 48), "100.0%");
  EXPECT_EQ(format_fixed(-0.001, 2), "0.00");
  EXPECT_EQ(format_fixed(231.5, 2), "231.50");
  EXPECT_EQ(format_p(0.0004), "<0.001");
  EXPECT_EQ(format_p(0.6574), "0.657");
}
