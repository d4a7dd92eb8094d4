#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace simeval::stats {

struct GroupSummary {
  std::string label;
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

/// A test statistic with its reference distribution.
struct StatResult {
  std::string test;            // "wilcoxon_rank_sum", "kruskal_wallis", "welch_t", "welch_anova"
  std::string statistic_name;  // "W", "H", "t", "F"
  double statistic = 0.0;
  std::vector<double> df;  // empty when undefined
  double p_value = 1.0;
  bool exact = false;               // Wilcoxon: enumeration rather than normal approximation
  bool infinite_statistic = false;  // zero variance with unequal means
  std::string note;
  std::vector<GroupSummary> groups;
};

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_sd(std::span<const double> v);
/// Hyndman-Fan type 7 quantile, the default of most statistics packages.
double quantile(std::span<const double> v, double prob);
GroupSummary summarize(std::string label, std::span<const double> v);

/// Ranks of the pooled values with ties sharing the mean of their positions.
std::vector<double> midranks(std::span<const double> values);

enum class WilcoxonMode { automatic, exact, normal };

/// Largest pooled sample size for which `automatic` enumerates.
inline constexpr std::size_t kExactWilcoxonLimit = 12;

/// W is the sum of the midranks of `x` in the pooled sample. The two-sided
/// exact p-value is P(|W - E[W]| >= |w - E[W]|) under all equally likely
/// splits of the observed midranks; the normal approximation uses the tie
/// corrected variance and a 0.5 continuity correction.
StatResult wilcoxon_rank_sum(std::span<const double> x, std::span<const double> y,
                             WilcoxonMode mode = WilcoxonMode::automatic);

/// Tie-corrected H against chi-square with k - 1 degrees of freedom.
StatResult kruskal_wallis(std::span<const std::vector<double>> groups);

/// Unequal-variance t with Welch-Satterthwaite degrees of freedom.
StatResult welch_t(std::span<const double> x, std::span<const double> y);

/// Welch's heteroscedastic one-way ANOVA.
StatResult welch_anova(std::span<const std::vector<double>> groups);

// Display ---------------------------------------------------------------------

/// printf-style fixed rounding, so 0.5625 at one decimal of a percent is "56.2".
std::string format_fixed(double value, int decimals);
/// count / n as a percentage with one decimal, e.g. "97.9%".
std::string format_percent(std::size_t count, std::size_t n);
/// Three decimals, "<0.001" below that.
std::string format_p(double p);

}  // namespace simeval::stats
