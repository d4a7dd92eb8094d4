#include "simeval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "simeval/errors.hpp"

namespace simeval::stats {

namespace bm = boost::math;

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw ArgumentError(std::string(what) + " contains a non-finite value");
  }
}

double clamp_p(double p) { return std::clamp(p, 0.0, 1.0); }

double tie_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double total = 0.0;
  for (std::size_t i = 0; i < values.size();) {
    std::size_t j = i;
    while (j < values.size() && values[j] == values[i]) ++j;
    const double t = static_cast<double>(j - i);
    total += t * t * t - t;
    i = j;
  }
  return total;
}

std::vector<double> pooled(std::span<const std::vector<double>> groups) {
  std::vector<double> all;
  for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
  return all;
}

}  // namespace

double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double quantile(std::span<const double> v, double prob) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const double h = (static_cast<double>(s.size()) - 1.0) * std::clamp(prob, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

GroupSummary summarize(std::string label, std::span<const double> v) {
  GroupSummary g;
  g.label = std::move(label);
  g.n = v.size();
  if (v.empty()) return g;
  g.mean = mean(v);
  g.sd = sample_sd(v);
  g.median = quantile(v, 0.5);
  g.q1 = quantile(v, 0.25);
  g.q3 = quantile(v, 0.75);
  return g;
}

std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

namespace {

// Doubled midranks are integers, so the null distribution of 2W is a
// distribution over integers and the two-sided tail comparison is exact.
double exact_rank_sum_p(const std::vector<double>& ranks, std::size_t n1) {
  const std::size_t n = ranks.size();
  std::vector<long> doubled(n);
  long total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    doubled[i] = std::lround(2.0 * ranks[i]);
    total += doubled[i];
  }
  // counts[k][s]: number of k-subsets of the items seen so far with doubled sum s.
  std::vector<std::vector<double>> counts(n1 + 1, std::vector<double>(static_cast<std::size_t>(total) + 1, 0.0));
  counts[0][0] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(doubled[i]);
    for (std::size_t k = std::min(i + 1, n1); k >= 1; --k) {
      auto& dst = counts[k];
      const auto& src = counts[k - 1];
      for (std::size_t s = dst.size(); s-- > r;) dst[s] += src[s - r];
    }
  }
  long observed = 0;
  for (std::size_t i = 0; i < n1; ++i) observed += doubled[i];
  // E[2W] = n1 (N + 1); compare |2W - E| against the observed deviation.
  const long expected = static_cast<long>(n1) * static_cast<long>(n + 1);
  const long dev = std::labs(observed - expected);
  double extreme = 0.0;
  double all = 0.0;
  const auto& dist = counts[n1];
  for (std::size_t s = 0; s < dist.size(); ++s) {
    if (dist[s] == 0.0) continue;
    all += dist[s];
    if (std::labs(static_cast<long>(s) - expected) >= dev) extreme += dist[s];
  }
  return clamp_p(extreme / all);
}

}  // namespace

StatResult wilcoxon_rank_sum(std::span<const double> x, std::span<const double> y, WilcoxonMode mode) {
  if (x.empty() || y.empty()) throw ArgumentError("rank-sum test needs at least one value per group");
  require_finite(x, "x");
  require_finite(y, "y");

  std::vector<double> all(x.begin(), x.end());
  all.insert(all.end(), y.begin(), y.end());
  const auto ranks = midranks(all);
  const std::size_t n1 = x.size();
  const std::size_t n2 = y.size();
  const double nn = static_cast<double>(n1 + n2);

  StatResult r;
  r.test = "wilcoxon_rank_sum";
  r.statistic_name = "W";
  r.statistic = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(n1), 0.0);
  r.groups = {summarize("x", x), summarize("y", y)};

  const bool all_tied = std::all_of(all.begin(), all.end(), [&](double v) { return v == all.front(); });
  if (all_tied) {
    r.p_value = 1.0;
    r.exact = mode != WilcoxonMode::normal;
    r.note = "all values identical";
    return r;
  }

  const bool use_exact = mode == WilcoxonMode::exact ||
                         (mode == WilcoxonMode::automatic && n1 + n2 <= kExactWilcoxonLimit);
  if (use_exact) {
    r.exact = true;
    r.p_value = exact_rank_sum_p(ranks, n1);
    return r;
  }

  const double expected = static_cast<double>(n1) * (nn + 1.0) / 2.0;
  const double variance = static_cast<double>(n1 * n2) / 12.0 *
                          ((nn + 1.0) - tie_sum(all) / (nn * (nn - 1.0)));
  const double diff = r.statistic - expected;
  const double corrected = diff - (diff > 0 ? 0.5 : diff < 0 ? -0.5 : 0.0);
  const double z = corrected / std::sqrt(variance);
  r.p_value = clamp_p(2.0 * bm::cdf(bm::complement(bm::normal(), std::fabs(z))));
  return r;
}

StatResult kruskal_wallis(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) throw ArgumentError("Kruskal-Wallis needs at least two groups");
  for (const auto& g : groups) {
    if (g.empty()) throw ArgumentError("Kruskal-Wallis group is empty");
    require_finite(g, "group");
  }
  const auto all = pooled(groups);
  const auto ranks = midranks(all);
  const double n = static_cast<double>(all.size());

  StatResult r;
  r.test = "kruskal_wallis";
  r.statistic_name = "H";
  r.df = {static_cast<double>(groups.size() - 1)};
  if (groups.size() == 2) r.note = "two groups";

  double sum_sq = 0.0;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto len = groups[i].size();
    const double rsum = std::accumulate(ranks.begin() + static_cast<std::ptrdiff_t>(offset),
                                        ranks.begin() + static_cast<std::ptrdiff_t>(offset + len), 0.0);
    sum_sq += rsum * rsum / static_cast<double>(len);
    offset += len;
    r.groups.push_back(summarize("group " + std::to_string(i + 1), groups[i]));
  }
  const double correction = 1.0 - tie_sum(all) / (n * n * n - n);
  if (correction <= 0.0) {
    r.statistic = 0.0;
    r.p_value = 1.0;
    r.note = "all values identical";
    return r;
  }
  const double h = (12.0 / (n * (n + 1.0)) * sum_sq - 3.0 * (n + 1.0)) / correction;
  r.statistic = std::max(h, 0.0);
  r.p_value = clamp_p(bm::cdf(bm::complement(bm::chi_squared(r.df[0]), r.statistic)));
  return r;
}

StatResult welch_t(std::span<const double> x, std::span<const double> y) {
  if (x.size() < 2 || y.size() < 2) throw ArgumentError("Welch t needs at least two values per group");
  require_finite(x, "x");
  require_finite(y, "y");

  StatResult r;
  r.test = "welch_t";
  r.statistic_name = "t";
  r.groups = {summarize("x", x), summarize("y", y)};
  const auto& gx = r.groups[0];
  const auto& gy = r.groups[1];
  const double vx = gx.sd * gx.sd / static_cast<double>(gx.n);
  const double vy = gy.sd * gy.sd / static_cast<double>(gy.n);
  const double se2 = vx + vy;
  const double diff = gx.mean - gy.mean;

  if (se2 == 0.0) {
    r.note = "zero variance in both groups";
    if (diff == 0.0) {
      r.statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.statistic = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
      r.infinite_statistic = true;
    }
    return r;
  }
  const double df = se2 * se2 /
                    (vx * vx / static_cast<double>(gx.n - 1) + vy * vy / static_cast<double>(gy.n - 1));
  r.statistic = diff / std::sqrt(se2);
  r.df = {df};
  r.p_value = clamp_p(2.0 * bm::cdf(bm::complement(bm::students_t(df), std::fabs(r.statistic))));
  return r;
}

StatResult welch_anova(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) throw ArgumentError("Welch ANOVA needs at least two groups");
  StatResult r;
  r.test = "welch_anova";
  r.statistic_name = "F";
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].size() < 2) throw ArgumentError("Welch ANOVA needs at least two values per group");
    require_finite(groups[i], "group");
    r.groups.push_back(summarize("group " + std::to_string(i + 1), groups[i]));
  }

  const bool any_constant = std::any_of(r.groups.begin(), r.groups.end(),
                                        [](const GroupSummary& g) { return g.sd == 0.0; });
  if (any_constant) {
    r.note = "zero variance in at least one group";
    const double m0 = r.groups.front().mean;
    const bool equal_means = std::all_of(r.groups.begin(), r.groups.end(),
                                         [&](const GroupSummary& g) { return g.mean == m0; });
    if (equal_means) {
      r.statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.statistic = std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
      r.infinite_statistic = true;
    }
    return r;
  }

  const double k = static_cast<double>(groups.size());
  double wsum = 0.0;
  double wmean = 0.0;
  std::vector<double> w;
  for (const auto& g : r.groups) {
    w.push_back(static_cast<double>(g.n) / (g.sd * g.sd));
    wsum += w.back();
    wmean += w.back() * g.mean;
  }
  wmean /= wsum;
  double a = 0.0;
  double tmp = 0.0;
  for (std::size_t i = 0; i < r.groups.size(); ++i) {
    const auto& g = r.groups[i];
    a += w[i] * (g.mean - wmean) * (g.mean - wmean);
    const double frac = 1.0 - w[i] / wsum;
    tmp += frac * frac / static_cast<double>(g.n - 1);
  }
  a /= (k - 1.0);
  const double f = a / (1.0 + 2.0 * (k - 2.0) * tmp / (k * k - 1.0));
  const double df2 = (k * k - 1.0) / (3.0 * tmp);
  r.statistic = f;
  r.df = {k - 1.0, df2};
  r.p_value = clamp_p(bm::cdf(bm::complement(bm::fisher_f(k - 1.0, df2), f)));
  return r;
}

std::string format_fixed(double value, int decimals) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (std::isnan(value)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  std::string s = buf;
  // Drop the sign of a rounded negative zero.
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

std::string format_percent(std::size_t count, std::size_t n) {
  if (n == 0) return "NA";
  return format_fixed(100.0 * static_cast<double>(count) / static_cast<double>(n), 1) + "%";
}

std::string format_p(double p) {
  if (std::isnan(p)) return "NA";
  if (p < 0.001) return "<0.001";
  return format_fixed(p, 3);
}

}  // namespace simeval::stats
