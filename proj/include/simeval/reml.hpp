#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace simeval::reml {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct RemlOptions {
  int bootstrap_reps = 1000;
  std::uint64_t seed = 0;
  double ci_level = 0.95;
  int max_iterations = 2000;  // per simplex run
  int max_restarts = 5;
  double tolerance = 1e-10;
};

/// Fit of y = mu + a_session + b_component + e with independent normal
/// effects. Variances are on the score scale.
struct VarianceDecomposition {
  double intercept = 0.0;
  double var_session = 0.0;
  double var_component = 0.0;
  double var_residual = 0.0;
  /// session, component, residual; sums to 1.
  std::array<double, 3> proportions{};
  Interval ci_session;
  Interval ci_component;
  Interval ci_residual;
  double deviance = 0.0;  // -2 restricted log-likelihood at the optimum
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
  int restarts = 0;
  int bootstrap_reps = 0;
  int bootstrap_failures = 0;
  std::size_t n_obs = 0;
  std::size_t n_sessions = 0;
  std::size_t n_components = 0;
  /// Best deviance after every simplex iteration across all restarts.
  std::vector<double> trace;
};

/// Crossed two-factor random-intercept model on integer-coded levels.
/// The likelihood is evaluated on the penalized normal equations with the
/// larger factor's diagonal block eliminated, so the dense work is
/// (smaller factor + 1) squared.
class CrossedRemlProblem {
 public:
  CrossedRemlProblem(std::vector<double> y, std::vector<int> factor_a, int levels_a,
                     std::vector<int> factor_b, int levels_b);

  /// -2 log restricted likelihood with the residual variance profiled out.
  /// gamma_x = var_x / var_residual, passed on the log scale.
  double deviance(double log_gamma_a, double log_gamma_b) const;

  struct Solution {
    double deviance = 0.0;
    double intercept = 0.0;
    double var_a = 0.0;
    double var_b = 0.0;
    double var_residual = 0.0;
  };
  Solution solve(double log_gamma_a, double log_gamma_b) const;

  std::size_t size() const { return y_.size(); }
  int levels_a() const { return levels_a_; }
  int levels_b() const { return levels_b_; }
  const std::vector<int>& factor_a() const { return a_; }
  const std::vector<int>& factor_b() const { return b_; }

  /// Same design with a new response vector.
  CrossedRemlProblem with_response(std::vector<double> y) const;

 private:
  struct Cell {
    int column;
    double count;
  };

  std::vector<double> y_;
  std::vector<int> a_;
  std::vector<int> b_;
  int levels_a_;
  int levels_b_;
  bool a_is_rows_;  // the factor with more levels is eliminated first
  std::vector<int> rows_;
  std::vector<int> cols_;
  int n_rows_ = 0;
  int n_cols_ = 0;
  std::vector<std::vector<Cell>> cells_by_row_;
  std::vector<double> row_counts_;
  std::vector<double> col_counts_;
};

inline constexpr double kLogGammaBound = 25.0;

struct Fit {
  CrossedRemlProblem::Solution solution;
  double log_gamma_a = 0.0;
  double log_gamma_b = 0.0;
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
  int restarts = 0;
  std::vector<double> trace;
};

/// Derivative-free simplex search over the box [-25, 25]^2 of log variance
/// ratios, restarted from the incumbent until a restart no longer improves.
Fit fit_reml(const CrossedRemlProblem& problem, const RemlOptions& options = {});

/// One score per (session, component) cell; missing cells are allowed.
/// Throws ArgumentError for fewer than two sessions or components,
/// duplicate cells, non-finite scores, or scores without any variation.
VarianceDecomposition reml_variance_decomposition(std::span<const double> scores,
                                                  std::span<const std::string> session_ids,
                                                  std::span<const std::string> component_ids,
                                                  const RemlOptions& options = {});

}  // namespace simeval::reml
