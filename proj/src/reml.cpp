#include "simeval/reml.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "simeval/errors.hpp"
#include "simeval/rng.hpp"
#include "simeval/stats.hpp"

namespace simeval::reml {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

CrossedRemlProblem::CrossedRemlProblem(std::vector<double> y, std::vector<int> factor_a, int levels_a,
                                       std::vector<int> factor_b, int levels_b)
    : y_(std::move(y)), a_(std::move(factor_a)), b_(std::move(factor_b)), levels_a_(levels_a), levels_b_(levels_b) {
  if (a_.size() != y_.size() || b_.size() != y_.size()) {
    throw ArgumentError("response and factor vectors differ in length");
  }
  if (levels_a < 1 || levels_b < 1) throw ArgumentError("each factor needs at least one level");
  if (y_.size() < 2) throw ArgumentError("at least two observations are required");
  for (std::size_t i = 0; i < y_.size(); ++i) {
    if (a_[i] < 0 || a_[i] >= levels_a || b_[i] < 0 || b_[i] >= levels_b) {
      throw ArgumentError("factor level out of range");
    }
  }

  a_is_rows_ = levels_a_ >= levels_b_;
  rows_ = a_is_rows_ ? a_ : b_;
  cols_ = a_is_rows_ ? b_ : a_;
  n_rows_ = a_is_rows_ ? levels_a_ : levels_b_;
  n_cols_ = a_is_rows_ ? levels_b_ : levels_a_;

  row_counts_.assign(static_cast<std::size_t>(n_rows_), 0.0);
  col_counts_.assign(static_cast<std::size_t>(n_cols_), 0.0);
  std::vector<std::map<int, double>> cells(static_cast<std::size_t>(n_rows_));
  for (std::size_t i = 0; i < y_.size(); ++i) {
    row_counts_[static_cast<std::size_t>(rows_[i])] += 1.0;
    col_counts_[static_cast<std::size_t>(cols_[i])] += 1.0;
    cells[static_cast<std::size_t>(rows_[i])][cols_[i]] += 1.0;
  }
  cells_by_row_.resize(cells.size());
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (const auto& [col, count] : cells[r]) cells_by_row_[r].push_back({col, count});
  }
}

CrossedRemlProblem CrossedRemlProblem::with_response(std::vector<double> y) const {
  return CrossedRemlProblem(std::move(y), a_, levels_a_, b_, levels_b_);
}

double CrossedRemlProblem::deviance(double log_gamma_a, double log_gamma_b) const {
  return solve(log_gamma_a, log_gamma_b).deviance;
}

CrossedRemlProblem::Solution CrossedRemlProblem::solve(double log_gamma_a, double log_gamma_b) const {
  const double lg_rows = a_is_rows_ ? log_gamma_a : log_gamma_b;
  const double lg_cols = a_is_rows_ ? log_gamma_b : log_gamma_a;
  const double t1 = std::exp(0.5 * lg_rows);
  const double t2 = std::exp(0.5 * lg_cols);
  const int c = n_cols_;
  const auto nobs = static_cast<double>(y_.size());

  // Penalized normal equations in (u_rows, u_cols, beta). The row block is
  // diagonal and is eliminated into the (cols + 1) Schur complement K.
  std::vector<double> rhs_rows(static_cast<std::size_t>(n_rows_), 0.0);
  Eigen::VectorXd rhs(c + 1);
  rhs.setZero();
  for (std::size_t i = 0; i < y_.size(); ++i) {
    rhs_rows[static_cast<std::size_t>(rows_[i])] += t1 * y_[i];
    rhs(cols_[i]) += t2 * y_[i];
    rhs(c) += y_[i];
  }

  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(c + 1, c + 1);
  for (int j = 0; j < c; ++j) {
    k(j, j) = t2 * t2 * col_counts_[static_cast<std::size_t>(j)] + 1.0;
    k(j, c) = k(c, j) = t2 * col_counts_[static_cast<std::size_t>(j)];
  }
  k(c, c) = nobs;

  std::vector<double> diag(static_cast<std::size_t>(n_rows_));
  double logdet = 0.0;
  for (int r = 0; r < n_rows_; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    const double d = t1 * t1 * row_counts_[ru] + 1.0;
    diag[ru] = d;
    logdet += std::log(d);
    const auto& cells = cells_by_row_[ru];
    const double qc = t1 * row_counts_[ru];
    for (const auto& p : cells) {
      const double qp = t1 * t2 * p.count;
      for (const auto& q : cells) k(p.column, q.column) -= qp * (t1 * t2 * q.count) / d;
      k(p.column, c) -= qp * qc / d;
      k(c, p.column) -= qp * qc / d;
      rhs(p.column) -= qp * rhs_rows[ru] / d;
    }
    k(c, c) -= qc * qc / d;
    rhs(c) -= qc * rhs_rows[ru] / d;
  }

  Solution s;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) {
    s.deviance = kInf;
    return s;
  }
  const Eigen::MatrixXd l = llt.matrixL();
  for (int j = 0; j <= c; ++j) logdet += 2.0 * std::log(l(j, j));
  const Eigen::VectorXd x2 = llt.solve(rhs);

  std::vector<double> u_rows(static_cast<std::size_t>(n_rows_));
  double penalty = 0.0;
  for (int r = 0; r < n_rows_; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    double acc = rhs_rows[ru] - t1 * row_counts_[ru] * x2(c);
    for (const auto& p : cells_by_row_[ru]) acc -= t1 * t2 * p.count * x2(p.column);
    u_rows[ru] = acc / diag[ru];
    penalty += u_rows[ru] * u_rows[ru];
  }
  for (int j = 0; j < c; ++j) penalty += x2(j) * x2(j);

  const double beta = x2(c);
  double rss = 0.0;
  for (std::size_t i = 0; i < y_.size(); ++i) {
    const double fit = beta + t1 * u_rows[static_cast<std::size_t>(rows_[i])] + t2 * x2(cols_[i]);
    rss += (y_[i] - fit) * (y_[i] - fit);
  }
  const double r2 = rss + penalty;
  const double dof = nobs - 1.0;
  if (!(r2 > 0.0) || !std::isfinite(logdet)) {
    s.deviance = kInf;
    return s;
  }
  s.deviance = logdet + dof * (1.0 + std::log(2.0 * std::numbers::pi * r2 / dof));
  s.intercept = beta;
  s.var_residual = r2 / dof;
  s.var_a = std::exp(log_gamma_a) * s.var_residual;
  s.var_b = std::exp(log_gamma_b) * s.var_residual;
  return s;
}

// ---------------------------------------------------------------------------
// Optimizer

namespace {

using Point = std::array<double, 2>;

Point project(Point p) {
  for (double& v : p) v = std::clamp(v, -kLogGammaBound, kLogGammaBound);
  return p;
}

struct SimplexRun {
  Point best{};
  double value = kInf;
  int iterations = 0;
  bool converged = false;
};

template <typename F>
SimplexRun nelder_mead(F&& f, Point start, double step, const RemlOptions& opt, std::vector<double>& trace,
                       double& global_best, int& evaluations) {
  std::array<Point, 3> x{};
  std::array<double, 3> fx{};
  auto eval = [&](const Point& p) {
    ++evaluations;
    const double v = f(p);
    return std::isfinite(v) ? v : kInf;
  };
  x[0] = project(start);
  x[1] = project({start[0] + step, start[1]});
  x[2] = project({start[0], start[1] + step});
  if (x[1] == x[0]) x[1] = project({start[0] - step, start[1]});
  if (x[2] == x[0]) x[2] = project({start[0], start[1] - step});
  for (int i = 0; i < 3; ++i) fx[i] = eval(x[i]);

  SimplexRun run;
  for (run.iterations = 0; run.iterations < opt.max_iterations; ++run.iterations) {
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fx[a] < fx[b]; });
    const Point xb = x[idx[0]], xm = x[idx[1]], xw = x[idx[2]];
    const double fb = fx[idx[0]], fm = fx[idx[1]], fw = fx[idx[2]];
    global_best = std::min(global_best, fb);
    trace.push_back(global_best);

    const double spread = std::fabs(fw - fb);
    const double diameter = std::max({std::hypot(xm[0] - xb[0], xm[1] - xb[1]),
                                      std::hypot(xw[0] - xb[0], xw[1] - xb[1])});
    if (std::isfinite(fw) && spread <= opt.tolerance * (1.0 + std::fabs(fb)) && diameter < 1e-6) {
      run.converged = true;
      break;
    }

    const Point centroid{(xb[0] + xm[0]) / 2.0, (xb[1] + xm[1]) / 2.0};
    auto along = [&](double t) {
      return project({centroid[0] + t * (xw[0] - centroid[0]), centroid[1] + t * (xw[1] - centroid[1])});
    };
    const Point xr = along(-1.0);
    const double fr = eval(xr);
    Point next = xw;
    double fnext = fw;
    bool shrink = false;
    if (fr < fb) {
      const Point xe = along(-2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        next = xe;
        fnext = fe;
      } else {
        next = xr;
        fnext = fr;
      }
    } else if (fr < fm) {
      next = xr;
      fnext = fr;
    } else {
      const bool outside = fr < fw;
      const Point xc = along(outside ? -0.5 : 0.5);
      const double fc = eval(xc);
      if (fc < (outside ? fr : fw)) {
        next = xc;
        fnext = fc;
      } else {
        shrink = true;
      }
    }
    if (shrink) {
      for (int i : {idx[1], idx[2]}) {
        x[i] = project({xb[0] + 0.5 * (x[i][0] - xb[0]), xb[1] + 0.5 * (x[i][1] - xb[1])});
        fx[i] = eval(x[i]);
      }
    } else {
      x[idx[2]] = next;
      fx[idx[2]] = fnext;
    }
  }
  const auto best = std::min_element(fx.begin(), fx.end()) - fx.begin();
  run.best = x[static_cast<std::size_t>(best)];
  run.value = fx[static_cast<std::size_t>(best)];
  global_best = std::min(global_best, run.value);
  return run;
}

}  // namespace

Fit fit_reml(const CrossedRemlProblem& problem, const RemlOptions& options) {
  Fit fit;
  auto f = [&](const Point& p) { return problem.deviance(p[0], p[1]); };

  Point start{0.0, 0.0};
  double start_value = kInf;
  for (double ga : {-4.0, -1.0, 1.0}) {
    for (double gb : {-4.0, -1.0, 1.0}) {
      ++fit.evaluations;
      const double v = f({ga, gb});
      if (v < start_value) {
        start_value = v;
        start = {ga, gb};
      }
    }
  }

  double global_best = start_value;
  Point best = start;
  double best_value = start_value;
  bool converged = false;
  for (int attempt = 0; attempt <= options.max_restarts; ++attempt) {
    auto run = nelder_mead(f, best, 1.0, options, fit.trace, global_best, fit.evaluations);
    fit.iterations += run.iterations;
    const double improvement = best_value - run.value;
    if (run.value <= best_value) {
      best = run.best;
      best_value = run.value;
    }
    if (attempt > 0) ++fit.restarts;
    if (run.converged && attempt > 0 && improvement <= 1e-8 * (1.0 + std::fabs(best_value))) {
      converged = true;
      break;
    }
  }

  fit.log_gamma_a = best[0];
  fit.log_gamma_b = best[1];
  fit.solution = problem.solve(best[0], best[1]);
  fit.converged = converged && std::isfinite(fit.solution.deviance);
  return fit;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<int> encode(std::span<const std::string> labels, std::size_t& levels) {
  std::map<std::string, int> index;
  for (const auto& l : labels) index.emplace(l, 0);
  int next = 0;
  for (auto& [label, i] : index) i = next++;
  levels = index.size();
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(index.at(l));
  return out;
}

Interval percentile_interval(std::vector<double> draws, double level, double point) {
  if (draws.empty()) return {point, point};
  const double alpha = (1.0 - level) / 2.0;
  Interval ci{stats::quantile(draws, alpha), stats::quantile(draws, 1.0 - alpha)};
  ci.lo = std::min(ci.lo, point);
  ci.hi = std::max(ci.hi, point);
  return ci;
}

}  // namespace

VarianceDecomposition reml_variance_decomposition(std::span<const double> scores,
                                                  std::span<const std::string> session_ids,
                                                  std::span<const std::string> component_ids,
                                                  const RemlOptions& options) {
  if (scores.size() != session_ids.size() || scores.size() != component_ids.size()) {
    throw ArgumentError("scores, session ids and component ids differ in length");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw ArgumentError("scores contain a non-finite value");
  }
  std::size_t n_sessions = 0;
  std::size_t n_components = 0;
  auto a = encode(session_ids, n_sessions);
  auto b = encode(component_ids, n_components);
  if (n_sessions < 2) throw ArgumentError("variance decomposition needs at least two sessions");
  if (n_components < 2) throw ArgumentError("variance decomposition needs at least two components");
  {
    std::set<std::pair<int, int>> seen;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!seen.emplace(a[i], b[i]).second) {
        throw ArgumentError("more than one score for session " + session_ids[i] + ", component " +
                            component_ids[i]);
      }
    }
  }
  if (std::all_of(scores.begin(), scores.end(), [&](double v) { return v == scores.front(); })) {
    throw ArgumentError("scores have no variation");
  }
  if (options.ci_level <= 0.0 || options.ci_level >= 1.0) throw ArgumentError("ci_level must be in (0, 1)");
  if (options.bootstrap_reps < 0) throw ArgumentError("bootstrap_reps must be non-negative");

  const CrossedRemlProblem problem(std::vector<double>(scores.begin(), scores.end()), a,
                                   static_cast<int>(n_sessions), b, static_cast<int>(n_components));
  const auto fit = fit_reml(problem, options);

  VarianceDecomposition out;
  out.intercept = fit.solution.intercept;
  out.var_session = fit.solution.var_a;
  out.var_component = fit.solution.var_b;
  out.var_residual = fit.solution.var_residual;
  const double total = out.var_session + out.var_component + out.var_residual;
  out.proportions = {out.var_session / total, out.var_component / total, out.var_residual / total};
  out.deviance = fit.solution.deviance;
  out.converged = fit.converged;
  out.iterations = fit.iterations;
  out.evaluations = fit.evaluations;
  out.restarts = fit.restarts;
  out.trace = fit.trace;
  out.n_obs = scores.size();
  out.n_sessions = n_sessions;
  out.n_components = n_components;
  out.bootstrap_reps = options.bootstrap_reps;

  const auto reps = static_cast<std::size_t>(options.bootstrap_reps);
  std::vector<std::array<double, 3>> draws(reps);
  std::vector<char> ok(reps, 0);
  RemlOptions inner = options;
  inner.bootstrap_reps = 0;
  const double sd_a = std::sqrt(out.var_session);
  const double sd_b = std::sqrt(out.var_component);
  const double sd_e = std::sqrt(out.var_residual);

  auto replicate = [&](std::size_t r) {
    Prng rng(derive_seed(options.seed, r));
    std::vector<double> ea(n_sessions), eb(n_components);
    for (auto& v : ea) v = sd_a * standard_normal(rng);
    for (auto& v : eb) v = sd_b * standard_normal(rng);
    std::vector<double> y(scores.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = out.intercept + ea[static_cast<std::size_t>(a[i])] + eb[static_cast<std::size_t>(b[i])] +
             sd_e * standard_normal(rng);
    }
    try {
      const auto f = fit_reml(problem.with_response(std::move(y)), inner);
      if (std::isfinite(f.solution.deviance)) {
        draws[r] = {f.solution.var_a, f.solution.var_b, f.solution.var_residual};
        ok[r] = 1;
      }
    } catch (const Error&) {
    }
  };

  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), reps));
  if (workers <= 1) {
    for (std::size_t r = 0; r < reps; ++r) replicate(r);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t r = w; r < reps; r += workers) replicate(r);
      });
    }
  }

  std::array<std::vector<double>, 3> columns;
  for (std::size_t r = 0; r < reps; ++r) {
    if (!ok[r]) {
      ++out.bootstrap_failures;
      continue;
    }
    for (int j = 0; j < 3; ++j) columns[static_cast<std::size_t>(j)].push_back(draws[r][static_cast<std::size_t>(j)]);
  }
  out.ci_session = percentile_interval(columns[0], options.ci_level, out.var_session);
  out.ci_component = percentile_interval(columns[1], options.ci_level, out.var_component);
  out.ci_residual = percentile_interval(columns[2], options.ci_level, out.var_residual);
  return out;
}

}  // namespace simeval::reml
