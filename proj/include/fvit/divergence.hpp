#pragma once

// Renyi divergence closed forms and the supremum search over the order
// alpha used by both certified radii.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "fvit/core.hpp"

namespace fvit {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// D_alpha(p || q) = 1/(alpha-1) * log sum_i p_i^alpha q_i^(1-alpha), natural log.
// Entries with p_i = 0 contribute nothing; q_i = 0 < p_i gives +infinity.
inline double renyi_divergence(std::span<const double> p, std::span<const double> q,
                               double alpha) {
  if (p.size() != q.size()) fail_data("renyi_divergence: length mismatch");
  if (!(alpha > 1.0)) fail_data("renyi_divergence: alpha must exceed 1");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return kInf;
    sum += std::exp(alpha * std::log(p[i]) + (1.0 - alpha) * std::log(q[i]));
  }
  return std::max(0.0, std::log(sum) / (alpha - 1.0));
}

inline double renyi_divergence(const AttentionVector& p, const AttentionVector& q, double alpha) {
  return renyi_divergence(p.weights(), q.weights(), alpha);
}

inline double renyi_divergence(const PredictionDistribution& p, const PredictionDistribution& q,
                               double alpha) {
  return renyi_divergence(p.probs(), q.probs(), alpha);
}

// D_alpha(N(0, s^2 I) || N(mu, s^2 I)) = alpha |mu|^2 / (2 s^2).
inline double gaussian_renyi_bound(double shift_l2, double sigma, double alpha) {
  if (!(sigma > 0.0)) fail_data("gaussian_renyi_bound: sigma must be positive");
  if (!(alpha > 1.0)) fail_data("gaussian_renyi_bound: alpha must exceed 1");
  if (shift_l2 < 0.0) fail_data("gaussian_renyi_bound: shift must be non-negative");
  return alpha * shift_l2 * shift_l2 / (2.0 * sigma * sigma);
}

// Largest divergence budget under which the index of the top probability
// cannot change:
//   -log(1 - p1 - p2 + 2 * ((p1^(1-a) + p2^(1-a)) / 2)^(1/(1-a)))
// with the p2 -> 0 limit -log(1 - p1).
inline double prediction_threshold(double p1, double p2, double alpha) {
  if (!(alpha > 1.0)) fail_data("prediction_threshold: alpha must exceed 1");
  if (!(p1 >= p2 && p2 >= 0.0 && p1 <= 1.0) || p1 + p2 > 1.0 + 1e-12)
    fail_data("prediction_threshold: need 1 >= p1 >= p2 >= 0 and p1 + p2 <= 1");
  if (p1 == p2) return 0.0;
  if (p2 == 0.0) return p1 >= 1.0 ? kInf : -std::log1p(-p1);
  // Power mean with exponent (1 - alpha) < 0, evaluated in log space.
  const double e = 1.0 - alpha;
  const double a = e * std::log(p1);
  const double b = e * std::log(p2);
  const double hi = std::max(a, b);
  const double lse = hi + std::log(std::exp(a - hi) + std::exp(b - hi));
  const double mean = std::exp((lse - std::log(2.0)) / e);
  const double arg = 1.0 - p1 - p2 + 2.0 * mean;
  if (!(arg > 0.0)) fail_invariant("threshold undefined");
  return std::max(0.0, -std::log(arg));
}

struct AlphaSweepResult {
  double best_alpha = 0.0;
  double best_value = -kInf;
  std::vector<std::pair<double, double>> samples;  // grid order, then refinement order
};

// 64 points with alpha - 1 log-spaced over [1e-3, 499].
inline std::vector<double> default_alpha_grid(std::size_t points = 64) {
  std::vector<double> grid(points);
  const double lo = std::log(1e-3);
  const double hi = std::log(499.0);
  for (std::size_t i = 0; i < points; ++i) {
    const double t = points == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(points - 1);
    grid[i] = 1.0 + std::exp(lo + t * (hi - lo));
  }
  grid.back() = 500.0;
  return grid;
}

inline constexpr std::size_t kGoldenStepsPerRound = 16;

// Maximizes evaluator over alpha: grid scan, then refine_iters rounds of
// golden-section contraction inside the bracket around the grid argmax.
// Any single alpha yields a sound radius, so the result is a valid lower
// estimate of the supremum even when the objective is not unimodal.
inline AlphaSweepResult sup_over_alpha(const std::function<double(double)>& evaluator,
                                       std::span<const double> grid, std::size_t refine_iters) {
  if (grid.empty()) fail_usage("sup_over_alpha: empty alpha grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 1.0)) fail_usage("sup_over_alpha: every alpha must exceed 1");
    if (i > 0 && !(grid[i] > grid[i - 1])) fail_usage("sup_over_alpha: grid must be strictly increasing");
  }

  AlphaSweepResult res;
  auto record = [&](double a) {
    const double v = evaluator(a);
    if (std::isnan(v)) return v;
    res.samples.emplace_back(a, v);
    if (res.samples.size() == 1 || v > res.best_value) {
      res.best_value = v;
      res.best_alpha = a;
    }
    return v;
  };

  for (double a : grid) record(a);
  if (res.samples.empty()) fail_data("sup_over_alpha: evaluator returned NaN everywhere");
  const auto best_idx = static_cast<std::size_t>(
      std::find(grid.begin(), grid.end(), res.best_alpha) - grid.begin());
  if (grid.size() < 2 || refine_iters == 0 || std::isinf(res.best_value)) return res;

  double lo = grid[best_idx == 0 ? 0 : best_idx - 1];
  double hi = grid[std::min(best_idx + 1, grid.size() - 1)];
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto eval_or_low = [&](double a) {
    const double v = record(a);
    return std::isnan(v) ? -kInf : v;
  };
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = eval_or_low(x1);
  double f2 = eval_or_low(x2);
  for (std::size_t step = 0; step < refine_iters * kGoldenStepsPerRound; ++step) {
    if (f1 >= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = eval_or_low(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = eval_or_low(x2);
    }
  }
  return res;
}

inline AlphaSweepResult sup_over_alpha(const std::function<double(double)>& evaluator,
                                       std::initializer_list<double> grid,
                                       std::size_t refine_iters) {
  std::vector<double> g(grid);
  return sup_over_alpha(evaluator, g, refine_iters);
}

}  // namespace fvit
