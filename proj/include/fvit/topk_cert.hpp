#pragma once

// Top-k index sets and the minimal Renyi divergence needed to break a
// beta top-k overlap, with its closed-form worst-case distribution.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "fvit/core.hpp"
#include "fvit/divergence.hpp"

namespace fvit {

// All indices ordered by value descending, ties by smaller index.
inline std::vector<std::size_t> descending_order(std::span<const double> w) {
  std::vector<std::size_t> idx(w.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  return idx;
}

// Exactly k indices in selection order.
inline std::vector<std::size_t> topk_set(std::span<const double> w, std::size_t k) {
  if (k < 1 || k > w.size()) fail_usage("top-k size out of range");
  auto idx = descending_order(w);
  idx.resize(k);
  return idx;
}

inline std::vector<std::size_t> topk_set(const AttentionVector& w, std::size_t k) {
  return topk_set(w.weights(), k);
}

// |T_k(a) ∩ T_k(b)| / k
inline double overlap_ratio(std::span<const double> a, std::span<const double> b, std::size_t k) {
  if (a.size() != b.size()) fail_data("overlap_ratio: length mismatch");
  auto ta = topk_set(a, k);
  auto tb = topk_set(b, k);
  std::sort(ta.begin(), ta.end());
  std::sort(tb.begin(), tb.end());
  std::vector<std::size_t> common;
  std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(k);
}

inline double overlap_ratio(const AttentionVector& a, const AttentionVector& b, std::size_t k) {
  return overlap_ratio(a.weights(), b.weights(), k);
}

// k0 = floor((1 - beta) k) + 1: the fewest top-k replacements that push the
// overlap below beta. A 1e-9 slack keeps products like 0.1 * 10 on the right
// side of the floor.
inline std::size_t min_changes(std::size_t k, double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) fail_usage("beta must lie in (0, 1]");
  return static_cast<std::size_t>(std::floor((1.0 - beta) * static_cast<double>(k) + 1e-9)) + 1;
}

struct TopKContext {
  std::size_t k = 0;
  double beta = 1.0;
  std::size_t k0 = 0;
  std::vector<std::size_t> order;  // descending order of w
  // Boundary set: the last k0 members of the top-k and the k0 largest
  // entries outside it, as original indices. Empty when fewer than k0
  // tokens lie outside the top-k, in which case no perturbation can push
  // the overlap below beta.
  std::vector<std::size_t> S;

  bool breakable() const noexcept { return !S.empty(); }
};

inline TopKContext make_context(std::span<const double> w, std::size_t k, double beta) {
  if (k < 1 || k > w.size()) fail_usage("top-k size out of range");
  TopKContext ctx;
  ctx.k = k;
  ctx.beta = beta;
  ctx.k0 = min_changes(k, beta);
  if (2 * ctx.k0 > w.size()) fail_usage("not enough tokens outside top-k");
  ctx.order = descending_order(w);
  if (ctx.k + ctx.k0 <= w.size())
    ctx.S.assign(ctx.order.begin() + static_cast<std::ptrdiff_t>(k - ctx.k0),
               ctx.order.begin() + static_cast<std::ptrdiff_t>(k + ctx.k0));
  return ctx;
}

inline TopKContext make_context(const AttentionVector& w, std::size_t k, double beta) {
  return make_context(w.weights(), k, beta);
}

namespace detail {

struct BoundaryTerms {
  double s = 0.0;         // (sum_{S} w^alpha)^(1/alpha)
  double outside = 0.0;   // sum of w outside S
  double scale = 0.0;     // (2 k0)^(1/alpha)
  double denom = 0.0;     // 2 k0 s + scale * outside
};

inline BoundaryTerms boundary_terms(std::span<const double> w, const TopKContext& ctx, double alpha) {
  if (!(alpha > 1.0)) fail_data("alpha must exceed 1");
  if (ctx.order.size() != w.size() || ctx.S.size() != 2 * ctx.k0)
    fail_data("top-k context does not match the attention vector");

  std::vector<bool> in_s(w.size(), false);
  for (auto i : ctx.S) in_s[i] = true;
  // Scale by the largest boundary entry before the power sum.
  double top = 0.0;
  for (auto i : ctx.S) top = std::max(top, w[i]);
  BoundaryTerms t;
  double pow_sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (in_s[i]) {
      if (top > 0.0) pow_sum += std::pow(w[i] / top, alpha);
    } else {
      t.outside += w[i];
    }
  }
  t.s = top > 0.0 ? top * std::pow(pow_sum, 1.0 / alpha) : 0.0;
  const double two_k0 = 2.0 * static_cast<double>(ctx.k0);
  t.scale = std::pow(two_k0, 1.0 / alpha);
  t.denom = two_k0 * t.s + t.scale * t.outside;
  return t;
}

}  // namespace detail

// alpha/(alpha-1) ln(2k0 s + (2k0)^(1/alpha) sum_{i not in S} w_i) - ln(2k0)/(alpha-1)
// +infinity when the context is not breakable.
inline double min_divergence_to_break(std::span<const double> w, const TopKContext& ctx,
                                      double alpha) {
  if (!(alpha > 1.0)) fail_data("alpha must exceed 1");
  if (!ctx.breakable() && ctx.order.size() == w.size()) return kInf;
  const auto t = detail::boundary_terms(w, ctx, alpha);
  const double two_k0 = 2.0 * static_cast<double>(ctx.k0);
  const double v = alpha / (alpha - 1.0) * std::log(t.denom) - std::log(two_k0) / (alpha - 1.0);
  return std::max(0.0, v);
}

inline double min_divergence_to_break(const AttentionVector& w, const TopKContext& ctx,
                                      double alpha) {
  return min_divergence_to_break(w.weights(), ctx, alpha);
}

// The distribution attaining min_divergence_to_break: every boundary index
// gets s / denom, the rest (2k0)^(1/alpha) w_i / denom.
inline AttentionVector worst_case_q(std::span<const double> w, const TopKContext& ctx,
                                    double alpha) {
  if (!ctx.breakable()) fail_data("no valid violating q");
  const auto t = detail::boundary_terms(w, ctx, alpha);
  if (!(t.denom > 0.0)) fail_data("attention vector has no mass");
  std::vector<double> q(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) q[i] = t.scale * w[i] / t.denom;
  const double tied = t.s / t.denom;
  for (auto i : ctx.S) q[i] = tied;
  return AttentionVector(std::move(q));
}

inline AttentionVector worst_case_q(const AttentionVector& w, const TopKContext& ctx, double alpha) {
  return worst_case_q(w.weights(), ctx, alpha);
}

}  // namespace fvit
