#pragma once

// Monte-Carlo estimation of the smoothed prediction distribution and
// averaged attention vector, and the certified radii derived from them.

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "fvit/core.hpp"
#include "fvit/dds.hpp"
#include "fvit/divergence.hpp"
#include "fvit/parallel.hpp"
#include "fvit/random.hpp"
#include "fvit/topk_cert.hpp"
#include "fvit/vit_toy.hpp"

namespace fvit {

struct SmoothedEstimate {
  PredictionDistribution p_hat;  // class frequencies over the m draws
  AttentionVector w_tilde;       // mean per-draw attention, renormalized
  std::vector<std::size_t> counts;
  std::vector<double> mean_probs;  // mean per-draw softmax, for attack surrogates
  std::size_t m = 0;
  std::uint64_t seed = 0;
};

// Model, denoiser and smoothing configuration bundled for repeated use.
struct SmoothingPipeline {
  const AttentionModel* model = nullptr;
  const Denoiser* denoiser = nullptr;
  DdsConfig dds;
  std::size_t threads = 1;

  std::size_t timestep() const { return timestep_for_sigma(dds.schedule, dds.sigma, dds.range_scale); }
};

namespace detail {

struct DrawResult {
  std::size_t cls = 0;
  std::vector<double> probs;
  std::vector<double> attention;
};

}  // namespace detail

// Draw i uses seed derive_seed(seed, i), so any m-draw estimate is a prefix
// of a larger one. Per-draw results land in index-addressed slots and are
// reduced in index order, making the output independent of `threads`.
inline SmoothedEstimate estimate_smoothed(const SmoothingPipeline& pipe, std::span<const double> x,
                                          std::size_t m, std::uint64_t seed) {
  if (m < 1) fail_usage("m must be at least 1");
  if (pipe.model == nullptr || pipe.denoiser == nullptr) fail_usage("pipeline is incomplete");
  const auto& model = *pipe.model;
  const std::size_t t_star = pipe.timestep();
  std::vector<detail::DrawResult> draws(m);
  parallel_for(m, pipe.threads, [&](std::size_t i) {
    try {
      const auto x_hat = dds_transform(x, pipe.dds, t_star, *pipe.denoiser, derive_seed(seed, i));
      auto out = model.forward(x_hat);
      auto& d = draws[i];
      d.cls = out.prediction.argmax();
      d.probs.assign(out.prediction.probs().begin(), out.prediction.probs().end());
      d.attention.assign(out.attention.weights().begin(), out.attention.weights().end());
    } catch (const Error& e) {
      throw Error(e.kind(), "draw " + std::to_string(i) + ": " + e.what());
    }
  });

  const std::size_t classes = model.num_classes();
  const std::size_t tokens = model.attention_size();
  SmoothedEstimate est;
  est.m = m;
  est.seed = seed;
  est.counts.assign(classes, 0);
  est.mean_probs.assign(classes, 0.0);
  std::vector<double> attention_sum(tokens, 0.0);
  for (const auto& d : draws) {
    ++est.counts[d.cls];
    for (std::size_t c = 0; c < classes; ++c) est.mean_probs[c] += d.probs[c];
    for (std::size_t j = 0; j < tokens; ++j) attention_sum[j] += d.attention[j];
  }
  std::vector<double> freq(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    freq[c] = static_cast<double>(est.counts[c]) / static_cast<double>(m);
    est.mean_probs[c] /= static_cast<double>(m);
  }
  for (auto& v : attention_sum) v /= static_cast<double>(m);
  est.p_hat = PredictionDistribution(std::move(freq));
  est.w_tilde = normalize_simplex(attention_sum);
  return est;
}

// Exact two-sided Clopper-Pearson interval for `successes` out of `trials`.
inline std::pair<double, double> clopper_pearson(std::size_t successes, std::size_t trials,
                                                 double level) {
  if (trials == 0 || successes > trials) fail_usage("clopper_pearson: invalid counts");
  const double tail = (1.0 - level) / 2.0;
  const auto s = static_cast<double>(successes);
  const auto n = static_cast<double>(trials);
  const double lo = successes == 0 ? 0.0 : boost::math::ibeta_inv(s, n - s + 1.0, tail);
  const double hi = successes == trials ? 1.0 : boost::math::ibeta_inv(s + 1.0, n - s, 1.0 - tail);
  return {lo, hi};
}

// Largest and second-largest class frequencies, with their counts.
struct TopTwo {
  std::size_t top_class = 0;
  double p1 = 0.0, p2 = 0.0;
  std::size_t c1 = 0, c2 = 0;
};

inline TopTwo top_two(const SmoothedEstimate& est) {
  TopTwo t;
  const auto probs = est.p_hat.probs();
  const auto order = descending_order(probs);
  t.top_class = order[0];
  t.p1 = probs[order[0]];
  t.p2 = order.size() > 1 ? probs[order[1]] : 0.0;
  if (!est.counts.empty()) {
    t.c1 = est.counts[order[0]];
    t.c2 = order.size() > 1 ? est.counts[order[1]] : 0;
  }
  return t;
}

// Radius divisor turning an l2 radius into the reported one.
inline double radius_divisor(Norm norm, LinfDivisor mode, std::size_t d) {
  if (norm == Norm::L2) return 1.0;
  const auto dd = static_cast<double>(d);
  return mode == LinfDivisor::SQRT_D ? std::sqrt(dd) : dd;
}

// P = sup_a sqrt(2 sigma^2 / a * threshold(p1, p2, a)),
// Q = sup_a sqrt(2 sigma^2 / a * min_divergence_to_break(w, a)),
// both divided by the l-inf divisor when norm is LINF; R = min(P, Q).
inline CertificationResult faithful_region(const SmoothedEstimate& est, const CertParams& params,
                                           std::size_t d) {
  params.validate();
  if (d == 0) fail_usage("input dimension must be positive");
  CertificationResult r;
  r.p_hat = est.p_hat;
  r.w_tilde = est.w_tilde;
  r.norm = params.norm;

  const auto tt = top_two(est);
  double p1 = tt.p1, p2 = tt.p2;
  if (params.confidence_mode == ConfidenceMode::BINOMIAL_CI) {
    if (est.counts.empty()) fail_usage("binomial interval needs class counts");
    p1 = clopper_pearson(tt.c1, est.m, params.ci_level).first;
    p2 = clopper_pearson(tt.c2, est.m, params.ci_level).second;
    p2 = std::min(p2, 1.0 - p1);
    if (p2 > p1) p2 = p1;
  }
  r.p1 = p1;
  r.p2 = p2;

  const auto grid = params.alpha_grid.empty() ? default_alpha_grid() : params.alpha_grid;
  const double two_var = 2.0 * params.sigma * params.sigma;
  auto radius = [&](double alpha, double budget) {
    return std::isinf(budget) ? kInf : std::sqrt(two_var / alpha * budget);
  };

  const auto sweep_p = sup_over_alpha(
      [&](double a) { return radius(a, prediction_threshold(p1, p2, a)); }, grid,
      params.refine_iters);
  const auto ctx = make_context(est.w_tilde, params.k, params.beta);
  const auto sweep_q = sup_over_alpha(
      [&](double a) { return radius(a, min_divergence_to_break(est.w_tilde, ctx, a)); }, grid,
      params.refine_iters);

  const double div = radius_divisor(params.norm, params.linf_divisor, d);
  r.P_bound = std::max(0.0, sweep_p.best_value) / div;
  r.Q_bound = std::max(0.0, sweep_q.best_value) / div;
  r.best_alpha_P = sweep_p.best_alpha;
  r.best_alpha_Q = sweep_q.best_alpha;
  r.R_faithful = std::min(r.P_bound, r.Q_bound);

  // Top-class condition at the chosen order: the Gaussian divergence of a
  // shift of l2 size (radius in l2 units) must not exceed the threshold.
  if (p1 > p2) {
    const double l2_radius =
        params.norm == Norm::L2 ? r.R_faithful : r.R_faithful * std::sqrt(static_cast<double>(d));
    const double thr = prediction_threshold(p1, p2, r.best_alpha_P);
    const double gamma =
        std::isinf(l2_radius) ? kInf : gaussian_renyi_bound(l2_radius, params.sigma, r.best_alpha_P);
    r.argmax_certified = gamma <= thr * (1.0 + 1e-12);
  }
  return r;
}

inline CertificationResult certify_input(const SmoothingPipeline& pipe, std::span<const double> x,
                                         const CertParams& params) {
  params.validate();
  if (pipe.dds.sigma != params.sigma) fail_usage("pipeline sigma differs from certification sigma");
  const auto est = estimate_smoothed(pipe, x, params.m, params.seed);
  return faithful_region(est, params, x.size());
}

}  // namespace fvit
