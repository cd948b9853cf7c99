#pragma once

// PGD attacks on the smoothed pipeline, empirical verification of certified
// radii, explanation-quality metrics and the synthetic blob dataset.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fvit/certify.hpp"
#include "fvit/core.hpp"
#include "fvit/parallel.hpp"
#include "fvit/random.hpp"
#include "fvit/topk_cert.hpp"

namespace fvit {

enum class AttackObjective { FLIP_PREDICTION, BREAK_TOPK };

inline std::string_view to_string(AttackObjective o) {
  return o == AttackObjective::FLIP_PREDICTION ? "flip_prediction" : "break_topk";
}

struct AttackConfig {
  double radius = 8.0 / 255.0;
  std::size_t steps = 10;
  double step_size = 2.0 / 255.0;
  Norm norm = Norm::LINF;
  AttackObjective objective = AttackObjective::BREAK_TOPK;
  std::uint64_t seed = 0;
  bool random_start = false;
  double fd_step = 1e-3;    // central finite-difference step, pixel units
  std::size_t threads = 1;  // finite-difference coordinates in parallel

  void validate() const {
    if (!(radius >= 0.0)) fail_usage("attack radius must be non-negative");
    if (radius > 0.0 && steps < 1) fail_usage("attack needs at least one step");
    if (!(step_size > 0.0)) fail_usage("attack step size must be positive");
    if (!(fd_step > 0.0)) fail_usage("finite-difference step must be positive");
  }
};

using LossFn = std::function<double(std::span<const double>)>;

// Projects onto the norm ball around `center` and then onto [0, 1]. Clipping
// to the box never leaves the ball because the center lies inside the box.
inline void project(std::vector<double>& x, std::span<const double> center, double radius, Norm norm) {
  if (norm == Norm::LINF) {
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = std::clamp(x[i], center[i] - radius, center[i] + radius);
  } else {
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - center[i]) * (x[i] - center[i]);
    const double len = std::sqrt(sq);
    if (len > radius) {
      const double s = len > 0.0 ? radius / len : 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = center[i] + (x[i] - center[i]) * s;
    }
  }
  for (auto& v : x) v = std::clamp(v, 0.0, 1.0);
}

inline double perturbation_norm(std::span<const double> a, std::span<const double> b, Norm norm) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    acc = norm == Norm::LINF ? std::max(acc, d) : acc + d * d;
  }
  return norm == Norm::LINF ? acc : std::sqrt(acc);
}

// Central finite-difference gradient; coordinates evaluated in parallel and
// written to their own slots.
inline std::vector<double> fd_gradient(const LossFn& loss, std::span<const double> x, double h,
                                       std::size_t threads) {
  std::vector<double> g(x.size());
  parallel_for(x.size(), threads, [&](std::size_t i) {
    std::vector<double> probe(x.begin(), x.end());
    probe[i] = x[i] + h;
    const double up = loss(probe);
    probe[i] = x[i] - h;
    const double down = loss(probe);
    g[i] = (up - down) / (2.0 * h);
  });
  return g;
}

// Projected gradient ascent on `loss` inside the radius ball and the pixel
// box: sign steps for LINF, unit-direction steps for L2. Returns the iterate
// with the highest loss, the start point included.
inline std::vector<double> pgd_attack(const LossFn& loss, std::span<const double> x,
                                      const AttackConfig& cfg) {
  cfg.validate();
  std::vector<double> cur(x.begin(), x.end());
  if (cfg.radius == 0.0) return cur;

  if (cfg.random_start) {
    Rng rng(cfg.seed);
    if (cfg.norm == Norm::LINF) {
      for (auto& v : cur) v += cfg.radius * (2.0 * rng.uniform() - 1.0);
    } else {
      std::vector<double> dir(cur.size());
      double sq = 0.0;
      for (auto& v : dir) {
        v = rng.normal();
        sq += v * v;
      }
      const double r = cfg.radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(cur.size()));
      const double s = sq > 0.0 ? r / std::sqrt(sq) : 0.0;
      for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += dir[i] * s;
    }
  }
  project(cur, x, cfg.radius, cfg.norm);

  auto checked = [&](std::span<const double> p, std::size_t iter) {
    const double v = loss(p);
    if (!std::isfinite(v)) fail_data("non-finite attack loss at iterate " + std::to_string(iter));
    return v;
  };
  std::vector<double> best = cur;
  double best_loss = checked(cur, 0);
  for (std::size_t it = 1; it <= cfg.steps; ++it) {
    const auto g = fd_gradient(loss, cur, cfg.fd_step, cfg.threads);
    if (cfg.norm == Norm::LINF) {
      for (std::size_t i = 0; i < cur.size(); ++i)
        cur[i] += cfg.step_size * (g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0));
    } else {
      double sq = 0.0;
      for (double v : g) sq += v * v;
      if (!(sq > 0.0)) break;
      const double s = cfg.step_size / std::sqrt(sq);
      for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += s * g[i];
    }
    project(cur, x, cfg.radius, cfg.norm);
    const double v = checked(cur, it);
    if (v > best_loss) {
      best_loss = v;
      best = cur;
    }
  }
  return best;
}

// Attacks run against a fixed set of `draws` Monte-Carlo draws (common random
// numbers) so finite differences see a deterministic function.
struct SurrogateSetup {
  std::size_t draws = 16;
  std::uint64_t seed = 0;
};

// 1 - (mass that the candidate smoothed attention puts on the reference
// top-k indices). Lower top-k overlap tends to raise it.
inline LossFn break_topk_loss(const SmoothingPipeline& pipe, const AttentionVector& reference,
                              std::size_t k, SurrogateSetup s) {
  const auto top = topk_set(reference, k);
  SmoothingPipeline serial = pipe;
  serial.threads = 1;
  return [serial, top, s](std::span<const double> x) {
    const auto est = estimate_smoothed(serial, x, s.draws, s.seed);
    double mass = 0.0;
    for (auto i : top) mass += est.w_tilde[i];
    return 1.0 - mass;
  };
}

// Margin of the best other class over `clean_class` in the mean soft
// prediction of the fixed draws; positive once the soft argmax flips.
inline LossFn flip_prediction_loss(const SmoothingPipeline& pipe, std::size_t clean_class,
                                   SurrogateSetup s) {
  SmoothingPipeline serial = pipe;
  serial.threads = 1;
  return [serial, clean_class, s](std::span<const double> x) {
    const auto est = estimate_smoothed(serial, x, s.draws, s.seed);
    double other = -kInf;
    for (std::size_t c = 0; c < est.mean_probs.size(); ++c)
      if (c != clean_class) other = std::max(other, est.mean_probs[c]);
    return other - est.mean_probs[clean_class];
  };
}

struct VerifyParams {
  std::vector<double> factors{1.0, 1.5, 2.0};
  std::size_t attempts = 10;
  std::size_t m = 1000;        // re-estimation draws, as in certification
  std::uint64_t seed = 0;      // certification seed
  std::size_t k = 4;
  double beta = 0.75;
  Norm norm = Norm::L2;
  std::size_t steps = 10;
  double step_scale = 2.5;     // step = step_scale * radius / steps
  SurrogateSetup surrogate{};
  std::uint64_t attack_seed = 0;
};

struct VerifyRow {
  double factor = 0.0;
  AttackObjective objective = AttackObjective::FLIP_PREDICTION;
  std::size_t attempts = 0;
  std::size_t successes = 0;
};

struct VerifyReport {
  std::vector<VerifyRow> rows;             // per (factor, objective)
  std::vector<double> combined_rate;       // per factor, either objective
};

// Does x_adv change the smoothed top class or push the top-k overlap below
// beta, re-estimated with the certification draws?
inline bool violates(const SmoothingPipeline& pipe, std::span<const double> x_adv,
                     const SmoothedEstimate& clean, const VerifyParams& vp) {
  const auto est = estimate_smoothed(pipe, x_adv, vp.m, vp.seed);
  if (est.p_hat.argmax() != clean.p_hat.argmax()) return true;
  return overlap_ratio(clean.w_tilde, est.w_tilde, vp.k) < vp.beta;
}

// Runs PGD at factor * radius for each factor and objective. Factors are
// processed in ascending order and an attempt that already succeeded at a
// smaller factor counts as a success at every larger one, since its
// adversarial input lies in every larger ball. Attempt 0 starts at x, later
// attempts from a random point of the ball.
inline VerifyReport verify_region(const SmoothingPipeline& pipe, std::span<const double> x,
                                  double radius, const VerifyParams& vp) {
  if (vp.factors.empty()) fail_usage("verify_region: empty factor list");
  if (vp.attempts < 1) fail_usage("verify_region: attempts must be at least 1");
  for (double f : vp.factors)
    if (!(f >= 0.0) || !std::isfinite(f)) fail_usage("verify_region: factors must be finite and non-negative");
  if (std::isnan(radius) || radius < 0.0) fail_usage("verify_region: radius must be non-negative");

  const double box_diameter =
      vp.norm == Norm::LINF ? 1.0 : std::sqrt(static_cast<double>(x.size()));
  const auto clean = estimate_smoothed(pipe, x, vp.m, vp.seed);
  const std::size_t clean_class = clean.p_hat.argmax();

  std::vector<std::size_t> order(vp.factors.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return vp.factors[a] < vp.factors[b]; });

  const AttackObjective objectives[] = {AttackObjective::FLIP_PREDICTION, AttackObjective::BREAK_TOPK};
  const LossFn losses[] = {flip_prediction_loss(pipe, clean_class, vp.surrogate),
                           break_topk_loss(pipe, clean.w_tilde, vp.k, vp.surrogate)};

  // hit[o][a]: attempt a of objective o has succeeded at some factor so far.
  std::vector<std::vector<bool>> hit(2, std::vector<bool>(vp.attempts, false));
  VerifyReport report;
  report.rows.resize(vp.factors.size() * 2);
  report.combined_rate.assign(vp.factors.size(), 0.0);
  for (std::size_t fi : order) {
    const double f = vp.factors[fi];
    const double r = std::min(f * radius, box_diameter);
    for (std::size_t o = 0; o < 2; ++o) {
      for (std::size_t a = 0; a < vp.attempts; ++a) {
        if (hit[o][a] || r == 0.0) continue;
        AttackConfig cfg;
        cfg.radius = r;
        cfg.steps = vp.steps;
        cfg.step_size = vp.step_scale * r / static_cast<double>(vp.steps);
        cfg.norm = vp.norm;
        cfg.objective = objectives[o];
        cfg.seed = derive_seed(derive_seed(vp.attack_seed, fi), o * 1000003u + a);
        cfg.random_start = a > 0;
        cfg.threads = pipe.threads;
        const auto x_adv = pgd_attack(losses[o], x, cfg);
        hit[o][a] = violates(pipe, x_adv, clean, vp);
      }
      auto& row = report.rows[fi * 2 + o];
      row.factor = f;
      row.objective = objectives[o];
      row.attempts = vp.attempts;
      row.successes = static_cast<std::size_t>(std::count(hit[o].begin(), hit[o].end(), true));
    }
    std::size_t either = 0;
    for (std::size_t a = 0; a < vp.attempts; ++a) either += (hit[0][a] || hit[1][a]) ? 1 : 0;
    report.combined_rate[fi] = static_cast<double>(either) / static_cast<double>(vp.attempts);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Explanation metrics

// N / (sum |M_gt - M_p| + eps)
inline double s_faith(std::span<const double> m_gt, std::span<const double> m_p, double eps = 0.01) {
  if (m_gt.size() != m_p.size()) fail_data("s_faith: shape mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < m_gt.size(); ++i) diff += std::abs(m_gt[i] - m_p[i]);
  return static_cast<double>(m_gt.size()) / (diff + eps);
}

namespace detail {

inline void check_mask(std::span<const double> map, std::span<const double> mask) {
  if (map.size() != mask.size() || map.empty()) fail_data("saliency map and mask differ in shape");
  for (double v : mask)
    if (v != 0.0 && v != 1.0) fail_data("mask must be binary");
}

// Strictly above the map mean; a constant map is all background.
inline std::vector<bool> binarize_at_mean(std::span<const double> map) {
  const double mean = std::accumulate(map.begin(), map.end(), 0.0) / static_cast<double>(map.size());
  std::vector<bool> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = map[i] > mean;
  return out;
}

}  // namespace detail

inline double pixel_accuracy(std::span<const double> map, std::span<const double> mask) {
  detail::check_mask(map, mask);
  const auto bin = detail::binarize_at_mean(map);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < map.size(); ++i) hits += bin[i] == (mask[i] == 1.0) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(map.size());
}

// IoU averaged over the foreground and background classes; a class absent
// from both prediction and mask scores 1.
inline double miou(std::span<const double> map, std::span<const double> mask) {
  detail::check_mask(map, mask);
  const auto bin = detail::binarize_at_mean(map);
  double total = 0.0;
  for (bool cls : {true, false}) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
      const bool p = bin[i] == cls, t = (mask[i] == 1.0) == cls;
      inter += (p && t) ? 1 : 0;
      uni += (p || t) ? 1 : 0;
    }
    total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / 2.0;
}

struct AveragePrecision {
  double value = 0.0;
  bool empty_mask = false;
};

// Area under the precision-recall curve with map values as scores: one
// operating point per distinct score, trapezoids in recall starting from
// (recall 0, precision 1). An empty mask yields 0 and sets the flag.
inline AveragePrecision average_precision(std::span<const double> map, std::span<const double> mask) {
  detail::check_mask(map, mask);
  const auto positives = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1.0));
  if (positives == 0) return {0.0, true};
  std::vector<std::size_t> idx(map.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return map[a] > map[b]; });
  double area = 0.0, prev_recall = 0.0, prev_precision = 1.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t j = 0; j < idx.size();) {
    const double score = map[idx[j]];
    while (j < idx.size() && map[idx[j]] == score) {
      tp += mask[idx[j]] == 1.0 ? 1 : 0;
      ++seen;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    area += (recall - prev_recall) * (precision + prev_precision) / 2.0;
    prev_recall = recall;
    prev_precision = precision;
  }
  return {std::clamp(area, 0.0, 1.0), false};
}

struct SaliencyEval {
  double pixel_accuracy = 0.0;
  double miou = 0.0;
  double average_precision = 0.0;
  bool ap_empty_mask = false;
  double p_auc_pos = 0.0;
  double p_auc_neg = 0.0;
  double s_faith = 0.0;
};

enum class PerturbationMode { POSITIVE, NEGATIVE };

inline std::vector<double> default_erase_fractions() {
  return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

// Erases (sets to 0) the round(f * N) most (POSITIVE) or least (NEGATIVE)
// salient pixels, ties by index.
inline std::vector<double> erase_pixels(std::span<const double> x, std::span<const double> saliency,
                                        PerturbationMode mode, double fraction) {
  if (saliency.size() != x.size()) fail_data("saliency map must match the image shape");
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (mode == PerturbationMode::POSITIVE)
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return saliency[a] > saliency[b]; });
  else
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return saliency[a] < saliency[b]; });
  const auto count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(x.size())));
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t j = 0; j < std::min(count, out.size()); ++j) out[idx[j]] = 0.0;
  return out;
}

// 1.0 where the smoothed top class after erasing matches the smoothed top
// class of the intact input, 0.0 otherwise; one entry per fraction.
inline std::vector<double> perturbation_test(const SmoothingPipeline& pipe, std::span<const double> saliency,
                                             std::span<const double> x, PerturbationMode mode,
                                             std::span<const double> fractions, std::size_t m,
                                             std::uint64_t seed) {
  const auto clean = estimate_smoothed(pipe, x, m, seed).p_hat.argmax();
  std::vector<double> curve;
  curve.reserve(fractions.size());
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) fail_usage("erase fractions must lie in [0, 1]");
    const auto erased = erase_pixels(x, saliency, mode, f);
    curve.push_back(estimate_smoothed(pipe, erased, m, seed).p_hat.argmax() == clean ? 1.0 : 0.0);
  }
  return curve;
}

// 100 x mean correctness over the erased fractions.
inline double p_auc(std::span<const double> curve) {
  if (curve.empty()) fail_usage("p_auc: empty curve");
  return 100.0 * std::accumulate(curve.begin(), curve.end(), 0.0) / static_cast<double>(curve.size());
}

// Patch-level attention replicated over each patch's pixels.
inline std::vector<double> upsample_attention(std::span<const double> attention, std::size_t patches_per_side,
                                              std::size_t patch_size) {
  if (attention.size() != patches_per_side * patches_per_side)
    fail_data("attention vector does not match the patch grid");
  const std::size_t side = patches_per_side * patch_size;
  std::vector<double> map(side * side);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c)
      map[r * side + c] = attention[(r / patch_size) * patches_per_side + c / patch_size];
  return map;
}

// ---------------------------------------------------------------------------
// Synthetic data: a bright square blob on a dim noisy background. The class
// is the blob size (0: small, 1: large); labels alternate so the classes stay
// balanced.

struct SyntheticDataset {
  std::size_t image_size = 0;
  std::vector<std::vector<double>> images;
  std::vector<std::size_t> labels;
  std::vector<std::vector<double>> masks;
};

struct SyntheticStyle {
  double background = 0.2;
  double background_noise = 0.05;
  double blob = 0.9;
  double blob_noise = 0.03;
};

inline SyntheticDataset gen_synthetic_dataset(std::size_t count, std::size_t image_size, std::uint64_t seed,
                                              const SyntheticStyle& style = {}) {
  if (count == 0) fail_usage("count must be positive");
  if (image_size < 4) fail_usage("image size must be at least 4");
  SyntheticDataset ds;
  ds.image_size = image_size;
  const std::size_t small = std::max<std::size_t>(1, image_size / 4);
  const std::size_t large = image_size / 2;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    const std::size_t label = i % 2;
    const std::size_t size = label == 0 ? small : large;
    const std::size_t top = rng.below(image_size - size + 1);
    const std::size_t left = rng.below(image_size - size + 1);
    std::vector<double> img(image_size * image_size), mask(image_size * image_size, 0.0);
    for (std::size_t r = 0; r < image_size; ++r) {
      for (std::size_t c = 0; c < image_size; ++c) {
        const bool in_blob = r >= top && r < top + size && c >= left && c < left + size;
        const double base = in_blob ? style.blob : style.background;
        const double noise = in_blob ? style.blob_noise : style.background_noise;
        // Rounded to float so the image survives an FVTN round trip unchanged.
        img[r * image_size + c] = static_cast<float>(std::clamp(base + noise * rng.normal(), 0.0, 1.0));
        mask[r * image_size + c] = in_blob ? 1.0 : 0.0;
      }
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
    ds.masks.push_back(std::move(mask));
  }
  return ds;
}

}  // namespace fvit
