#pragma once

// Denoised diffusion smoothing: Gaussian noise, sigma -> timestep lookup on
// a linear DDPM schedule, rescaling, one-shot denoising, and saliency-map
// fusion.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fvit/core.hpp"
#include "fvit/random.hpp"

namespace fvit {

// alpha_bar[t-1] = prod_{i=1..t} (1 - beta_i), beta_i linear in i.
struct NoiseSchedule {
  double beta1 = 1e-4;
  double betaN = 0.02;
  std::size_t steps = 1000;
  std::vector<double> alpha_bar;

  // 1-based timestep access; t = 0 means "no noise" and returns 1.
  double alpha_bar_at(std::size_t t) const {
    if (t == 0) return 1.0;
    if (t > steps) fail_usage("timestep beyond schedule");
    return alpha_bar[t - 1];
  }

  // Noise variance (1 - alpha_bar_t) / alpha_bar_t of the rescaled input.
  double noise_variance_at(std::size_t t) const {
    const double a = alpha_bar_at(t);
    return (1.0 - a) / a;
  }
};

inline NoiseSchedule linear_schedule(double beta1 = 1e-4, double betaN = 0.02,
                                     std::size_t steps = 1000) {
  if (!(beta1 > 0.0 && beta1 < betaN && betaN < 1.0))
    fail_usage("schedule requires 0 < beta1 < betaN < 1");
  if (steps < 2) fail_usage("schedule requires at least 2 steps");
  NoiseSchedule s{beta1, betaN, steps, std::vector<double>(steps)};
  double prod = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double beta = beta1 + static_cast<double>(i) * (betaN - beta1) / static_cast<double>(steps - 1);
    prod *= 1.0 - beta;
    s.alpha_bar[i] = prod;
  }
  return s;
}

// Smallest t with (1 - alpha_bar_t)/alpha_bar_t >= (sigma * range_scale)^2,
// or 0 when the noise is below the first step's level.
inline std::size_t timestep_for_sigma(const NoiseSchedule& s, double sigma, double range_scale = 2.0) {
  if (!(sigma >= 0.0) || !(range_scale > 0.0)) fail_usage("sigma and range scale must be positive");
  const double target = (sigma * range_scale) * (sigma * range_scale);
  if (target > s.noise_variance_at(s.steps)) fail_usage("sigma exceeds schedule");
  if (target < s.noise_variance_at(1)) return 0;
  // noise_variance_at is increasing in t.
  std::size_t lo = 1, hi = s.steps;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (s.noise_variance_at(mid) >= target)
      hi = mid;
    else
      lo = mid + 1;
  }
  return lo;
}

// Maps a scaled noisy input x_t = sqrt(alpha_bar_t) (x0 + noise) back to an
// estimate of x0, in the denoiser's own value domain.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::vector<double> denoise(std::span<const double> x_t, std::size_t t,
                                      const NoiseSchedule& schedule) const = 0;
  virtual std::string name() const = 0;
};

class IdentityDenoiser final : public Denoiser {
 public:
  std::vector<double> denoise(std::span<const double> x_t, std::size_t t,
                              const NoiseSchedule& schedule) const override {
    const double inv = 1.0 / std::sqrt(schedule.alpha_bar_at(t));
    std::vector<double> out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = x_t[i] * inv;
    return out;
  }
  std::string name() const override { return "identity"; }
};

// Posterior mean under the prior x0 ~ N(prior_mean, prior_var I):
//   x_hat = prior_mean + prior_var / (prior_var + s_t^2) * (x_t / sqrt(a_t) - prior_mean)
class ShrinkageDenoiser final : public Denoiser {
 public:
  ShrinkageDenoiser(std::vector<double> prior_mean, double prior_var)
      : mean_(std::move(prior_mean)), var_(prior_var) {
    if (!(prior_var > 0.0)) fail_usage("prior variance must be positive");
  }

  std::vector<double> denoise(std::span<const double> x_t, std::size_t t,
                              const NoiseSchedule& schedule) const override {
    if (x_t.size() != mean_.size()) fail_data("shrinkage denoiser: shape mismatch");
    const double a = schedule.alpha_bar_at(t);
    const double weight = var_ / (var_ + schedule.noise_variance_at(t));
    const double inv = 1.0 / std::sqrt(a);
    std::vector<double> out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i)
      out[i] = mean_[i] + weight * (x_t[i] * inv - mean_[i]);
    return out;
  }
  std::string name() const override { return "shrinkage"; }

  double prior_var() const noexcept { return var_; }

 private:
  std::vector<double> mean_;
  double var_;
};

inline std::shared_ptr<const Denoiser> identity_denoiser() {
  return std::make_shared<IdentityDenoiser>();
}

inline std::shared_ptr<const Denoiser> shrinkage_denoiser(std::vector<double> prior_mean,
                                                          double prior_var) {
  return std::make_shared<ShrinkageDenoiser>(std::move(prior_mean), prior_var);
}

// Shrinkage prior given in pixel units, converted to the denoiser domain
// (values multiplied by range_scale).
inline std::shared_ptr<const Denoiser> shrinkage_denoiser_for_pixels(std::span<const double> mean_px,
                                                                     double var_px,
                                                                     double range_scale) {
  std::vector<double> mean(mean_px.begin(), mean_px.end());
  for (auto& v : mean) v *= range_scale;
  return shrinkage_denoiser(std::move(mean), var_px * range_scale * range_scale);
}

// Fixed parameters of one smoothing transform.
struct DdsConfig {
  double sigma = 0.25;
  double range_scale = 2.0;
  NoiseSchedule schedule = linear_schedule();
};

// One draw of the smoothing transform: x + delta with delta ~ N(0, sigma^2 I),
// moved to the denoiser domain (times range_scale), scaled by
// sqrt(alpha_bar_t*), denoised, and mapped back to pixel units. With t* = 0
// the noisy input is returned unchanged.
inline std::vector<double> dds_transform(std::span<const double> x, const DdsConfig& cfg,
                                         std::size_t t_star, const Denoiser& denoiser,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> noisy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) noisy[i] = x[i] + cfg.sigma * rng.normal();
  if (t_star == 0) return noisy;
  const double scale = std::sqrt(cfg.schedule.alpha_bar_at(t_star)) * cfg.range_scale;
  for (auto& v : noisy) v *= scale;
  auto out = denoiser.denoise(noisy, t_star, cfg.schedule);
  if (out.size() != x.size()) fail_data("denoiser changed the input shape");
  for (auto& v : out) {
    if (!std::isfinite(v)) fail_data("denoiser produced a non-finite value");
    v /= cfg.range_scale;
  }
  return out;
}

inline std::vector<double> dds_transform(std::span<const double> x, const DdsConfig& cfg,
                                         const Denoiser& denoiser, std::uint64_t seed) {
  return dds_transform(x, cfg, timestep_for_sigma(cfg.schedule, cfg.sigma, cfg.range_scale),
                       denoiser, seed);
}

// Max-fuse with lowest-value drop: per map, zero the lowest drop_frac share
// of entries (ties by index); take the elementwise maximum; min-max rescale
// to [0, 1]. A constant fused map becomes all zeros.
inline std::vector<double> fuse_maps(std::span<const std::vector<double>> maps, double drop_frac) {
  if (maps.empty()) fail_usage("fuse_maps: empty map list");
  if (!(drop_frac >= 0.0 && drop_frac < 1.0)) fail_usage("fuse_maps: drop fraction must lie in [0, 1)");
  const std::size_t n = maps.front().size();
  std::vector<double> fused(n, -std::numeric_limits<double>::infinity());
  for (const auto& map : maps) {
    if (map.size() != n) fail_data("fuse_maps: maps differ in shape");
    std::vector<double> m = map;
    const auto drop = static_cast<std::size_t>(std::floor(drop_frac * static_cast<double>(n)));
    if (drop > 0) {
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return map[a] < map[b]; });
      for (std::size_t j = 0; j < drop; ++j) m[idx[j]] = 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) fused[i] = std::max(fused[i], m[i]);
  }
  const auto [mn, mx] = std::minmax_element(fused.begin(), fused.end());
  const double lo = *mn, hi = *mx;
  if (!(hi > lo)) return std::vector<double>(n, 0.0);
  for (auto& v : fused) v = (v - lo) / (hi - lo);
  return fused;
}

}  // namespace fvit
