#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fvit/attack_eval.hpp"

using namespace fvit;

namespace {

struct Fixture {
  SyntheticDataset train = gen_synthetic_dataset(100, 16, 7);
  ToyViT model{fit_head(init_params(8, ToyViTDims{}), train.images, train.labels)};
  std::shared_ptr<const Denoiser> denoiser = identity_denoiser();
  SmoothingPipeline pipe{&model, denoiser.get(), DdsConfig{0.25}, 1};
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

LossFn quadratic(std::vector<double> target) {
  return [target](std::span<const double> x) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s -= (x[i] - target[i]) * (x[i] - target[i]);
    return s;
  };
}

}  // namespace

TEST(Pgd, ZeroRadiusReturnsInput) {
  const std::vector<double> x{0.2, 0.4};
  AttackConfig cfg;
  cfg.radius = 0;
  EXPECT_EQ(pgd_attack(quadratic({1, 1}), x, cfg), x);
}

TEST(Pgd, StaysInBallAndBox) {
  Rng rng(1);
  for (auto norm : {Norm::L2, Norm::LINF}) {
    for (int i = 0; i < 30; ++i) {
      std::vector<double> x(8), target(8);
      for (auto& v : x) v = rng.uniform();
      for (auto& v : target) v = 4 * rng.uniform() - 2;
      AttackConfig cfg;
      cfg.norm = norm;
      cfg.radius = 0.3 * rng.uniform();
      cfg.step_size = 0.1;
      cfg.random_start = i % 2 == 1;
      cfg.seed = static_cast<std::uint64_t>(i);
      const auto adv = pgd_attack(quadratic(target), x, cfg);
      EXPECT_LE(perturbation_norm(adv, x, norm), cfg.radius + 1e-9);
      for (double v : adv) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Pgd, ImprovesSmoothQuadratic) {
  const std::vector<double> x{0.5, 0.5, 0.5};
  const auto loss = quadratic({0.9, 0.1, 0.6});
  for (auto norm : {Norm::L2, Norm::LINF}) {
    AttackConfig cfg;
    cfg.norm = norm;
    cfg.radius = 0.2;
    cfg.step_size = 0.05;
    const auto adv = pgd_attack(loss, x, cfg);
    EXPECT_GE(loss(adv), loss(x));
    EXPECT_GT(loss(adv), loss(x) + 0.05);
  }
}

TEST(Pgd, NonFiniteLossAbortsWithIterate) {
  int calls = 0;
  LossFn bad = [&](std::span<const double>) { return ++calls > 3 ? std::nan("") : 0.0; };
  AttackConfig cfg;
  cfg.radius = 0.1;
  try {
    pgd_attack(bad, std::vector<double>{0.5}, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("iterate"), std::string::npos);
  }
}

TEST(Pgd, ConfigValidation) {
  AttackConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(pgd_attack(quadratic({0}), std::vector<double>{0.5}, cfg), Error);
  cfg.steps = 1;
  cfg.radius = -1;
  EXPECT_THROW(pgd_attack(quadratic({0}), std::vector<double>{0.5}, cfg), Error);
}

TEST(BreakTopK, LossBoundsAndReference) {
  const auto& f = fixture();
  const auto x = f.train.images[0];
  SurrogateSetup s{8, 3};
  const auto ref = estimate_smoothed(f.pipe, x, s.draws, s.seed).w_tilde;
  const auto loss = break_topk_loss(f.pipe, ref, 4, s);
  const auto top = topk_set(ref, 4);
  double mass = 0;
  for (auto i : top) mass += ref[i];
  // At the reference input the loss is 1 minus the largest 4-entry mass,
  // the smallest value this surrogate can take for that vector.
  EXPECT_NEAR(loss(x), 1 - mass, 1e-12);
  const auto all = break_topk_loss(f.pipe, ref, 16, s);
  EXPECT_NEAR(all(x), 0.0, 1e-12);
}

TEST(BreakTopK, SurrogateTracksOverlap) {
  // Rank agreement between the mass surrogate and the exact overlap on
  // random pairs: lower overlap should come with higher loss more often
  // than not.
  Rng rng(4);
  int agree = 0, total = 0;
  for (int i = 0; i < 300; ++i) {
    std::vector<double> ref(16), a(16), b(16);
    for (auto& v : ref) v = rng.uniform();
    for (std::size_t j = 0; j < 16; ++j) {
      a[j] = ref[j] + 0.5 * rng.normal();
      b[j] = ref[j] + 0.5 * rng.normal();
    }
    const auto r = normalize_simplex(ref), na = normalize_simplex(a), nb = normalize_simplex(b);
    const auto top = topk_set(r, 4);
    auto surrogate = [&](const AttentionVector& w) {
      double m = 0;
      for (auto j : top) m += w[j];
      return 1 - m;
    };
    const double va = overlap_ratio(r, na, 4), vb = overlap_ratio(r, nb, 4);
    if (va == vb) continue;
    ++total;
    agree += ((va < vb) == (surrogate(na) > surrogate(nb))) ? 1 : 0;
  }
  EXPECT_GT(agree, total * 6 / 10);
}

TEST(Verify, FactorZeroAndMonotone) {
  const auto& f = fixture();
  const auto x = f.train.images[1];
  VerifyParams vp;
  vp.factors = {0.0, 1.0, 400.0};
  vp.attempts = 2;
  vp.m = 256;
  vp.steps = 3;
  vp.surrogate = {4, 1};
  const auto rep = verify_region(f.pipe, x, 1e-3, vp);
  ASSERT_EQ(rep.rows.size(), 6u);
  EXPECT_EQ(rep.rows[0].successes + rep.rows[1].successes, 0u);
  EXPECT_EQ(rep.combined_rate[0], 0.0);
  EXPECT_LE(rep.combined_rate[0], rep.combined_rate[1]);
  EXPECT_LE(rep.combined_rate[1], rep.combined_rate[2]);
}

TEST(Verify, LargeBallBreaksTheTopK) {
  // With a box-sized radius the attacker can rewrite the image, so the
  // verification machinery must report a success.
  const auto& f = fixture();
  VerifyParams vp;
  vp.factors = {1.0};
  vp.attempts = 1;
  vp.m = 256;
  vp.steps = 5;
  vp.surrogate = {4, 1};
  const auto rep = verify_region(f.pipe, f.train.images[1], 16.0, vp);
  EXPECT_EQ(rep.combined_rate[0], 1.0);
}

TEST(Verify, UnsortedFactorsReportedInGivenOrder) {
  const auto& f = fixture();
  VerifyParams vp;
  vp.factors = {2.0, 1.0};
  vp.attempts = 1;
  vp.m = 64;
  vp.steps = 1;
  vp.surrogate = {2, 1};
  const auto rep = verify_region(f.pipe, f.train.images[2], 1e-4, vp);
  EXPECT_EQ(rep.rows[0].factor, 2.0);
  EXPECT_EQ(rep.rows[2].factor, 1.0);
  vp.factors = {};
  EXPECT_THROW(verify_region(f.pipe, f.train.images[2], 1e-4, vp), Error);
}

TEST(Metrics, SFaithExamples) {
  const std::vector<double> a{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(s_faith(a, a), 4 / 0.01);
  const std::vector<double> b{0.1 + 1.99, 0.2, 0.3, 0.4};
  EXPECT_NEAR(s_faith(a, b), 2.0, 1e-12);
  EXPECT_EQ(s_faith(a, b), s_faith(b, a));
  EXPECT_THROW(s_faith(a, std::vector<double>{1}), Error);
}

TEST(Metrics, SFaithDropsWithNoise) {
  Rng rng(5);
  std::vector<double> m(100);
  for (auto& v : m) v = rng.uniform();
  double prev = kInf;
  for (double level : {0.0, 0.01, 0.05, 0.2}) {
    Rng noise(6);
    std::vector<double> n(m);
    for (auto& v : n) v += level * noise.normal();
    const double s = s_faith(m, n);
    EXPECT_LT(s, prev);
    prev = s;
  }
}

TEST(Metrics, PerfectSaliency) {
  const std::vector<double> mask{0, 1, 1, 0, 0, 1};
  EXPECT_EQ(pixel_accuracy(mask, mask), 1.0);
  EXPECT_EQ(miou(mask, mask), 1.0);
  EXPECT_EQ(average_precision(mask, mask).value, 1.0);
}

TEST(Metrics, ConstantMapIsAllBackground) {
  const std::vector<double> map(4, 0.7), mask{1, 1, 0, 0};
  EXPECT_EQ(pixel_accuracy(map, mask), 0.5);
  // Background IoU 2/4, foreground 0/2.
  EXPECT_EQ(miou(map, mask), 0.25);
}

TEST(Metrics, AveragePrecisionHandExample) {
  // Scores rank the pixels 0,1,2,3; positives are 0 and 2.
  const std::vector<double> map{0.9, 0.8, 0.7, 0.6}, mask{1, 0, 1, 0};
  // PR points: (0,1) (0.5,1) (0.5,0.5) (1,2/3) (1,0.5)
  const double expected = 0.5 * 1.0 + 0.5 * (0.5 + 2.0 / 3.0) / 2;
  EXPECT_NEAR(average_precision(map, mask).value, expected, 1e-12);
}

TEST(Metrics, AveragePrecisionEmptyMaskAndRange) {
  const auto ap = average_precision(std::vector<double>{0.1, 0.2}, std::vector<double>{0, 0});
  EXPECT_EQ(ap.value, 0.0);
  EXPECT_TRUE(ap.empty_mask);
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> map(30), mask(30);
    for (auto& v : map) v = rng.uniform();
    for (auto& v : mask) v = rng.uniform() < 0.3 ? 1 : 0;
    const auto r = average_precision(map, mask);
    EXPECT_GE(r.value, 0.0);
    EXPECT_LE(r.value, 1.0);
  }
  EXPECT_THROW(pixel_accuracy(std::vector<double>{0.1}, std::vector<double>{0.5}), Error);
}

TEST(Perturbation, PAucOfConstantCurve) {
  EXPECT_EQ(p_auc(std::vector<double>(9, 0.5)), 50.0);
  EXPECT_THROW(p_auc(std::vector<double>{}), Error);
}

TEST(Perturbation, ErasesRequestedPixels) {
  const std::vector<double> x{0.5, 0.6, 0.7, 0.8}, sal{0.1, 0.9, 0.5, 0.3};
  EXPECT_EQ(erase_pixels(x, sal, PerturbationMode::POSITIVE, 0.5), (std::vector<double>{0.5, 0, 0, 0.8}));
  EXPECT_EQ(erase_pixels(x, sal, PerturbationMode::NEGATIVE, 0.5), (std::vector<double>{0, 0.6, 0.7, 0}));
  EXPECT_EQ(erase_pixels(x, sal, PerturbationMode::NEGATIVE, 0.0), x);
}

TEST(Perturbation, FractionZeroKeepsCleanPrediction) {
  const auto& f = fixture();
  const auto& x = f.train.images[4];
  const std::vector<double> fr{0.0};
  EXPECT_EQ(perturbation_test(f.pipe, f.train.masks[4], x, PerturbationMode::POSITIVE, fr, 64, 1),
            std::vector<double>{1.0});
}

TEST(Perturbation, OracleNegativeAtLeastPositive) {
  const auto& f = fixture();
  const auto fractions = default_erase_fractions();
  double pos = 0, neg = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& x = f.train.images[i];
    pos += p_auc(perturbation_test(f.pipe, f.train.masks[i], x, PerturbationMode::POSITIVE, fractions, 64, 1));
    neg += p_auc(perturbation_test(f.pipe, f.train.masks[i], x, PerturbationMode::NEGATIVE, fractions, 64, 1));
  }
  EXPECT_GE(neg, pos);
}

TEST(Upsample, ReplicatesPatches) {
  const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
  const auto map = upsample_attention(w, 2, 2);
  EXPECT_EQ(map, (std::vector<double>{0.1, 0.1, 0.2, 0.2, 0.1, 0.1, 0.2, 0.2, 0.3, 0.3, 0.4, 0.4, 0.3, 0.3, 0.4, 0.4}));
  EXPECT_THROW(upsample_attention(w, 3, 2), Error);
}

TEST(Synthetic, DeterministicBalancedAndBright) {
  const auto a = gen_synthetic_dataset(11, 16, 5), b = gen_synthetic_dataset(11, 16, 5);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.masks, b.masks);
  const auto ones = std::count(a.labels.begin(), a.labels.end(), std::size_t{1});
  EXPECT_LE(std::abs(2 * static_cast<long>(ones) - 11), 1);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    double in = 0, out = 0;
    std::size_t nin = 0;
    for (std::size_t j = 0; j < a.images[i].size(); ++j) {
      if (a.masks[i][j] == 1) {
        in += a.images[i][j];
        ++nin;
      } else {
        out += a.images[i][j];
      }
    }
    EXPECT_GT(in / nin, out / (a.images[i].size() - nin));
    // Class 1 blobs are larger.
    EXPECT_EQ(nin, a.labels[i] == 0 ? 16u : 64u);
  }
  EXPECT_THROW(gen_synthetic_dataset(0, 16, 1), Error);
}
