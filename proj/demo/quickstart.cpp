// Trains the toy ViT head on synthetic blobs, certifies a few inputs and
// prints their faithful-region radii.

#include <cstdio>

#include "fvit/attack_eval.hpp"
#include "fvit/certify.hpp"

int main() {
  using namespace fvit;
  const auto train = gen_synthetic_dataset(200, 16, 7);
  const auto test = gen_synthetic_dataset(5, 16, 99);
  const ToyViT model(fit_head(init_params(8, ToyViTDims{}), train.images, train.labels));

  const auto denoiser = identity_denoiser();
  SmoothingPipeline pipe{&model, denoiser.get(), DdsConfig{0.25}, 1};
  CertParams params;
  params.m = 2048;

  std::printf("t* = %zu\n", pipe.timestep());
  std::printf("%-4s %-6s %-8s %-10s %-10s %-10s\n", "id", "label", "p1", "P", "Q", "R");
  for (std::size_t i = 0; i < test.images.size(); ++i) {
    const auto r = certify_input(pipe, test.images[i], params);
    std::printf("%-4zu %-6zu %-8.4f %-10.3g %-10.3g %-10.3g\n", i, test.labels[i], r.p1, r.P_bound,
                r.Q_bound, r.R_faithful);
  }
}
