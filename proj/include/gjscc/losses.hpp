#pragma once

#include <optional>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "gjscc/adversary.hpp"
#include "gjscc/features.hpp"

namespace gjscc {

/// Lower bound applied inside every log so losses stay finite at 0 and 1.
inline constexpr double kLogEpsilon = 1e-8;

struct LossWeights {
  double beta_p = 1.0;  ///< perceptual (LPIPS)
  double beta_m = 1e-5; ///< MSE
  double beta_g = 0.0;  ///< adversarial, generator side

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
  friend void to_json(nlohmann::json& j, const LossWeights& w);
  friend void from_json(const nlohmann::json& j, LossWeights& w);
};

/// Scalar summary of a generator loss; total is recomputed in double from the
/// weighted components.
struct LossReport {
  double total = 0.0;
  double adversarial = 0.0;
  double perceptual = 0.0;
  double mse = 0.0;
};

/// Differentiable generator objective with its components.
struct GeneratorLoss {
  torch::Tensor total;
  torch::Tensor adversarial;
  torch::Tensor perceptual;
  torch::Tensor mse;
  LossWeights weights;

  LossReport report() const;
};

/// LPIPS per image, [N]: sum over taps of the spatial mean of the weighted
/// squared difference between channel-normalized features.
torch::Tensor lpips_per_image(const torch::Tensor& x, const torch::Tensor& x_hat,
                              FeatureExtractor& features);

/// Batch mean of lpips_per_image. Throws ShapeError when dims differ.
torch::Tensor lpips_distance(const torch::Tensor& x, const torch::Tensor& x_hat,
                             FeatureExtractor& features);

torch::Tensor mse_distortion(const torch::Tensor& x, const torch::Tensor& x_hat);

/// beta_g * mean(-log d_out) + beta_p * LPIPS + beta_m * MSE. Without d_out the
/// adversarial term is zero. A component whose weight is zero is still
/// evaluated for reporting, but outside the autograd graph.
GeneratorLoss generator_loss(const std::optional<PatchLogits>& d_out, const torch::Tensor& x,
                             const torch::Tensor& x_hat, const LossWeights& w,
                             FeatureExtractor& features);

/// mean(-log d_real) + mean(-log(1 - d_fake)), to be minimized.
torch::Tensor discriminator_loss(const PatchLogits& d_real, const PatchLogits& d_fake);

/// mean(-log d_out), the non-saturating generator term.
torch::Tensor adversarial_generator_term(const PatchLogits& d_out);

}  // namespace gjscc
