#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "gjscc/channel.hpp"

namespace gjscc {

struct DiscriminatorConfig {
  std::vector<std::int64_t> channel_widths{64, 128, 256, 512};
  bool spectral_norm = true;
  /// Output-map granularity in pixels; must equal 2^(number of stages).
  std::int64_t patch_pixels = 16;
  /// Nearest-neighbour factor applied to the latent grid before concatenation.
  /// Must equal the codec's downsample factor.
  std::int64_t condition_upsample = 16;
  std::int64_t latent_channels = 16;
  std::int64_t power_iterations = 1;
  double leaky_slope = 0.2;

  void validate() const;

  friend void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
  friend void from_json(const nlohmann::json& j, DiscriminatorConfig& c);
};

/// 2-D convolution whose weight is divided by a running power-iteration
/// estimate of its top singular value. The estimate (`u`) only advances in
/// training mode, so eval-mode forwards are pure functions of the weights.
class SpectralNormConv2dImpl : public torch::nn::Module {
 public:
  SpectralNormConv2dImpl(torch::nn::Conv2dOptions options, std::int64_t power_iterations,
                         bool enabled = true);

  torch::Tensor forward(const torch::Tensor& x);
  /// Weight actually applied by forward() (W / sigma when enabled).
  torch::Tensor normalized_weight();
  /// Runs `steps` extra power iterations without touching the weights.
  void refine(std::int64_t steps);

  torch::Tensor weight_orig;
  torch::Tensor bias;

 private:
  void power_iterate(std::int64_t steps);

  torch::nn::Conv2dOptions options_;
  std::int64_t power_iterations_;
  bool enabled_;
  torch::Tensor u_;
};
TORCH_MODULE(SpectralNormConv2d);

/// Probabilities in (0,1), one per 16x16 image patch: [N,1,H/16,W/16].
using PatchLogits = torch::Tensor;

/// Conditional PatchGAN: (image, upsampled codeword) -> per-patch probabilities.
/// Four stride-2 conv/spectral-norm/LReLU modules, then a conv + sigmoid head.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const DiscriminatorConfig& cfg);

  /// image [N,3,H,W], condition grid [N,C,h,w] with h*factor == H.
  PatchLogits forward(const torch::Tensor& image, const torch::Tensor& condition_grid);

  const DiscriminatorConfig& config() const { return cfg_; }
  std::vector<SpectralNormConv2d>& layers() { return layers_; }

 private:
  DiscriminatorConfig cfg_;
  std::vector<SpectralNormConv2d> layers_;
  SpectralNormConv2d head_{nullptr};
};
TORCH_MODULE(Discriminator);

Discriminator build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);

/// Reshapes `s` to its latent grid, upsamples it to the image resolution and
/// scores the pair. Throws ShapeError on spatial mismatch.
PatchLogits discriminate(Discriminator& disc, const torch::Tensor& image, const Codeword& s);

}  // namespace gjscc
