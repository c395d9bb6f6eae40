#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "gjscc/channel.hpp"
#include "gjscc/rational.hpp"

namespace gjscc {

enum class NormKind { ChannelNorm };

struct CodecConfig {
  /// Product of the stride-2 stages; must be a power of two.
  std::int64_t downsample_factor = 16;
  std::int64_t base_channels = 64;
  /// Width doubles per stage up to this cap.
  std::int64_t max_channels = 256;
  std::int64_t latent_channels = 16;
  std::int64_t residual_blocks = 4;
  NormKind norm = NormKind::ChannelNorm;
  double leaky_slope = 0.2;

  void validate() const;
  std::int64_t stages() const;
  /// Width of the feature map after `stage` downsampling stages (0 = stem).
  std::int64_t width_at(std::int64_t stage) const;
  /// C_out / (3 d^2).
  Rational cbr() const;
  /// Chooses latent_channels = round(3 d^2 R). The realized ratio is cbr().
  CodecConfig with_cbr(double requested) const;

  friend void to_json(nlohmann::json& j, const CodecConfig& c);
  friend void from_json(const nlohmann::json& j, CodecConfig& c);
};

/// Per-pixel normalization across channels followed by a per-channel affine map.
class ChannelNormImpl : public torch::nn::Module {
 public:
  explicit ChannelNormImpl(std::int64_t channels, double eps = 1e-3);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  double eps_;
  torch::Tensor gamma_;
  torch::Tensor beta_;
};
TORCH_MODULE(ChannelNorm);

/// conv3x3 -> norm -> LReLU -> conv3x3 -> norm, plus identity skip.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(std::int64_t channels, double slope);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  ChannelNorm norm1_{nullptr}, norm2_{nullptr};
  double slope_;
};
TORCH_MODULE(ResidualBlock);

/// Image [N,3,H,W] -> latent [N,C_out,H/d,W/d]. H and W must be multiples of d.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const CodecConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Encoder);

/// Latent [N,C_out,h,w] -> image [N,3,h*d,w*d] squashed into (0,1) by a sigmoid.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const CodecConfig& cfg);
  torch::Tensor forward(const torch::Tensor& latent);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Generator);

/// Geometry recorded by encode() so generate() can undo the padding.
struct LatentLayout {
  GridShape grid;
  std::int64_t image_height = 0;
  std::int64_t image_width = 0;
  std::int64_t padded_height = 0;
  std::int64_t padded_width = 0;

  bool padded() const { return padded_height != image_height || padded_width != image_width; }
  RateSpec rate() const { return compute_cbr(image_height, image_width, grid.size()); }
};

struct Encoded {
  Codeword codeword;
  LatentLayout layout;
};

/// Encoder/generator pair. Registered as submodules "encoder" and "generator".
class CodecImpl : public torch::nn::Module {
 public:
  explicit CodecImpl(const CodecConfig& cfg);

  const CodecConfig& config() const { return cfg_; }
  Encoder& encoder() { return encoder_; }
  Generator& generator() { return generator_; }

  /// x is [3,H,W] or [N,3,H,W] in [0,1]. Dimensions that are not multiples of
  /// d are reflect-padded; the padding is recorded in the layout.
  Encoded encode(const torch::Tensor& x);

  /// Received symbols [N,k] (or [k]) -> image cropped back to the source size.
  /// Throws ShapeError when the length does not match the layout's grid.
  torch::Tensor generate(const torch::Tensor& s_hat, const LatentLayout& layout);

  /// generate(encode(x)) through a noiseless link.
  torch::Tensor reconstruct(const torch::Tensor& x);

  /// Latent grid shape for an image of the given size (after padding).
  LatentLayout layout_for(std::int64_t height, std::int64_t width) const;

 private:
  CodecConfig cfg_;
  Encoder encoder_{nullptr};
  Generator generator_{nullptr};
};
TORCH_MODULE(Codec);

/// Builds a codec with parameters drawn from a generator seeded by `seed`.
Codec build_codec(const CodecConfig& cfg, std::uint64_t seed);

/// SHA-256 over the raw bytes of every parameter and buffer, in name order.
std::string parameter_hash(const torch::nn::Module& module);

}  // namespace gjscc
