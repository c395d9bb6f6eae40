#include "gjscc/adversary.hpp"


#include "gjscc/error.hpp"
#include "gjscc/seeding.hpp"

namespace gjscc {

namespace F = torch::nn::functional;

namespace {

torch::Tensor l2_normalize(const torch::Tensor& v) {
  return v / (v.norm() + 1e-12);
}
}  // namespace

void DiscriminatorConfig::validate() const {
  if (channel_widths.empty()) throw ConfigError("discriminator: channel_widths is empty");
  for (auto w : channel_widths) {
    if (w < 1) throw ConfigError("discriminator: widths must be positive");
  }
  if ((std::int64_t{1} << channel_widths.size()) != patch_pixels) {
    throw ConfigError("discriminator: patch_pixels must equal 2^(number of stages)");
  }
  if (condition_upsample < 1 || latent_channels < 1) {
    throw ConfigError("discriminator: condition_upsample and latent_channels must be >= 1");
  }
  if (power_iterations < 1) throw ConfigError("discriminator: power_iterations must be >= 1");
}

void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = nlohmann::json{{"channel_widths", c.channel_widths},
                     {"spectral_norm", c.spectral_norm},
                     {"patch_pixels", c.patch_pixels},
                     {"condition_upsample", c.condition_upsample},
                     {"latent_channels", c.latent_channels},
                     {"power_iterations", c.power_iterations},
                     {"leaky_slope", c.leaky_slope}};
}

void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  c.channel_widths = j.value("channel_widths", c.channel_widths);
  c.spectral_norm = j.value("spectral_norm", c.spectral_norm);
  c.patch_pixels = j.value("patch_pixels", std::int64_t{1} << c.channel_widths.size());
  c.condition_upsample = j.value("condition_upsample", c.condition_upsample);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.power_iterations = j.value("power_iterations", c.power_iterations);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
}

SpectralNormConv2dImpl::SpectralNormConv2dImpl(torch::nn::Conv2dOptions options,
                                               std::int64_t power_iterations, bool enabled)
    : options_(options), power_iterations_(power_iterations), enabled_(enabled) {
  // Reuse Conv2d's default initialization.
  torch::nn::Conv2d proto(options);
  weight_orig = register_parameter("weight_orig", proto->weight.detach().clone());
  bias = register_parameter("bias", proto->bias.detach().clone());
  u_ = register_buffer("u", l2_normalize(torch::randn({options.out_channels()})));
  if (enabled_) power_iterate(20);
}

void SpectralNormConv2dImpl::power_iterate(std::int64_t steps) {
  torch::NoGradGuard no_grad;
  auto w = weight_orig.reshape({weight_orig.size(0), -1});
  auto u = u_.to(w.dtype());
  for (std::int64_t i = 0; i < steps; ++i) {
    auto v = l2_normalize(torch::mv(w.t(), u));
    u = l2_normalize(torch::mv(w, v));
  }
  u_.copy_(u);
}

void SpectralNormConv2dImpl::refine(std::int64_t steps) {
  if (enabled_) power_iterate(steps);
}

torch::Tensor SpectralNormConv2dImpl::normalized_weight() {
  if (!enabled_) return weight_orig;
  if (is_training()) power_iterate(power_iterations_);
  auto w = weight_orig.reshape({weight_orig.size(0), -1});
  torch::Tensor u, v;
  {
    torch::NoGradGuard no_grad;
    u = u_.to(w.dtype()).clone();
    v = l2_normalize(torch::mv(w.t(), u));
  }
  auto sigma = torch::dot(u, torch::mv(w, v));
  return weight_orig / sigma;
}

torch::Tensor SpectralNormConv2dImpl::forward(const torch::Tensor& x) {
  return F::conv2d(x, normalized_weight(),
                   F::Conv2dFuncOptions()
                       .bias(bias)
                       .stride(options_.stride())
                       .padding(std::get<torch::ExpandingArray<2>>(options_.padding())));
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::int64_t in = 3 + cfg_.latent_channels;
  for (std::size_t i = 0; i < cfg_.channel_widths.size(); ++i) {
    const auto out = cfg_.channel_widths[i];
    auto layer = SpectralNormConv2d(
        torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1), cfg_.power_iterations,
        cfg_.spectral_norm);
    layers_.push_back(register_module("down" + std::to_string(i), layer));
    in = out;
  }
  head_ = register_module(
      "head", SpectralNormConv2d(torch::nn::Conv2dOptions(in, 1, 3).stride(1).padding(1),
                                 cfg_.power_iterations, cfg_.spectral_norm));
}

PatchLogits DiscriminatorImpl::forward(const torch::Tensor& image,
                                       const torch::Tensor& condition_grid) {
  const auto factor = cfg_.condition_upsample;
  if (image.dim() != 4 || condition_grid.dim() != 4 || image.size(0) != condition_grid.size(0)) {
    throw ShapeError("discriminator expects batched image and condition tensors");
  }
  if (condition_grid.size(1) != cfg_.latent_channels) {
    throw ShapeError("discriminator: condition has " + std::to_string(condition_grid.size(1)) +
                     " channels, expected " + std::to_string(cfg_.latent_channels));
  }
  if (condition_grid.size(2) * factor != image.size(2) ||
      condition_grid.size(3) * factor != image.size(3)) {
    throw ShapeError("discriminator: latent grid " + std::to_string(condition_grid.size(2)) + "x" +
                     std::to_string(condition_grid.size(3)) + " x" + std::to_string(factor) +
                     " does not match image " + std::to_string(image.size(2)) + "x" +
                     std::to_string(image.size(3)));
  }
  if (image.size(2) % cfg_.patch_pixels != 0 || image.size(3) % cfg_.patch_pixels != 0) {
    throw ShapeError("discriminator: image dims must be multiples of the patch size");
  }
  auto cond = F::interpolate(condition_grid.to(image.dtype()),
                             F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{double(factor), double(factor)})
                                 .mode(torch::kNearest));
  auto h = torch::cat({image, cond}, 1);
  for (auto& layer : layers_) {
    h = F::leaky_relu(layer(h), F::LeakyReLUFuncOptions().negative_slope(cfg_.leaky_slope));
  }
  return torch::sigmoid(head_(h));
}

Discriminator build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  return with_seed(seed, [&] { return Discriminator(cfg); });
}

PatchLogits discriminate(Discriminator& disc, const torch::Tensor& image, const Codeword& s) {
  auto batch = image.dim() == 3 ? image.unsqueeze(0) : image;
  if (s.values.size(0) != batch.size(0)) {
    throw ShapeError("discriminate: codeword batch does not match image batch");
  }
  return disc->forward(batch, s.as_grid());
}

}  // namespace gjscc
