#include "gjscc/codec.hpp"

#include <cmath>

#include "gjscc/error.hpp"
#include "gjscc/seeding.hpp"
#include "gjscc/hash.hpp"

namespace gjscc {

namespace F = torch::nn::functional;

namespace {

bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

torch::nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t kernel,
                       std::int64_t stride = 1) {
  auto opts = torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2);
  if (kernel > 3) opts.padding_mode(torch::kReflect);
  return torch::nn::Conv2d(opts);
}

torch::nn::LeakyReLU lrelu(double slope) {
  return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(slope));
}


}  // namespace

void CodecConfig::validate() const {
  if (!is_power_of_two(downsample_factor) || downsample_factor < 2) {
    throw ConfigError("codec: downsample_factor must be a power of two >= 2");
  }
  if (latent_channels < 1) throw ConfigError("codec: latent_channels must be >= 1");
  if (base_channels < 1 || max_channels < base_channels) {
    throw ConfigError("codec: need 1 <= base_channels <= max_channels");
  }
  if (residual_blocks < 0) throw ConfigError("codec: residual_blocks must be >= 0");
  if (!(leaky_slope >= 0.0)) throw ConfigError("codec: leaky_slope must be >= 0");
}

std::int64_t CodecConfig::stages() const {
  std::int64_t n = 0;
  for (auto d = downsample_factor; d > 1; d >>= 1) ++n;
  return n;
}

std::int64_t CodecConfig::width_at(std::int64_t stage) const {
  std::int64_t w = base_channels;
  for (std::int64_t i = 0; i < stage && w < max_channels; ++i) w *= 2;
  return std::min(w, max_channels);
}

Rational CodecConfig::cbr() const {
  return Rational(latent_channels, 3 * downsample_factor * downsample_factor);
}

CodecConfig CodecConfig::with_cbr(double requested) const {
  if (!(requested > 0.0 && requested <= 1.0)) {
    throw InvalidRateError("requested CBR must lie in (0, 1]");
  }
  CodecConfig out = *this;
  const double exact = 3.0 * static_cast<double>(downsample_factor * downsample_factor) * requested;
  out.latent_channels = std::max<std::int64_t>(1, std::llround(exact));
  return out;
}

void to_json(nlohmann::json& j, const CodecConfig& c) {
  j = nlohmann::json{{"downsample_factor", c.downsample_factor},
                     {"base_channels", c.base_channels},
                     {"max_channels", c.max_channels},
                     {"latent_channels", c.latent_channels},
                     {"residual_blocks", c.residual_blocks},
                     {"norm", "channel_norm"},
                     {"leaky_slope", c.leaky_slope}};
}

void from_json(const nlohmann::json& j, CodecConfig& c) {
  c.downsample_factor = j.value("downsample_factor", c.downsample_factor);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.max_channels = j.value("max_channels", c.max_channels);
  c.residual_blocks = j.value("residual_blocks", c.residual_blocks);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  if (j.contains("cbr")) {
    c = c.with_cbr(Rational::parse(j.at("cbr").get<std::string>()).value());
  }
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  if (j.value("norm", std::string("channel_norm")) != "channel_norm") {
    throw ConfigError("codec: only channel_norm is supported");
  }
}

ChannelNormImpl::ChannelNormImpl(std::int64_t channels, double eps) : eps_(eps) {
  gamma_ = register_parameter("gamma", torch::ones({1, channels, 1, 1}));
  beta_ = register_parameter("beta", torch::zeros({1, channels, 1, 1}));
}

torch::Tensor ChannelNormImpl::forward(const torch::Tensor& x) {
  auto mean = x.mean(1, /*keepdim=*/true);
  auto var = x.var(1, /*unbiased=*/false, /*keepdim=*/true);
  return (x - mean) * torch::rsqrt(var + eps_) * gamma_ + beta_;
}

ResidualBlockImpl::ResidualBlockImpl(std::int64_t channels, double slope) : slope_(slope) {
  conv1_ = register_module("conv1", conv(channels, channels, 3));
  norm1_ = register_module("norm1", ChannelNorm(channels));
  conv2_ = register_module("conv2", conv(channels, channels, 3));
  norm2_ = register_module("norm2", ChannelNorm(channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto h = F::leaky_relu(norm1_(conv1_(x)), F::LeakyReLUFuncOptions().negative_slope(slope_));
  return x + norm2_(conv2_(h));
}

EncoderImpl::EncoderImpl(const CodecConfig& cfg) {
  cfg.validate();
  torch::nn::Sequential body;
  body->push_back(conv(3, cfg.width_at(0), 7));
  body->push_back(ChannelNorm(cfg.width_at(0)));
  body->push_back(lrelu(cfg.leaky_slope));
  for (std::int64_t s = 1; s <= cfg.stages(); ++s) {
    body->push_back(conv(cfg.width_at(s - 1), cfg.width_at(s), 3, 2));
    body->push_back(ChannelNorm(cfg.width_at(s)));
    body->push_back(lrelu(cfg.leaky_slope));
  }
  const auto bottleneck = cfg.width_at(cfg.stages());
  for (std::int64_t b = 0; b < cfg.residual_blocks; ++b) {
    body->push_back(ResidualBlock(bottleneck, cfg.leaky_slope));
  }
  body->push_back(conv(bottleneck, cfg.latent_channels, 3));
  body_ = register_module("body", body);
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

GeneratorImpl::GeneratorImpl(const CodecConfig& cfg) {
  cfg.validate();
  torch::nn::Sequential body;
  const auto bottleneck = cfg.width_at(cfg.stages());
  body->push_back(conv(cfg.latent_channels, bottleneck, 3));
  body->push_back(ChannelNorm(bottleneck));
  body->push_back(lrelu(cfg.leaky_slope));
  for (std::int64_t b = 0; b < cfg.residual_blocks; ++b) {
    body->push_back(ResidualBlock(bottleneck, cfg.leaky_slope));
  }
  for (std::int64_t s = cfg.stages(); s >= 1; --s) {
    body->push_back(torch::nn::ConvTranspose2d(
        torch::nn::ConvTranspose2dOptions(cfg.width_at(s), cfg.width_at(s - 1), 3)
            .stride(2)
            .padding(1)
            .output_padding(1)));
    body->push_back(ChannelNorm(cfg.width_at(s - 1)));
    body->push_back(lrelu(cfg.leaky_slope));
  }
  body->push_back(conv(cfg.width_at(0), 3, 7));
  body->push_back(torch::nn::Sigmoid());
  body_ = register_module("body", body);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& latent) { return body_->forward(latent); }

CodecImpl::CodecImpl(const CodecConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  encoder_ = register_module("encoder", Encoder(cfg_));
  generator_ = register_module("generator", Generator(cfg_));
}

LatentLayout CodecImpl::layout_for(std::int64_t height, std::int64_t width) const {
  const auto d = cfg_.downsample_factor;
  LatentLayout layout;
  layout.image_height = height;
  layout.image_width = width;
  layout.padded_height = (height + d - 1) / d * d;
  layout.padded_width = (width + d - 1) / d * d;
  layout.grid = GridShape{layout.padded_height / d, layout.padded_width / d, cfg_.latent_channels};
  return layout;
}

Encoded CodecImpl::encode(const torch::Tensor& x) {
  auto batch = x.dim() == 3 ? x.unsqueeze(0) : x;
  if (batch.dim() != 4 || batch.size(1) != 3) {
    throw ShapeError("encode expects [3,H,W] or [N,3,H,W]");
  }
  const auto layout = layout_for(batch.size(2), batch.size(3));
  if (layout.padded()) {
    const auto pad_h = layout.padded_height - layout.image_height;
    const auto pad_w = layout.padded_width - layout.image_width;
    const bool can_reflect = pad_h < layout.image_height && pad_w < layout.image_width;
    if (can_reflect) {
      batch = F::pad(batch, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReflect));
    } else {
      batch = F::pad(batch, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReplicate));
    }
  }
  auto latent = encoder_->forward(batch);
  auto rows = latent.reshape({latent.size(0), -1});
  return Encoded{Codeword{power_normalize(rows), layout.grid}, layout};
}

torch::Tensor CodecImpl::generate(const torch::Tensor& s_hat, const LatentLayout& layout) {
  auto rows = s_hat.dim() == 1 ? s_hat.unsqueeze(0) : s_hat;
  if (rows.dim() != 2 || rows.size(1) != layout.grid.size()) {
    throw ShapeError("generate: received " + std::to_string(rows.size(-1)) +
                     " symbols, layout expects " + std::to_string(layout.grid.size()));
  }
  auto latent =
      rows.reshape({rows.size(0), layout.grid.channels, layout.grid.height, layout.grid.width});
  auto image = generator_->forward(latent);
  if (layout.padded()) {
    image = image.index({torch::indexing::Slice(), torch::indexing::Slice(),
                         torch::indexing::Slice(0, layout.image_height),
                         torch::indexing::Slice(0, layout.image_width)});
  }
  if (!is_training()) image = image.clamp(0.0, 1.0);
  return image;
}

torch::Tensor CodecImpl::reconstruct(const torch::Tensor& x) {
  auto enc = encode(x);
  auto out = generate(enc.codeword.values, enc.layout);
  return x.dim() == 3 ? out.squeeze(0) : out;
}

Codec build_codec(const CodecConfig& cfg, std::uint64_t seed) {
  return with_seed(seed, [&] { return Codec(cfg); });
}

std::string parameter_hash(const torch::nn::Module& module) {
  Sha256 hasher;
  auto visit = [&](const std::string& name, const torch::Tensor& t) {
    hasher.update(name);
    auto c = t.detach().contiguous().cpu();
    hasher.update(c.data_ptr(), static_cast<std::size_t>(c.numel() * c.element_size()));
  };
  for (const auto& item : module.named_parameters(/*recurse=*/true)) visit(item.key(), item.value());
  for (const auto& item : module.named_buffers(/*recurse=*/true)) visit(item.key(), item.value());
  return hasher.hex_digest();
}

}  // namespace gjscc
