#include "gjscc/channel.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <limits>
#include <string>

#include "gjscc/error.hpp"

namespace gjscc {

Rational Rational::parse(const std::string& text) {
  try {
    const auto slash = text.find('/');
    if (slash == std::string::npos) return Rational(std::stoll(text), 1);
    return Rational(std::stoll(text.substr(0, slash)), std::stoll(text.substr(slash + 1)));
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse ratio '" + text + "'");
  }
}

torch::Tensor Codeword::as_grid() const {
  return values.reshape({values.size(0), grid.channels, grid.height, grid.width});
}

torch::Tensor power_normalize(const torch::Tensor& raw) {
  TORCH_CHECK(raw.dim() == 1 || raw.dim() == 2, "power_normalize expects [k] or [batch, k]");
  const auto k = raw.size(-1);
  if (k == 0) throw DegenerateInputError("power_normalize: empty codeword");
  auto norm = raw.norm(2, /*dim=*/-1, /*keepdim=*/true);
  if ((norm == 0).any().item<bool>()) {
    throw DegenerateInputError("power_normalize: all-zero input, normalization undefined");
  }
  return raw * (std::sqrt(static_cast<double>(k)) / norm);
}

Codeword make_codeword(const torch::Tensor& raw, const GridShape& grid) {
  auto rows = raw.dim() == 1 ? raw.unsqueeze(0) : raw;
  if (rows.size(1) != grid.size()) {
    throw ShapeError("codeword length " + std::to_string(rows.size(1)) +
                     " does not match grid of size " + std::to_string(grid.size()));
  }
  return Codeword{power_normalize(rows), grid};
}

double snr_to_sigma2(double snr_db) {
  if (std::isinf(snr_db)) return snr_db > 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::pow(10.0, -snr_db / 10.0);
}

torch::Generator make_stream(std::uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

torch::Tensor awgn_transmit(const torch::Tensor& s, const torch::Tensor& sigma2,
                            torch::Generator& stream) {
  if (sigma2.numel() == 1 && sigma2.item<double>() == 0.0) return s;
  auto noise = torch::randn(s.sizes(), stream, s.options().requires_grad(false));
  return s + noise * sigma2.to(s.dtype()).sqrt();
}

torch::Tensor awgn_transmit(const torch::Tensor& s, double snr_db, torch::Generator& stream) {
  const double sigma2 = snr_to_sigma2(snr_db);
  if (sigma2 == 0.0) return s;
  auto noise = torch::randn(s.sizes(), stream, s.options().requires_grad(false));
  return s + noise * std::sqrt(sigma2);
}

torch::Tensor awgn_transmit(const Codeword& s, const ChannelConfig& cfg) {
  if (!std::isfinite(cfg.snr_db) && !(std::isinf(cfg.snr_db) && cfg.snr_db > 0)) {
    throw ConfigError("channel SNR must be finite (or +inf for a noiseless link)");
  }
  auto stream = make_stream(cfg.seed);
  return awgn_transmit(s.values, cfg.snr_db, stream);
}

RateSpec compute_cbr(std::int64_t height, std::int64_t width, std::int64_t k) {
  if (height <= 0 || width <= 0 || k <= 0) {
    throw InvalidRateError("compute_cbr: image dims and k must be positive");
  }
  const std::int64_t m = 3 * height * width;
  if (k > m) {
    throw InvalidRateError("compute_cbr: k=" + std::to_string(k) + " exceeds source dimension m=" +
                           std::to_string(m) + " (bandwidth expansion not supported)");
  }
  return RateSpec{height, width, k, Rational(k, m)};
}

}  // namespace gjscc
