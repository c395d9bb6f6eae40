#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "gjscc/rational.hpp"

namespace gjscc {

/// Spatial layout of a latent grid: height x width x channels.
struct GridShape {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;

  std::int64_t size() const { return height * width * channels; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// Power-normalized channel input. `values` is [batch, k]; each row has unit
/// mean-square power. Rows are the channel-major flattening of a
/// [channels, height, width] latent so `grid` recovers the spatial layout.
struct Codeword {
  torch::Tensor values;
  GridShape grid;

  std::int64_t batch() const { return values.size(0); }
  std::int64_t length() const { return values.size(1); }
  /// Reshapes the symbols back to [batch, channels, height, width].
  torch::Tensor as_grid() const;
};

enum class ChannelKind { Awgn };

struct ChannelConfig {
  ChannelKind kind = ChannelKind::Awgn;
  double snr_db = 10.0;
  std::uint64_t seed = 0;
};

/// Source size m = 3*H*W, channel uses k, and the exact ratio k/m.
struct RateSpec {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t k = 0;
  Rational cbr;

  std::int64_t source_dims() const { return 3 * height * width; }
};

/// s = sqrt(k) * raw / ||raw||, applied independently along the last dim.
/// Accepts [k] or [batch, k]. Throws DegenerateInputError on an all-zero row.
torch::Tensor power_normalize(const torch::Tensor& raw);

/// Wraps power_normalize and checks that the grid matches the row length.
Codeword make_codeword(const torch::Tensor& raw, const GridShape& grid);

/// Noise variance for unit signal power: 10^(-snr_db/10). +inf dB gives 0.
double snr_to_sigma2(double snr_db);

/// Adds i.i.d. N(0, sigma^2) noise drawn from a fresh stream seeded by cfg.seed.
torch::Tensor awgn_transmit(const Codeword& s, const ChannelConfig& cfg);

/// Same channel, drawing from a caller-owned stream. `sigma2` may be a scalar
/// tensor or one variance per batch row ([batch, 1]).
torch::Tensor awgn_transmit(const torch::Tensor& s, const torch::Tensor& sigma2,
                            torch::Generator& stream);
torch::Tensor awgn_transmit(const torch::Tensor& s, double snr_db, torch::Generator& stream);

/// Channel bandwidth ratio k / (3*H*W). Throws InvalidRateError when k is not
/// in (0, m].
RateSpec compute_cbr(std::int64_t height, std::int64_t width, std::int64_t k);

/// Creates a CPU generator seeded deterministically.
torch::Generator make_stream(std::uint64_t seed);

}  // namespace gjscc
