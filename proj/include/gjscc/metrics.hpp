#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "gjscc/codec.hpp"
#include "gjscc/features.hpp"
#include "gjscc/rational.hpp"

namespace gjscc {

constexpr double kPsnrCap = 100.0;

/// 10*log10(1/MSE) on the [0,1] scale; identical inputs return `cap`.
double psnr(const torch::Tensor& x, const torch::Tensor& x_hat, double cap = kPsnrCap);

/// 5-scale MS-SSIM (11-tap Gaussian window, sigma 1.5, data range 1) averaged
/// over batch and channels. Inputs too small for five scales use fewer scales
/// with renormalized exponents and a logged warning.
double ms_ssim(const torch::Tensor& x, const torch::Tensor& x_hat, int* levels_used = nullptr);

/// 1 - weighted structure/texture similarity over the image and every tap.
/// Returns one value per image.
torch::Tensor dists_per_image(const torch::Tensor& x, const torch::Tensor& x_hat, FeatureExtractor& fe);
double dists_metric(const torch::Tensor& x, const torch::Tensor& x_hat, FeatureExtractor& fe);
double lpips_metric(const torch::Tensor& x, const torch::Tensor& x_hat, FeatureExtractor& fe);

/// Frechet distance between Gaussian fits of two feature sets [N,D].
/// Throws ShapeError on a dimension mismatch or fewer than two samples and
/// NumericalError when the matrix square root fails.
double fid(const torch::Tensor& features_a, const torch::Tensor& features_b, double jitter = 1e-6);

/// Mean over images (FID over the pooled patch sets). Absent values are
/// written as empty CSV fields.
struct MetricReport {
  std::optional<double> psnr_db;
  std::optional<double> ms_ssim;
  std::optional<double> lpips;
  std::optional<double> dists;
  std::optional<double> fid;
  std::int64_t n_images = 0;
};

enum class CurveAxis { SnrDb, Cbr };

struct CurvePoint {
  std::string scheme;
  CurveAxis axis = CurveAxis::SnrDb;
  double x = 0.0;
  /// Realized rate of the transmitted images (after any padding).
  std::optional<Rational> cbr;
  double snr_db = 0.0;
  MetricReport y;
  std::uint64_t seed = 0;
};

struct SweepOptions {
  std::string scheme = "gjscc";
  std::uint64_t seed = 0;
  /// Tile size for the FID patch sets; 0 disables FID.
  std::int64_t fid_patch = 256;
  double psnr_cap = kPsnrCap;
};

/// Per-image full-reference metrics for one reconstruction.
MetricReport evaluate_pair(const torch::Tensor& x, const torch::Tensor& x_hat, FeatureExtractor& fe,
                           double psnr_cap = kPsnrCap);

/// FID between the tiled patches of two image lists; nullopt when either side
/// yields fewer than two patches.
std::optional<double> patch_fid(const std::vector<torch::Tensor>& reference,
                                const std::vector<torch::Tensor>& distorted, FeatureExtractor& fe,
                                std::int64_t patch);

/// Sends every image through encode -> AWGN -> generate at each SNR. Noise for
/// point i comes from a stream seeded by (seed, i). +inf means noiseless.
std::vector<CurvePoint> sweep_snr(Codec& codec, const std::vector<torch::Tensor>& images,
                                  std::vector<double> snr_list, FeatureExtractor& fe,
                                  const SweepOptions& options = {});

/// Checkpoint-level variant; `expected_cbr`, when given, must match the checkpoint.
std::vector<CurvePoint> sweep_snr(const std::filesystem::path& checkpoint,
                                  const std::vector<torch::Tensor>& images, std::vector<double> snr_list,
                                  FeatureExtractor& fe, const SweepOptions& options = {},
                                  std::optional<Rational> expected_cbr = std::nullopt);

/// One point per checkpoint at a fixed SNR, sorted by realized CBR.
std::vector<CurvePoint> sweep_cbr(const std::vector<std::filesystem::path>& checkpoints,
                                  const std::vector<torch::Tensor>& images, FeatureExtractor& fe,
                                  double snr_db = 10.0, const SweepOptions& options = {});

std::string curve_csv_header();
std::string curve_to_csv(const std::vector<CurvePoint>& points);
/// Writes `path` and a `<path>.json` sidecar holding `config` and the points.
void write_curve(const std::filesystem::path& path, const std::vector<CurvePoint>& points,
                 const nlohmann::json& config);
/// Parses a curve CSV (including externally produced baseline curves).
std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path);

nlohmann::json to_json(const CurvePoint& point);

}  // namespace gjscc
