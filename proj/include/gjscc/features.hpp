#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/script.h>
#include <torch/torch.h>

#include "gjscc/archive.hpp"

namespace gjscc {

/// Fixed multi-layer feature map used by the perceptual distances (LPIPS,
/// DISTS) and, through embed(), by FID. Parameters are frozen.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  /// images [N,3,H,W] in [0,1] -> one activation map per tap.
  virtual std::vector<torch::Tensor> taps(const torch::Tensor& images) = 0;

  /// Non-negative per-channel LPIPS weights, one [C] tensor per tap.
  virtual std::vector<torch::Tensor> lpips_weights() const = 0;

  /// DISTS weights (alpha = mean term, beta = structure term). Entry 0 covers
  /// the raw image, entry i the (i-1)-th tap. Weights sum to 1 overall.
  virtual std::vector<torch::Tensor> dists_alpha() const = 0;
  virtual std::vector<torch::Tensor> dists_beta() const = 0;

  /// Global descriptor [N,D]; defaults to spatially pooled last tap.
  virtual torch::Tensor embed(const torch::Tensor& images);

  virtual void to(torch::ScalarType dtype) = 0;
  virtual std::string name() const = 0;
  /// Smallest square input the topology accepts.
  virtual std::int64_t min_input_size() const { return 1; }
};

/// Per-layer widths of the AlexNet-topology backbone.
struct AlexNetConfig {
  std::vector<std::int64_t> widths{64, 192, 384, 256, 256};
};

/// AlexNet convolutional trunk (ReLU taps after each of the five convs) with
/// the LPIPS input scaling layer and per-tap linear weights.
class AlexNetFeatures : public FeatureExtractor {
 public:
  /// Deterministic fixed-random weights (offline fallback). The LPIPS weights
  /// are 1/(number of taps) per channel.
  static std::unique_ptr<AlexNetFeatures> random(std::uint64_t seed, AlexNetConfig cfg = {});

  /// Loads a weights file written in TensorArchive format:
  ///   conv{0..4}.weight/.bias, lin{0..4} ([C], non-negative),
  ///   optionally dists.alpha{0..5}/dists.beta{0..5}.
  /// meta.layers lists each array's shape; it is checked against the topology.
  static std::unique_ptr<AlexNetFeatures> from_file(const std::filesystem::path& path);

  /// Inverse of from_file.
  TensorArchive to_archive() const;

  std::vector<torch::Tensor> taps(const torch::Tensor& images) override;
  std::vector<torch::Tensor> lpips_weights() const override { return lin_; }
  std::vector<torch::Tensor> dists_alpha() const override { return alpha_; }
  std::vector<torch::Tensor> dists_beta() const override { return beta_; }
  void to(torch::ScalarType dtype) override;
  std::string name() const override { return name_; }
  std::int64_t min_input_size() const override { return 31; }

  const AlexNetConfig& config() const { return cfg_; }

 private:
  explicit AlexNetFeatures(AlexNetConfig cfg);
  void freeze();
  void set_uniform_dists_weights();

  AlexNetConfig cfg_;
  std::string name_;
  std::vector<torch::nn::Conv2d> convs_;
  std::vector<torch::Tensor> lin_;
  std::vector<torch::Tensor> alpha_;
  std::vector<torch::Tensor> beta_;
  torch::Tensor shift_;
  torch::Tensor scale_;
};

/// Wraps a TorchScript module. The module takes [N,3,H,W] in [0,1] and returns
/// either a tuple/list of tap maps or a single [N,D] tensor (embedding only).
/// LPIPS and DISTS weights are uniform unless supplied.
class TorchScriptFeatures : public FeatureExtractor {
 public:
  explicit TorchScriptFeatures(const std::filesystem::path& path);

  std::vector<torch::Tensor> taps(const torch::Tensor& images) override;
  torch::Tensor embed(const torch::Tensor& images) override;
  std::vector<torch::Tensor> lpips_weights() const override;
  std::vector<torch::Tensor> dists_alpha() const override;
  std::vector<torch::Tensor> dists_beta() const override;
  void to(torch::ScalarType dtype) override;
  std::string name() const override { return "torchscript:" + path_; }

 private:
  torch::IValue run(const torch::Tensor& images);

  std::string path_;
  torch::jit::Module module_;
  torch::ScalarType dtype_ = torch::kFloat32;
  std::vector<std::int64_t> channels_;
};

/// How to obtain a feature extractor: "alexnet-random" (with seed),
/// "alexnet-file" (weights archive) or "torchscript" (module path).
struct FeatureSpec {
  std::string kind = "alexnet-random";
  std::string path;
  std::uint64_t seed = 1234;
  AlexNetConfig alexnet;
};

std::unique_ptr<FeatureExtractor> make_feature_extractor(const FeatureSpec& spec);

}  // namespace gjscc
