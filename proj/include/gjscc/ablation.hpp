#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "gjscc/data.hpp"
#include "gjscc/features.hpp"
#include "gjscc/trainer.hpp"

namespace gjscc {

struct AblationCell {
  double beta_m = 0.0;
  double beta_g = 0.0;
  std::string label;
  TrainConfig config;
};

/// One config per (beta_m, beta_g); beta_p and everything else come from `base`.
std::vector<AblationCell> ablation_grid(const TrainConfig& base, const std::vector<double>& beta_m = {1e-3, 1e-4, 1e-5},
                                        const std::vector<double>& beta_g = {0.0, 1e-5, 1e-3, 1e-1});

struct AblationResult {
  std::string label;
  std::filesystem::path checkpoint;
  std::string parameter_hash;
  std::vector<std::filesystem::path> reconstructions;
};

/// Trains every cell from scratch into <out>/<label>/ and writes one
/// reconstruction per evaluation image at the validation SNR.
std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells, BatchSource& data,
                                         const std::vector<torch::Tensor>& eval_images,
                                         std::shared_ptr<FeatureExtractor> features,
                                         const std::filesystem::path& out_dir);

}  // namespace gjscc
