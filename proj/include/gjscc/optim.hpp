#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "gjscc/archive.hpp"

namespace gjscc {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction (same update rule as torch::optim::Adam, no weight
/// decay). State is keyed by parameter name so it can be checkpointed.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, torch::Tensor>> named_params, AdamOptions options);

  void zero_grad();
  void step();
  std::int64_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

  void save(TensorArchive& archive, const std::string& prefix) const;
  void load(const TensorArchive& archive, const std::string& prefix);

 private:
  struct Slot {
    std::string name;
    torch::Tensor param;
    torch::Tensor m;
    torch::Tensor v;
  };
  std::vector<Slot> slots_;
  AdamOptions options_;
  std::int64_t steps_ = 0;
};

std::vector<std::pair<std::string, torch::Tensor>> named_parameters_of(const torch::nn::Module& module);

}  // namespace gjscc
