#include "gjscc/optim.hpp"

#include <cmath>

namespace gjscc {

std::vector<std::pair<std::string, torch::Tensor>> named_parameters_of(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : module.named_parameters(true)) out.emplace_back(p.key(), p.value());
  return out;
}

Adam::Adam(std::vector<std::pair<std::string, torch::Tensor>> named_params, AdamOptions options)
    : options_(options) {
  for (auto& [name, p] : named_params) {
    slots_.push_back(Slot{name, p, torch::zeros_like(p), torch::zeros_like(p)});
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) {
    if (s.param.grad().defined()) {
      s.param.mutable_grad().detach_();
      s.param.mutable_grad().zero_();
    }
  }
}

void Adam::step() {
  torch::NoGradGuard no_grad;
  ++steps_;
  const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  const double step_size = options_.lr / bias1;
  const double bias2_sqrt = std::sqrt(bias2);
  for (auto& s : slots_) {
    if (!s.param.grad().defined()) continue;
    const auto& g = s.param.grad();
    s.m.mul_(options_.beta1).add_(g, 1.0 - options_.beta1);
    s.v.mul_(options_.beta2).addcmul_(g, g, 1.0 - options_.beta2);
    auto denom = (s.v.sqrt() / bias2_sqrt).add_(options_.eps);
    s.param.addcdiv_(s.m, denom, -step_size);
  }
}

void Adam::save(TensorArchive& archive, const std::string& prefix) const {
  archive.put(prefix + ".steps", torch::tensor({steps_}, torch::kInt64));
  for (const auto& s : slots_) {
    archive.put(prefix + ".m." + s.name, s.m);
    archive.put(prefix + ".v." + s.name, s.v);
  }
}

void Adam::load(const TensorArchive& archive, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  steps_ = archive.get(prefix + ".steps").item<std::int64_t>();
  for (auto& s : slots_) {
    s.m.copy_(archive.get(prefix + ".m." + s.name));
    s.v.copy_(archive.get(prefix + ".v." + s.name));
  }
}

}  // namespace gjscc
