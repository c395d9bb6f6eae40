#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include <torch/torch.h>

namespace testing_support {

// Central differences on selected entries of `param`; returns the worst relative error.
inline double worst_relative_error(torch::Tensor param, const std::function<torch::Tensor()>& loss_fn,
                            std::int64_t samples, double eps = 1e-6) {
  if (param.grad().defined()) param.mutable_grad().zero_();
  loss_fn().backward();
  auto analytic = param.grad().clone().reshape({-1});
  auto flat = param.detach().view({-1});
  // Probe the entries with the largest analytic gradient plus a spread of others.
  auto order = std::get<1>(analytic.abs().sort(0, /*descending=*/true));
  const std::int64_t n = flat.size(0);
  samples = std::min(samples, n);
  const std::int64_t stride = std::max<std::int64_t>(1, n / (4 * samples));
  double worst = 0.0;
  for (std::int64_t s = 0; s < samples; ++s) {
    const auto idx = order[std::min(n - 1, s * stride)].item<std::int64_t>();
    const double orig = flat[idx].item<double>();
    double plus, minus;
    {
      torch::NoGradGuard ng;
      flat[idx] = orig + eps;
      plus = loss_fn().item<double>();
      flat[idx] = orig - eps;
      minus = loss_fn().item<double>();
      flat[idx] = orig;
    }
    const double numeric = (plus - minus) / (2 * eps);
    const double a = analytic[idx].item<double>();
    const double scale = std::max({std::abs(numeric), std::abs(a), 1e-8});
    worst = std::max(worst, std::abs(numeric - a) / scale);
  }
  return worst;
}

}  // namespace testing_support
