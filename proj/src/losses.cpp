#include "gjscc/losses.hpp"

#include <cmath>

#include "gjscc/error.hpp"

namespace gjscc {

namespace {

void check_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError(std::string(what) + ": dimension mismatch " + c10::str(a.sizes()) + " vs " +
                     c10::str(b.sizes()));
  }
}

torch::Tensor as_batch(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

torch::Tensor unit_normalize(const torch::Tensor& f) {
  return f / (f.pow(2).sum(1, /*keepdim=*/true).sqrt() + 1e-10);
}

}  // namespace

void LossWeights::validate() const {
  if (!(beta_p >= 0.0 && beta_m >= 0.0 && beta_g >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"beta_p", w.beta_p}, {"beta_m", w.beta_m}, {"beta_g", w.beta_g}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.beta_p = j.value("beta_p", w.beta_p);
  w.beta_m = j.value("beta_m", w.beta_m);
  w.beta_g = j.value("beta_g", w.beta_g);
  w.validate();
}

LossReport GeneratorLoss::report() const {
  LossReport r;
  r.adversarial = adversarial.item<double>();
  r.perceptual = perceptual.item<double>();
  r.mse = mse.item<double>();
  r.total = weights.beta_g * r.adversarial + weights.beta_p * r.perceptual + weights.beta_m * r.mse;
  return r;
}

torch::Tensor lpips_per_image(const torch::Tensor& x, const torch::Tensor& x_hat,
                              FeatureExtractor& features) {
  check_same(x, x_hat, "lpips");
  auto a = as_batch(x);
  auto b = as_batch(x_hat);
  const auto fa = features.taps(a);
  const auto fb = features.taps(b);
  const auto weights = features.lpips_weights();
  auto total = torch::zeros({a.size(0)}, a.options().requires_grad(false));
  for (std::size_t l = 0; l < fa.size(); ++l) {
    auto diff = (unit_normalize(fa[l]) - unit_normalize(fb[l])).pow(2);
    auto w = weights[l].to(diff.dtype()).view({1, -1, 1, 1});
    total = total + (diff * w).sum(1).mean({1, 2});
  }
  return total;
}

torch::Tensor lpips_distance(const torch::Tensor& x, const torch::Tensor& x_hat,
                             FeatureExtractor& features) {
  return lpips_per_image(x, x_hat, features).mean();
}

torch::Tensor mse_distortion(const torch::Tensor& x, const torch::Tensor& x_hat) {
  check_same(x, x_hat, "mse");
  return (x - x_hat).pow(2).mean();
}

torch::Tensor adversarial_generator_term(const PatchLogits& d_out) {
  return -torch::log(d_out.clamp_min(kLogEpsilon)).mean();
}

GeneratorLoss generator_loss(const std::optional<PatchLogits>& d_out, const torch::Tensor& x,
                             const torch::Tensor& x_hat, const LossWeights& w,
                             FeatureExtractor& features) {
  w.validate();
  check_same(x, x_hat, "generator_loss");
  if (w.beta_g > 0.0 && !d_out.has_value()) {
    throw ConfigError("generator_loss: beta_g > 0 needs a discriminator output");
  }
  GeneratorLoss out;
  out.weights = w;
  auto zero = torch::zeros({}, x_hat.options().requires_grad(false));

  out.mse = mse_distortion(x, x_hat);
  if (w.beta_p > 0.0) {
    out.perceptual = lpips_distance(x, x_hat, features);
  } else {
    torch::NoGradGuard no_grad;
    out.perceptual = lpips_distance(x, x_hat.detach(), features);
  }
  if (d_out.has_value()) {
    if (w.beta_g > 0.0) {
      out.adversarial = adversarial_generator_term(*d_out);
    } else {
      out.adversarial = adversarial_generator_term(d_out->detach());
    }
  } else {
    out.adversarial = zero;
  }

  out.total = zero;
  if (w.beta_g > 0.0) out.total = out.total + w.beta_g * out.adversarial;
  if (w.beta_p > 0.0) out.total = out.total + w.beta_p * out.perceptual;
  if (w.beta_m > 0.0) out.total = out.total + w.beta_m * out.mse;
  return out;
}

torch::Tensor discriminator_loss(const PatchLogits& d_real, const PatchLogits& d_fake) {
  auto real_term = -torch::log(d_real.clamp_min(kLogEpsilon)).mean();
  auto fake_term = -torch::log((1.0 - d_fake).clamp_min(kLogEpsilon)).mean();
  return real_term + fake_term;
}

}  // namespace gjscc
