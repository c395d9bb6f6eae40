#include <gtest/gtest.h>

#include <cmath>

#include "gjscc/adversary.hpp"
#include "gjscc/codec.hpp"
#include "gjscc/error.hpp"
#include "gjscc/features.hpp"
#include "gjscc/losses.hpp"
#include "oracle_values.hpp"
#include "gradcheck.hpp"
#include "test_support.hpp"

using namespace gjscc;
using testing_support::test_image;
using testing_support::worst_relative_error;

namespace {

std::unique_ptr<AlexNetFeatures> oracle_features() {
  auto fe = AlexNetFeatures::from_file(testing_support::source_dir() / "data" / "oracle_alexnet.gjc");
  fe->to(torch::kFloat64);
  return fe;
}

}  // namespace

TEST(Losses, UniformDiscriminatorOutput) {
  auto half = torch::full({2, 1, 4, 4}, 0.5, torch::kFloat64);
  EXPECT_NEAR(adversarial_generator_term(half).item<double>(), std::log(2.0), 1e-9);
  EXPECT_NEAR(discriminator_loss(half, half).item<double>(), 2 * std::log(2.0), 1e-9);
}

TEST(Losses, LogGuardKeepsLossesFinite) {
  auto zeros = torch::zeros({1, 1, 2, 2}, torch::kFloat64);
  auto ones = torch::ones({1, 1, 2, 2}, torch::kFloat64);
  EXPECT_NEAR(adversarial_generator_term(zeros).item<double>(), -std::log(kLogEpsilon), 1e-9);
  EXPECT_TRUE(std::isfinite(discriminator_loss(zeros, ones).item<double>()));
  EXPECT_NEAR(discriminator_loss(ones, zeros).item<double>(), 0.0, 1e-12);
}

TEST(Losses, WeightsValidate) {
  EXPECT_NO_THROW((LossWeights{1, 1e-5, 1e-3}.validate()));
  EXPECT_THROW((LossWeights{-1, 0, 0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{1, std::nan(""), 0}.validate()), ConfigError);
}

TEST(Lpips, MatchesIndependentOracle) {
  auto fe = oracle_features();
  auto x = test_image(64, 64, 0.0).unsqueeze(0);
  auto mild = testing_support::distort(x[0], 0.08).unsqueeze(0);
  auto heavy = testing_support::distort(x[0], 0.25).unsqueeze(0);
  EXPECT_NEAR(lpips_distance(x, mild, *fe).item<double>(), oracle::kLpipsMild, 1e-6 * oracle::kLpipsMild);
  EXPECT_NEAR(lpips_distance(x, heavy, *fe).item<double>(), oracle::kLpipsHeavy, 1e-6 * oracle::kLpipsHeavy);
}

TEST(Lpips, IdentityAndSymmetry) {
  auto fe = AlexNetFeatures::random(3);
  auto x = torch::rand({2, 3, 48, 48});
  auto y = torch::rand({2, 3, 48, 48});
  EXPECT_NEAR(lpips_distance(x, x, *fe).item<double>(), 0.0, 1e-9);
  EXPECT_NEAR(lpips_distance(x, y, *fe).item<double>(), lpips_distance(y, x, *fe).item<double>(), 1e-6);
  EXPECT_EQ(lpips_per_image(x, y, *fe).sizes(), (std::vector<std::int64_t>{2}));
  EXPECT_THROW(lpips_distance(x, y.narrow(3, 0, 40), *fe), ShapeError);
  EXPECT_THROW(lpips_distance(torch::rand({1, 3, 16, 16}), torch::rand({1, 3, 16, 16}), *fe), ShapeError);
}

TEST(GeneratorLoss, ReportMatchesWeightedSum) {
  auto fe = AlexNetFeatures::random(3);
  auto x = torch::rand({2, 3, 32, 32});
  auto y = torch::rand({2, 3, 32, 32});
  auto d = torch::full({2, 1, 2, 2}, 0.25);
  LossWeights w{1.0, 1e-5, 1e-3};
  auto loss = generator_loss(d, x, y, w, *fe);
  auto r = loss.report();
  EXPECT_NEAR(r.adversarial, -std::log(0.25), 1e-6);
  EXPECT_NEAR(r.total, r.perceptual + 1e-5 * r.mse + 1e-3 * r.adversarial, 1e-9);
  EXPECT_NEAR(loss.total.item<double>(), r.total, 1e-5);
  // Without a discriminator output the adversarial weight must be zero.
  EXPECT_NO_THROW(generator_loss(std::nullopt, x, y, LossWeights{1, 1, 0}, *fe));
  EXPECT_THROW(generator_loss(std::nullopt, x, y, w, *fe), ConfigError);
}

TEST(Adversary, OutputGridAndRange) {
  torch::NoGradGuard no_grad;
  auto disc = build_discriminator(DiscriminatorConfig{}, 0);
  auto codec = build_codec(CodecConfig{}, 0);
  auto x = torch::rand({1, 3, 64, 96});
  auto enc = codec->encode(x);
  auto out = discriminate(disc, x, enc.codeword);
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{1, 1, 4, 6}));
  EXPECT_GT(out.min().item<float>(), 0.0f);
  EXPECT_LT(out.max().item<float>(), 1.0f);
  EXPECT_THROW(disc->forward(x, torch::rand({1, 16, 3, 6})), ShapeError);
}

TEST(Adversary, ConfigValidation) {
  DiscriminatorConfig cfg;
  cfg.channel_widths = {64, 128, 256};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.patch_pixels = 8;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(SpectralNorm, TopSingularValueIsOne) {
  SpectralNormConv2d conv(torch::nn::Conv2dOptions(6, 10, 4).stride(2).padding(1), 1);
  conv->refine(200);
  conv->eval();
  auto w = conv->normalized_weight().detach().reshape({10, -1});
  auto sv = torch::linalg_svdvals(w.to(torch::kFloat64));
  EXPECT_NEAR(sv[0].item<double>(), 1.0, 1e-4);
}

TEST(SpectralNorm, EstimateAdvancesOnlyInTraining) {
  auto disc = build_discriminator(testing_support::tiny_config().discriminator, 1);
  auto x = torch::rand({1, 3, 16, 16});
  auto c = torch::rand({1, 4, 4, 4});
  disc->eval();
  auto a = disc->forward(x, c);
  auto b = disc->forward(x, c);
  EXPECT_TRUE(torch::equal(a, b));
  const auto hash = parameter_hash(*disc);
  disc->train();
  disc->forward(x, c);
  EXPECT_NE(parameter_hash(*disc), hash);
}

TEST(GradientCheck, GeneratorObjective) {
  auto cfg = testing_support::tiny_config();
  auto codec = build_codec(cfg.codec, 11);
  auto disc = build_discriminator(cfg.discriminator, 12);
  auto fe = AlexNetFeatures::random(13, cfg.features.alexnet);
  codec->to(torch::kFloat64);
  disc->to(torch::kFloat64);
  disc->eval();
  fe->to(torch::kFloat64);
  auto x = torch::rand({2, 3, 32, 32}, torch::kFloat64);
  const LossWeights w{1.0, 0.5, 0.1};
  auto loss_fn = [&]() {
    auto enc = codec->encode(x);
    auto gen = make_stream(21);
    auto s_hat = awgn_transmit(enc.codeword.values, 7.0, gen);
    auto x_hat = codec->generate(s_hat, enc.layout);
    return generator_loss(discriminate(disc, x_hat, enc.codeword), x, x_hat, w, *fe).total;
  };
  auto params = codec->named_parameters();
  for (std::size_t i : {std::size_t{0}, params.size() / 2, params.size() - 1}) {
    EXPECT_LE(worst_relative_error(params[i].value(), loss_fn, 6), 1e-3) << params[i].key();
  }
}

TEST(GradientCheck, DiscriminatorObjective) {
  auto cfg = testing_support::tiny_config();
  auto codec = build_codec(cfg.codec, 11);
  auto disc = build_discriminator(cfg.discriminator, 12);
  codec->to(torch::kFloat64);
  disc->to(torch::kFloat64);
  disc->eval();
  auto x = torch::rand({2, 3, 32, 32}, torch::kFloat64);
  Encoded enc;
  torch::Tensor x_hat;
  {
    torch::NoGradGuard ng;
    enc = codec->encode(x);
    x_hat = codec->generate(enc.codeword.values, enc.layout);
  }
  auto loss_fn = [&]() {
    return discriminator_loss(discriminate(disc, x, enc.codeword), discriminate(disc, x_hat, enc.codeword));
  };
  for (auto& p : disc->parameters()) {
    EXPECT_LE(worst_relative_error(p, loss_fn, 4), 1e-3);
  }
}
