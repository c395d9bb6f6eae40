#include <gtest/gtest.h>

#include <cmath>

#include "gjscc/error.hpp"
#include "gjscc/features.hpp"
#include "gjscc/metrics.hpp"
#include "oracle_values.hpp"
#include "test_support.hpp"

using namespace gjscc;
using testing_support::test_image;

TEST(Psnr, AnalyticCases) {
  auto x = torch::rand({3, 16, 16}, torch::kFloat64) * 0.5;
  EXPECT_EQ(psnr(x, x), 100.0);
  EXPECT_NEAR(psnr(x, x + 1.0 / 255.0), 20.0 * std::log10(255.0), 1e-9);
  auto y = x.clone();
  y.narrow(2, 0, 8).add_(0.5);
  EXPECT_NEAR(psnr(x, y), 10.0 * std::log10(1.0 / 0.125), 1e-9);
  EXPECT_THROW(psnr(x, y.narrow(1, 0, 8)), ShapeError);
}

TEST(Psnr, ConsistentWithMse) {
  auto x = torch::rand({3, 20, 20}, torch::kFloat64);
  auto y = torch::rand({3, 20, 20}, torch::kFloat64);
  const double mse = (x - y).pow(2).mean().item<double>();
  EXPECT_DOUBLE_EQ(psnr(x, y), -10.0 * std::log10(mse));
}

TEST(MsSsim, MatchesReferenceImplementation) {
  auto x = test_image(192, 192, 0.3);
  EXPECT_NEAR(ms_ssim(x, x), 1.0, 1e-12);
  EXPECT_NEAR(ms_ssim(x, 1 - x), oracle::kMsSsimInverted, 1e-6);
  EXPECT_LT(ms_ssim(x, 1 - x), 0.2);
  const double b3 = ms_ssim(x, testing_support::box_blur(x, 3));
  const double b7 = ms_ssim(x, testing_support::box_blur(x, 7));
  EXPECT_NEAR(b3, oracle::kMsSsimBlur3, 1e-6);
  EXPECT_NEAR(b7, oracle::kMsSsimBlur7, 1e-6);
  EXPECT_GT(b3, b7);
  EXPECT_NEAR(ms_ssim(x, testing_support::distort(x, 0.08)), oracle::kMsSsimDistorted, 1e-6);
}

TEST(MsSsim, SmallInputsUseFewerScales) {
  auto x = test_image(64, 64, 0.0);
  int levels = 0;
  const double v = ms_ssim(x, testing_support::distort(x, 0.05), &levels);
  EXPECT_EQ(levels, 3);
  EXPECT_GT(v, 0.0);
  EXPECT_LE(v, 1.0);
  EXPECT_THROW(ms_ssim(torch::rand({3, 8, 8}), torch::rand({3, 8, 8})), ShapeError);
}

TEST(Dists, MatchesIndependentOracle) {
  auto fe = AlexNetFeatures::from_file(testing_support::source_dir() / "data" / "oracle_alexnet.gjc");
  fe->to(torch::kFloat64);
  auto x = test_image(64, 64, 0.0);
  EXPECT_NEAR(dists_metric(x, testing_support::distort(x, 0.08), *fe), oracle::kDistsMild, 1e-6);
  EXPECT_NEAR(dists_metric(x, testing_support::distort(x, 0.25), *fe), oracle::kDistsHeavy, 1e-6);
  EXPECT_NEAR(dists_metric(x, x, *fe), 0.0, 1e-9);
}

TEST(PerceptualMetrics, MonotoneInNoiseAndDeterministic) {
  auto fe = AlexNetFeatures::random(5);
  auto x = test_image(64, 64, 1.0).to(torch::kFloat32);
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(9);
  auto noise = torch::randn(x.sizes(), gen);
  auto mild = (x + 0.02 * noise).clamp(0, 1);
  auto heavy = (x + 0.2 * noise).clamp(0, 1);
  EXPECT_GT(lpips_metric(x, heavy, *fe), lpips_metric(x, mild, *fe));
  EXPECT_GT(dists_metric(x, heavy, *fe), dists_metric(x, mild, *fe));
  EXPECT_EQ(lpips_metric(x, mild, *fe), lpips_metric(x, mild, *fe));
  EXPECT_NEAR(lpips_metric(x, x, *fe), 0.0, 1e-9);
  EXPECT_THROW(dists_metric(x, heavy.narrow(1, 0, 40), *fe), ShapeError);
}

TEST(Fid, MatchesScipyOracle) {
  auto a = testing_support::fid_features(400, 6, 0.0);
  auto b = 1.4 * testing_support::fid_features(300, 6, 0.5) + 0.25;
  EXPECT_NEAR(fid(a, b, 0.0), oracle::kFidSynthetic, 1e-6 * oracle::kFidSynthetic);
}

TEST(Fid, IdentitySymmetryAndErrors) {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(1);
  auto a = torch::randn({500, 8}, gen, torch::kFloat64);
  auto b = torch::randn({400, 8}, gen, torch::kFloat64) * 1.3 + 0.2;
  EXPECT_NEAR(fid(a, a), 0.0, 1e-6);
  EXPECT_NEAR(fid(a, b), fid(b, a), 1e-8);
  EXPECT_THROW(fid(a, torch::randn({10, 7}, torch::kFloat64)), ShapeError);
  EXPECT_THROW(fid(a.narrow(0, 0, 1), b), ShapeError);
  auto small = a + 0.01 * torch::randn(a.sizes(), gen, torch::kFloat64);
  auto large = a + 1.0 * torch::randn(a.sizes(), gen, torch::kFloat64);
  EXPECT_LT(fid(a, small), fid(a, large));
}

TEST(Fid, OneDimensionalMeanShift) {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(2);
  auto a = torch::randn({100000, 1}, gen, torch::kFloat64);
  auto b = torch::randn({100000, 1}, gen, torch::kFloat64) + 1.0;
  EXPECT_NEAR(fid(a, b), 1.0, 0.05);
}

TEST(Curves, CsvRoundTrip) {
  testing_support::TempDir dir("curve");
  CurvePoint p;
  p.scheme = "x";
  p.x = 4;
  p.snr_db = 4;
  p.seed = 3;
  p.y.psnr_db = 30.5;
  p.y.ms_ssim = 0.9;
  p.y.n_images = 2;
  write_curve(dir / "c.csv", {p}, nlohmann::json{{"k", 1}});
  auto back = read_curve_csv(dir / "c.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].scheme, "x");
  EXPECT_EQ(*back[0].y.psnr_db, 30.5);
  EXPECT_FALSE(back[0].y.fid.has_value());
  EXPECT_EQ(curve_to_csv(back), curve_to_csv({p}));
  EXPECT_TRUE(std::filesystem::exists(dir / "c.csv.json"));
}

TEST(Sweeps, SnrSweepIsSortedAndDeterministic) {
  auto cfg = testing_support::tiny_config();
  auto codec = build_codec(cfg.codec, 0);
  auto fe = AlexNetFeatures::random(1, cfg.features.alexnet);
  std::vector<torch::Tensor> images{test_image(64, 96, 0.1).to(torch::kFloat32),
                                    test_image(64, 64, 0.7).to(torch::kFloat32)};
  SweepOptions opt;
  opt.fid_patch = 32;
  auto a = sweep_snr(codec, images, {13, 1, 7, 4, 10}, *fe, opt);
  ASSERT_EQ(a.size(), 5u);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LT(a[i - 1].x, a[i].x);
  EXPECT_EQ(a[0].y.n_images, 2);
  EXPECT_TRUE(a[0].y.fid.has_value());
  EXPECT_EQ(*a[0].cbr, cfg.codec.cbr());
  auto b = sweep_snr(codec, images, {1, 4, 7, 10, 13}, *fe, opt);
  EXPECT_EQ(curve_to_csv(a), curve_to_csv(b));
}

TEST(Sweeps, NoiselessPointMatchesDirectPipeline) {
  auto cfg = testing_support::tiny_config();
  auto codec = build_codec(cfg.codec, 0);
  auto fe = AlexNetFeatures::random(1, cfg.features.alexnet);
  auto x = test_image(64, 64, 0.2).to(torch::kFloat32);
  auto points = sweep_snr(codec, {x}, {std::numeric_limits<double>::infinity()}, *fe);
  torch::NoGradGuard ng;
  codec->eval();
  auto enc = codec->encode(x);
  EXPECT_DOUBLE_EQ(*points[0].y.psnr_db, psnr(x, codec->generate(enc.codeword.values, enc.layout).squeeze(0)));
}

TEST(Sweeps, RealizedRateIncludesPadding) {
  auto cfg = testing_support::tiny_config();
  auto codec = build_codec(cfg.codec, 0);
  auto fe = AlexNetFeatures::random(1, cfg.features.alexnet);
  auto points = sweep_snr(codec, {torch::rand({3, 62, 62})}, {10}, *fe);
  EXPECT_EQ(*points[0].cbr, Rational(16 * 16 * 4, 3 * 62 * 62));
  EXPECT_THROW(sweep_snr(codec, {}, {10}, *fe), IngestError);
}
