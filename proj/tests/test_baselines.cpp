#include <gtest/gtest.h>

#include <cmath>

#include "gjscc/baselines.hpp"
#include "gjscc/error.hpp"
#include "gjscc/metrics.hpp"
#include "oracle_values.hpp"
#include "test_support.hpp"

using namespace gjscc;

namespace {

BpgCodec stand_in() {
  BpgCodec codec;
  codec.encoder = (testing_support::binary_dir() / "tools" / "quantenc").string();
  codec.decoder = (testing_support::binary_dir() / "tools" / "quantdec").string();
  return codec;
}

}  // namespace

TEST(Capacity, MatchesOracle) {
  EXPECT_NEAR(capacity_bits(24576, 10.0), oracle::kCapacity24576At10dB, 1e-6);
  EXPECT_NEAR(capacity_bits(24576, 10.0, ChannelModel::Complex), 2 * oracle::kCapacity24576At10dB, 1e-6);
}

TEST(Capacity, LinearInKAndMonotoneInSnr) {
  EXPECT_NEAR(capacity_bits(2000, 7.0), 2 * capacity_bits(1000, 7.0), 1e-9);
  double prev = 0;
  for (double snr = -5; snr <= 20; snr += 1) {
    const double c = capacity_bits(100, snr);
    EXPECT_GT(c, prev);
    prev = c;
  }
  EXPECT_NEAR(capacity_bits(1, 0.0), 0.5, 1e-12);
  EXPECT_THROW(capacity_bits(0, 10.0), ConfigError);
  EXPECT_THROW(capacity_bits(10, std::nan("")), ConfigError);
}

TEST(Capacity, DigitalBudget) {
  auto b = DigitalBudget::make(24576, 10.0);
  EXPECT_EQ(b.k, 24576);
  EXPECT_NEAR(b.bits, oracle::kCapacity24576At10dB, 1e-6);
}

TEST(Bpg, FitsBudgetAndRedecodesExactly) {
  const auto codec = stand_in();
  const auto img = synthesize_image(256, 256, 5);
  auto t = bpg_capacity_transmit(img, Rational(1, 48), 10.0, codec);
  EXPECT_EQ(t.k, 256 * 256 * 3 / 48);
  EXPECT_EQ(t.achieved_cbr, Rational(1, 48));
  EXPECT_LE(static_cast<double>(t.achieved_bits), t.budget_bits);
  EXPECT_EQ(t.achieved_bits, static_cast<std::int64_t>(t.bitstream.size()) * 8);
  EXPECT_NEAR(t.budget_bits, capacity_bits(t.k, 10.0), 1e-9);
  EXPECT_EQ(t.reconstruction.sizes(), img.sizes());
  EXPECT_TRUE(torch::equal(bpg_decode(t.bitstream, codec), t.reconstruction));
  EXPECT_GT(psnr(img, t.reconstruction), 10.0);
}

TEST(Bpg, HigherSnrNeverLowersQuality) {
  const auto codec = stand_in();
  const auto img = synthesize_image(256, 256, 6);
  auto low = bpg_capacity_transmit(img, Rational(1, 24), 4.0, codec);
  auto high = bpg_capacity_transmit(img, Rational(1, 24), 13.0, codec);
  EXPECT_LE(low.achieved_bits, low.budget_bits);
  EXPECT_LE(high.achieved_bits, high.budget_bits);
  EXPECT_GE(high.achieved_bits, low.achieved_bits);
}

TEST(Bpg, InfeasibleBudget) {
  const auto img = synthesize_image(256, 256, 7);
  EXPECT_THROW(bpg_capacity_transmit(img, Rational(1, 48), -10.0, stand_in()), BudgetInfeasibleError);
}

TEST(Bpg, MissingBinary) {
  BpgCodec codec;
  codec.encoder = "/nonexistent/bpgenc";
  codec.decoder = "/nonexistent/bpgdec";
  EXPECT_THROW(bpg_capacity_transmit(synthesize_image(64, 64, 1), Rational(1, 6), 10.0, codec), ProcessError);
  EXPECT_THROW(run_process({"/nonexistent/tool"}), ProcessError);
  EXPECT_EQ(run_process({"true"}), 0);
  EXPECT_NE(run_process({"false"}), 0);
}

TEST(MseJscc, ConfigKeepsArchitecture) {
  auto base = testing_support::tiny_config();
  auto cfg = mse_jscc_config(base);
  EXPECT_EQ(cfg.codec.cbr(), base.codec.cbr());
  EXPECT_EQ(cfg.pretrain_weights.beta_p, 0.0);
  EXPECT_EQ(cfg.pretrain_weights.beta_m, 1.0);
  EXPECT_EQ(cfg.pretrain_weights.beta_g, 0.0);
  EXPECT_EQ(cfg.phase2_iters, 0);
  EXPECT_EQ(cfg.phase3_iters, 0);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Ldpc, MetaJson) {
  auto j = LdpcSchemeMeta{}.to_json();
  EXPECT_EQ(j["block_length"], 6144);
  EXPECT_EQ(j["modulation"], "16-QAM");
}
