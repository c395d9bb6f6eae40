#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "gjscc/rational.hpp"
#include "gjscc/trainer.hpp"

namespace gjscc {

enum class ChannelModel { Real, Complex };

/// k channel uses at the Shannon capacity: k * 1/2 * log2(1 + snr) for real
/// symbols, k * log2(1 + snr) for complex ones. Throws ConfigError if k < 1.
double capacity_bits(std::int64_t k, double snr_db, ChannelModel model = ChannelModel::Real);

struct DigitalBudget {
  std::int64_t k = 0;
  double snr_db = 0.0;
  double bits = 0.0;
  ChannelModel model = ChannelModel::Real;

  static DigitalBudget make(std::int64_t k, double snr_db, ChannelModel model = ChannelModel::Real);
};

/// External still-image codec driven through files:
///   <encoder> -q <Q> -o <out.bpg> <in.png>
///   <decoder> -o <out.png> <in.bpg>
/// Lower Q means higher quality.
struct BpgCodec {
  std::string encoder = "bpgenc";
  std::string decoder = "bpgdec";
  int min_quality = 0;
  int max_quality = 51;

  /// Honours GJSCC_BPGENC / GJSCC_BPGDEC when set.
  static BpgCodec from_env();
};

struct BpgTransmission {
  torch::Tensor reconstruction;
  std::string bitstream;
  /// Container size including headers.
  std::int64_t achieved_bits = 0;
  double budget_bits = 0.0;
  std::int64_t k = 0;
  Rational achieved_cbr;
  int quality = 0;
};

/// Compresses at the best quality whose bitstream fits capacity_bits(k, snr)
/// with k = floor(cbr * 3HW) and decodes it (error-free channel). Throws
/// BudgetInfeasibleError when even the coarsest quality is over budget and
/// ProcessError when the codec binaries fail.
BpgTransmission bpg_capacity_transmit(const torch::Tensor& image, const Rational& cbr, double snr_db,
                                      const BpgCodec& codec = BpgCodec::from_env(),
                                      ChannelModel model = ChannelModel::Real);

/// Decodes a bitstream with the codec's decoder.
torch::Tensor bpg_decode(const std::string& bitstream, const BpgCodec& codec = BpgCodec::from_env());

/// The pure-MSE deep JSCC comparator: same architecture and rate as `base`,
/// beta_p = beta_g = 0, beta_m = 1, no adversarial phases.
TrainConfig mse_jscc_config(const TrainConfig& base = {});

/// Description of the BPG + LDPC + QAM scheme, kept so externally simulated
/// curves can be labelled and ingested.
struct LdpcSchemeMeta {
  std::int64_t block_length = 6144;
  std::int64_t info_bits = 4096;
  Rational code_rate{2, 3};
  std::string modulation = "16-QAM";
  std::int64_t bits_per_symbol = 4;

  nlohmann::json to_json() const;
};

/// Runs argv[0] with the given arguments (PATH lookup) and waits for it.
/// Returns the exit status; throws ProcessError if the process cannot start.
int run_process(const std::vector<std::string>& argv, const std::filesystem::path& log_file = {});

}  // namespace gjscc
