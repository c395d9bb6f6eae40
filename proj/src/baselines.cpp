#include "gjscc/baselines.hpp"

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <map>
#include <random>

#include "gjscc/archive.hpp"
#include "gjscc/data.hpp"
#include "gjscc/error.hpp"
#include "gjscc/log.hpp"

extern char** environ;

namespace gjscc {

namespace fs = std::filesystem;

double capacity_bits(std::int64_t k, double snr_db, ChannelModel model) {
  if (k < 1) throw ConfigError("capacity_bits: k must be >= 1, got " + std::to_string(k));
  if (std::isnan(snr_db)) throw ConfigError("capacity_bits: SNR is NaN");
  const double snr = std::pow(10.0, snr_db / 10.0);
  const double per_use = std::log2(1.0 + snr);
  return static_cast<double>(k) * (model == ChannelModel::Real ? 0.5 * per_use : per_use);
}

DigitalBudget DigitalBudget::make(std::int64_t k, double snr_db, ChannelModel model) {
  return DigitalBudget{k, snr_db, capacity_bits(k, snr_db, model), model};
}

BpgCodec BpgCodec::from_env() {
  BpgCodec codec;
  if (const char* enc = std::getenv("GJSCC_BPGENC"); enc && *enc) codec.encoder = enc;
  if (const char* dec = std::getenv("GJSCC_BPGDEC"); dec && *dec) codec.decoder = dec;
  return codec;
}

int run_process(const std::vector<std::string>& argv, const fs::path& log_file) {
  if (argv.empty()) throw ProcessError("run_process: empty command");
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  const std::string sink = log_file.empty() ? "/dev/null" : log_file.string();
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, sink.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  posix_spawn_file_actions_adddup2(&actions, STDOUT_FILENO, STDERR_FILENO);

  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) {
    throw ProcessError("cannot start '" + argv[0] + "': " + std::strerror(rc));
  }
  int status = 0;
  while (waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) throw ProcessError("waitpid failed for '" + argv[0] + "'");
  }
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    for (int attempt = 0; attempt < 16; ++attempt) {
      auto candidate = fs::temp_directory_path() /
                       ("gjscc-bpg-" + std::to_string(::getpid()) + "-" + std::to_string(rd()));
      if (fs::create_directory(candidate)) {
        path_ = candidate;
        return;
      }
    }
    throw ProcessError("cannot create a temporary directory");
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void check_exit(int status, const std::vector<std::string>& argv, const fs::path& log) {
  if (status == 0) return;
  std::string cmd;
  for (const auto& a : argv) cmd += (cmd.empty() ? "" : " ") + a;
  std::string detail;
  std::error_code ec;
  if (fs::exists(log, ec)) detail = read_file(log);
  throw ProcessError("'" + cmd + "' exited with status " + std::to_string(status) +
                     (detail.empty() ? "" : ": " + detail));
}

}  // namespace

torch::Tensor bpg_decode(const std::string& bitstream, const BpgCodec& codec) {
  TempDir tmp;
  const auto in = tmp.path() / "in.bpg";
  const auto out = tmp.path() / "out.png";
  const auto log = tmp.path() / "codec.log";
  write_file_atomic(in, bitstream);
  const std::vector<std::string> argv{codec.decoder, "-o", out.string(), in.string()};
  check_exit(run_process(argv, log), argv, log);
  return load_image(out);
}

BpgTransmission bpg_capacity_transmit(const torch::Tensor& image, const Rational& cbr, double snr_db,
                                      const BpgCodec& codec, ChannelModel model) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("bpg_capacity_transmit expects a [3,H,W] image");
  if (!(cbr.value() > 0.0) || cbr.value() > 1.0) throw InvalidRateError("CBR must lie in (0, 1], got " + cbr.str());
  const std::int64_t m = 3 * image.size(1) * image.size(2);
  const std::int64_t k = static_cast<std::int64_t>(
      (static_cast<__int128>(cbr.num()) * m) / cbr.den());
  if (k < 1) throw InvalidRateError("CBR " + cbr.str() + " leaves no channel uses for this image");
  const double budget = capacity_bits(k, snr_db, model);

  TempDir tmp;
  const auto source = tmp.path() / "source.png";
  const auto log = tmp.path() / "codec.log";
  save_image(image, source);

  std::map<int, std::string> streams;
  auto encode = [&](int q) -> const std::string& {
    if (auto it = streams.find(q); it != streams.end()) return it->second;
    const auto out = tmp.path() / ("q" + std::to_string(q) + ".bpg");
    const std::vector<std::string> argv{codec.encoder, "-q", std::to_string(q), "-o", out.string(),
                                        source.string()};
    check_exit(run_process(argv, log), argv, log);
    return streams.emplace(q, read_file(out)).first->second;
  };
  auto fits = [&](int q) { return 8.0 * static_cast<double>(encode(q).size()) <= budget; };

  if (!fits(codec.max_quality)) {
    throw BudgetInfeasibleError("coarsest quality " + std::to_string(codec.max_quality) + " needs " +
                                std::to_string(8 * encode(codec.max_quality).size()) + " bits, budget is " +
                                std::to_string(budget) + " bits (k=" + std::to_string(k) +
                                ", snr=" + std::to_string(snr_db) + " dB)");
  }
  // Smallest (best-quality) q whose stream fits; only tested candidates are returned.
  int lo = codec.min_quality;
  int hi = codec.max_quality;
  while (lo < hi) {
    const int mid = lo + (hi - lo) / 2;
    if (fits(mid)) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  BpgTransmission result;
  result.quality = hi;
  result.bitstream = encode(hi);
  result.achieved_bits = 8 * static_cast<std::int64_t>(result.bitstream.size());
  result.budget_bits = budget;
  result.k = k;
  result.achieved_cbr = Rational(k, m);
  if (static_cast<double>(result.achieved_bits) > budget) {
    throw BudgetInfeasibleError("internal: selected stream exceeds the budget");
  }
  result.reconstruction = bpg_decode(result.bitstream, codec);
  if (result.reconstruction.sizes() != image.sizes()) {
    throw ProcessError("decoder returned an image of a different size");
  }
  return result;
}

TrainConfig mse_jscc_config(const TrainConfig& base) {
  TrainConfig cfg = base;
  cfg.pretrain_weights = LossWeights{0.0, 1.0, 0.0};
  cfg.adversarial_weights = LossWeights{0.0, 1.0, 0.0};
  cfg.phase2_iters = 0;
  cfg.phase3_iters = 0;
  return cfg;
}

nlohmann::json LdpcSchemeMeta::to_json() const {
  return {{"scheme", "bpg+ldpc"},
          {"block_length", block_length},
          {"info_bits", info_bits},
          {"code_rate", code_rate.str()},
          {"modulation", modulation},
          {"bits_per_symbol", bits_per_symbol}};
}

}  // namespace gjscc
