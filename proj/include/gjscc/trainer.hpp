#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "gjscc/adversary.hpp"
#include "gjscc/archive.hpp"
#include "gjscc/codec.hpp"
#include "gjscc/data.hpp"
#include "gjscc/features.hpp"
#include "gjscc/losses.hpp"
#include "gjscc/optim.hpp"

namespace gjscc {

/// Training progress marker. Phases only move forward.
enum class Phase { Untrained = 0, Pretrained = 1, DiscWarmed = 2, Adversarial = 3 };

std::string to_string(Phase phase);
Phase phase_from_string(const std::string& text);

struct TrainConfig {
  std::int64_t phase1_iters = 100000;
  std::int64_t phase2_iters = 10000;
  std::int64_t phase3_iters = 100000;
  std::int64_t batch_size = 12;
  std::int64_t crop_pixels = 256;
  AdamOptions adam{1e-4, 0.9, 0.999, 1e-8};
  std::vector<double> snr_train_set{1, 4, 7, 10, 13};
  /// Draw one SNR per image instead of one per batch.
  bool snr_per_image = false;
  LossWeights pretrain_weights{1.0, 1e-5, 0.0};
  LossWeights adversarial_weights{1.0, 1e-5, 1e-3};
  /// 0 disables periodic checkpoints.
  std::int64_t checkpoint_every = 5000;
  /// Early stop of the adversarial phase on a validation-LPIPS plateau; 0 disables.
  std::int64_t validate_every = 0;
  std::int64_t early_stop_patience = 0;
  double validation_snr_db = 10.0;
  std::uint64_t seed = 0;

  CodecConfig codec;
  DiscriminatorConfig discriminator;
  FeatureSpec features;

  /// Copy with the discriminator's conditioning fields tied to the codec.
  TrainConfig resolved() const;
  void validate() const;
  /// SHA-256 of the canonical JSON form.
  std::string hash() const;

  friend void to_json(nlohmann::json& j, const TrainConfig& c);
  friend void from_json(const nlohmann::json& j, TrainConfig& c);
};

TrainConfig load_train_config(const std::filesystem::path& path);

/// Uniform draw from cfg.snr_train_set. Throws ConfigError if it is empty.
double sample_train_snr(const TrainConfig& cfg, std::mt19937_64& rng);

struct CheckpointMeta {
  Phase phase = Phase::Untrained;
  std::int64_t iteration = 0;
  std::array<std::int64_t, 3> phase_progress{0, 0, 0};
  Rational cbr;
  std::string config_hash;
  nlohmann::json metrics = nlohmann::json::object();
};

/// One optimizer step. `step` is "gen" or "disc".
struct StepRecord {
  std::int64_t iteration = 0;
  Phase phase = Phase::Untrained;
  std::string step;
  std::vector<double> snr_db;
  std::optional<LossReport> generator;
  std::optional<double> discriminator;

  nlohmann::json to_json() const;
};

/// Three-phase schedule: (1) encoder+generator pretraining without the
/// adversarial term, (2) discriminator-only warm-up with the codec frozen,
/// (3) alternating discriminator / encoder+generator steps.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, std::shared_ptr<FeatureExtractor> features, BatchSource& data);

  /// Restores configuration, parameters, optimizer moments and random streams.
  static std::unique_ptr<Trainer> resume(const std::filesystem::path& checkpoint,
                                         std::shared_ptr<FeatureExtractor> features,
                                         BatchSource& data);

  void pretrain(std::int64_t iterations);
  void train_discriminator_only(std::int64_t iterations);
  void alternate_train(std::int64_t iterations);
  /// Runs whatever remains of the configured schedule.
  void run_schedule();

  TensorArchive checkpoint() const;
  void save_checkpoint(const std::filesystem::path& path) const;

  void set_checkpoint_dir(std::filesystem::path dir) { checkpoint_dir_ = std::move(dir); }
  /// Appends one JSON line per optimizer step.
  void set_log_path(std::filesystem::path path) { log_path_ = std::move(path); }
  void on_step(std::function<void(const StepRecord&)> callback) { callback_ = std::move(callback); }
  void set_validation(std::vector<torch::Tensor> images) { validation_ = std::move(images); }

  Phase phase() const { return phase_; }
  std::int64_t iteration() const { return iteration_; }
  const std::array<std::int64_t, 3>& phase_progress() const { return progress_; }
  CheckpointMeta meta() const;
  const TrainConfig& config() const { return cfg_; }
  Codec& codec() { return codec_; }
  Discriminator& discriminator() { return disc_; }
  FeatureExtractor& features() { return *features_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  void require_phase(std::initializer_list<Phase> allowed, const char* what) const;
  torch::Tensor draw_sigma2(std::int64_t batch, std::vector<double>& snrs);
  void emit(const StepRecord& record);
  void check_finite(double value, const char* what);
  void maybe_checkpoint();
  double validation_lpips();

  TrainConfig cfg_;
  std::shared_ptr<FeatureExtractor> features_;
  BatchSource& data_;
  Codec codec_{nullptr};
  Discriminator disc_{nullptr};
  std::unique_ptr<Adam> codec_opt_;
  std::unique_ptr<Adam> disc_opt_;
  std::mt19937_64 rng_;
  torch::Generator noise_;
  Phase phase_ = Phase::Untrained;
  std::int64_t iteration_ = 0;
  std::array<std::int64_t, 3> progress_{0, 0, 0};
  nlohmann::json last_metrics_ = nlohmann::json::object();
  std::optional<std::filesystem::path> checkpoint_dir_;
  std::optional<std::filesystem::path> log_path_;
  std::function<void(const StepRecord&)> callback_;
  std::vector<torch::Tensor> validation_;
};

/// A checkpoint opened for inference.
struct LoadedModel {
  TrainConfig config;
  CheckpointMeta meta;
  Codec codec{nullptr};
};

LoadedModel load_model(const std::filesystem::path& checkpoint);
CheckpointMeta read_checkpoint_meta(const TensorArchive& archive);

/// Copies a checkpoint without the discriminator and optimizer namespaces.
void export_deployment(const std::filesystem::path& checkpoint, const std::filesystem::path& out);

}  // namespace gjscc
