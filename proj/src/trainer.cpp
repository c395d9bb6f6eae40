#include "gjscc/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "gjscc/error.hpp"
#include "gjscc/hash.hpp"
#include "gjscc/log.hpp"

namespace gjscc {

namespace fs = std::filesystem;

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::Untrained: return "untrained";
    case Phase::Pretrained: return "pretrained";
    case Phase::DiscWarmed: return "disc_warmed";
    case Phase::Adversarial: return "adversarial";
  }
  return "?";
}

Phase phase_from_string(const std::string& text) {
  if (text == "untrained") return Phase::Untrained;
  if (text == "pretrained") return Phase::Pretrained;
  if (text == "disc_warmed") return Phase::DiscWarmed;
  if (text == "adversarial") return Phase::Adversarial;
  throw IngestError("unknown phase marker '" + text + "'");
}

TrainConfig TrainConfig::resolved() const {
  TrainConfig out = *this;
  out.discriminator.latent_channels = codec.latent_channels;
  out.discriminator.condition_upsample = codec.downsample_factor;
  return out;
}

void TrainConfig::validate() const {
  if (phase1_iters < 0 || phase2_iters < 0 || phase3_iters < 0) {
    throw ConfigError("phase iteration counts must be >= 0");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (crop_pixels < 1) throw ConfigError("crop_pixels must be >= 1");
  if (crop_pixels % codec.downsample_factor != 0) {
    throw ConfigError("crop_pixels must be a multiple of the codec downsample factor");
  }
  if (snr_train_set.empty()) throw ConfigError("snr_train_set is empty");
  for (double s : snr_train_set) {
    if (!std::isfinite(s)) throw ConfigError("training SNR values must be finite");
  }
  if (!(adam.lr > 0.0)) throw ConfigError("learn_rate must be positive");
  pretrain_weights.validate();
  adversarial_weights.validate();
  if (pretrain_weights.beta_p == 0.0 && pretrain_weights.beta_m == 0.0) {
    throw ConfigError("pretraining needs a positive perceptual or MSE weight");
  }
  codec.validate();
  resolved().discriminator.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"seed", c.seed},
      {"codec", c.codec},
      {"discriminator", c.discriminator},
      {"features",
       {{"kind", c.features.kind},
        {"path", c.features.path},
        {"seed", c.features.seed},
        {"alexnet_widths", c.features.alexnet.widths}}},
      {"train",
       {{"phase1_iters", c.phase1_iters},
        {"phase2_iters", c.phase2_iters},
        {"phase3_iters", c.phase3_iters},
        {"batch_size", c.batch_size},
        {"crop_pixels", c.crop_pixels},
        {"learn_rate", c.adam.lr},
        {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
        {"snr_train_set", c.snr_train_set},
        {"snr_per_image", c.snr_per_image},
        {"checkpoint_every", c.checkpoint_every},
        {"validate_every", c.validate_every},
        {"early_stop_patience", c.early_stop_patience},
        {"validation_snr_db", c.validation_snr_db}}},
      {"loss", {{"pretrain", c.pretrain_weights}, {"adversarial", c.adversarial_weights}}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.seed = j.value("seed", c.seed);
  if (j.contains("codec")) from_json(j.at("codec"), c.codec);
  if (j.contains("discriminator")) from_json(j.at("discriminator"), c.discriminator);
  if (j.contains("features")) {
    const auto& f = j.at("features");
    c.features.kind = f.value("kind", c.features.kind);
    c.features.path = f.value("path", c.features.path);
    c.features.seed = f.value("seed", c.features.seed);
    c.features.alexnet.widths = f.value("alexnet_widths", c.features.alexnet.widths);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.phase1_iters = t.value("phase1_iters", c.phase1_iters);
    c.phase2_iters = t.value("phase2_iters", c.phase2_iters);
    c.phase3_iters = t.value("phase3_iters", c.phase3_iters);
    c.batch_size = t.value("batch_size", c.batch_size);
    c.crop_pixels = t.value("crop_pixels", c.crop_pixels);
    c.adam.lr = t.value("learn_rate", c.adam.lr);
    if (t.contains("adam")) {
      c.adam.beta1 = t.at("adam").value("beta1", c.adam.beta1);
      c.adam.beta2 = t.at("adam").value("beta2", c.adam.beta2);
      c.adam.eps = t.at("adam").value("eps", c.adam.eps);
    }
    c.snr_train_set = t.value("snr_train_set", c.snr_train_set);
    c.snr_per_image = t.value("snr_per_image", c.snr_per_image);
    c.checkpoint_every = t.value("checkpoint_every", c.checkpoint_every);
    c.validate_every = t.value("validate_every", c.validate_every);
    c.early_stop_patience = t.value("early_stop_patience", c.early_stop_patience);
    c.validation_snr_db = t.value("validation_snr_db", c.validation_snr_db);
  }
  if (j.contains("loss")) {
    if (j.at("loss").contains("pretrain")) from_json(j.at("loss").at("pretrain"), c.pretrain_weights);
    if (j.at("loss").contains("adversarial")) {
      from_json(j.at("loss").at("adversarial"), c.adversarial_weights);
    }
  }
}

std::string TrainConfig::hash() const { return sha256_hex(nlohmann::json(*this).dump()); }

TrainConfig load_train_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  TrainConfig cfg = j.get<TrainConfig>();
  cfg.validate();
  return cfg;
}

double sample_train_snr(const TrainConfig& cfg, std::mt19937_64& rng) {
  if (cfg.snr_train_set.empty()) throw ConfigError("snr_train_set is empty");
  std::uniform_int_distribution<std::size_t> pick(0, cfg.snr_train_set.size() - 1);
  return cfg.snr_train_set[pick(rng)];
}

nlohmann::json StepRecord::to_json() const {
  nlohmann::json j{{"iteration", iteration}, {"phase", gjscc::to_string(phase)}, {"step", step},
                   {"snr_db", snr_db}};
  if (generator) {
    j["total"] = generator->total;
    j["adversarial"] = generator->adversarial;
    j["perceptual"] = generator->perceptual;
    j["mse"] = generator->mse;
  }
  if (discriminator) j["disc_loss"] = *discriminator;
  return j;
}

Trainer::Trainer(const TrainConfig& cfg, std::shared_ptr<FeatureExtractor> features, BatchSource& data)
    : cfg_(cfg.resolved()), features_(std::move(features)), data_(data),
      rng_(cfg.seed + 3), noise_(make_stream(cfg.seed + 2)) {
  cfg_.validate();
  codec_ = build_codec(cfg_.codec, cfg_.seed);
  disc_ = build_discriminator(cfg_.discriminator, cfg_.seed + 1);
  codec_opt_ = std::make_unique<Adam>(named_parameters_of(*codec_), cfg_.adam);
  disc_opt_ = std::make_unique<Adam>(named_parameters_of(*disc_), cfg_.adam);
}

void Trainer::require_phase(std::initializer_list<Phase> allowed, const char* what) const {
  for (auto p : allowed) {
    if (p == phase_) return;
  }
  throw PhaseError(std::string(what) + " cannot start from phase '" + to_string(phase_) + "'");
}

torch::Tensor Trainer::draw_sigma2(std::int64_t batch, std::vector<double>& snrs) {
  snrs.clear();
  if (!cfg_.snr_per_image) {
    snrs.push_back(sample_train_snr(cfg_, rng_));
    return torch::tensor(snr_to_sigma2(snrs.front()));
  }
  std::vector<double> sigma2;
  for (std::int64_t i = 0; i < batch; ++i) {
    snrs.push_back(sample_train_snr(cfg_, rng_));
    sigma2.push_back(snr_to_sigma2(snrs.back()));
  }
  return torch::tensor(sigma2, torch::kFloat64).view({batch, 1});
}

void Trainer::emit(const StepRecord& record) {
  if (record.generator) {
    last_metrics_["total"] = record.generator->total;
    last_metrics_["perceptual"] = record.generator->perceptual;
    last_metrics_["mse"] = record.generator->mse;
    last_metrics_["adversarial"] = record.generator->adversarial;
  }
  if (record.discriminator) last_metrics_["disc_loss"] = *record.discriminator;
  if (log_path_) {
    std::ofstream out(*log_path_, std::ios::app);
    out << record.to_json().dump() << '\n';
  }
  if (callback_) callback_(record);
}

void Trainer::check_finite(double value, const char* what) {
  if (std::isfinite(value)) return;
  std::ostringstream msg;
  msg << "non-finite " << what << " at iteration " << iteration_ << " (phase " << to_string(phase_) << ")";
  if (checkpoint_dir_) {
    auto archive = checkpoint();
    archive.meta()["abort"] = {{"reason", msg.str()}, {"iteration", iteration_}};
    const auto path = *checkpoint_dir_ / "abort-diagnostics.gjc";
    archive.save(path);
    msg << "; diagnostics checkpoint written to " << path.string();
  }
  throw NumericalError(msg.str());
}

void Trainer::maybe_checkpoint() {
  if (!checkpoint_dir_ || cfg_.checkpoint_every <= 0) return;
  if (iteration_ % cfg_.checkpoint_every == 0) save_checkpoint(*checkpoint_dir_ / "latest.gjc");
}

void Trainer::pretrain(std::int64_t iterations) {
  require_phase({Phase::Untrained, Phase::Pretrained}, "pretrain");
  codec_->train();
  for (std::int64_t i = 0; i < iterations; ++i) {
    StepRecord rec;
    auto x = data_.next_batch(cfg_.batch_size, cfg_.crop_pixels, rng_);
    auto sigma2 = draw_sigma2(x.size(0), rec.snr_db);
    auto enc = codec_->encode(x);
    auto s_hat = awgn_transmit(enc.codeword.values, sigma2, noise_);
    auto x_hat = codec_->generate(s_hat, enc.layout);
    auto loss = generator_loss(std::nullopt, x, x_hat, cfg_.pretrain_weights, *features_);
    const auto report = loss.report();
    check_finite(report.total, "pretraining loss");
    codec_opt_->zero_grad();
    loss.total.backward();
    codec_opt_->step();

    ++iteration_;
    ++progress_[0];
    phase_ = Phase::Pretrained;
    rec.iteration = iteration_;
    rec.phase = phase_;
    rec.step = "gen";
    rec.generator = report;
    emit(rec);
    maybe_checkpoint();
  }
  phase_ = Phase::Pretrained;
  if (checkpoint_dir_) save_checkpoint(*checkpoint_dir_ / "pretrained.gjc");
}

void Trainer::train_discriminator_only(std::int64_t iterations) {
  require_phase({Phase::Pretrained, Phase::DiscWarmed}, "discriminator warm-up");
  codec_->eval();
  disc_->train();
  for (std::int64_t i = 0; i < iterations; ++i) {
    StepRecord rec;
    auto x = data_.next_batch(cfg_.batch_size, cfg_.crop_pixels, rng_);
    auto sigma2 = draw_sigma2(x.size(0), rec.snr_db);
    Encoded enc;
    torch::Tensor x_hat;
    {
      torch::NoGradGuard no_grad;
      enc = codec_->encode(x);
      auto s_hat = awgn_transmit(enc.codeword.values, sigma2, noise_);
      x_hat = codec_->generate(s_hat, enc.layout);
    }
    auto d_real = discriminate(disc_, x, enc.codeword);
    auto d_fake = discriminate(disc_, x_hat, enc.codeword);
    auto loss = discriminator_loss(d_real, d_fake);
    const double value = loss.item<double>();
    check_finite(value, "discriminator loss");
    disc_opt_->zero_grad();
    loss.backward();
    disc_opt_->step();

    ++iteration_;
    ++progress_[1];
    phase_ = Phase::DiscWarmed;
    rec.iteration = iteration_;
    rec.phase = phase_;
    rec.step = "disc";
    rec.discriminator = value;
    emit(rec);
    maybe_checkpoint();
  }
  phase_ = Phase::DiscWarmed;
  codec_->train();
  if (checkpoint_dir_) save_checkpoint(*checkpoint_dir_ / "disc_warmed.gjc");
}

double Trainer::validation_lpips() {
  torch::NoGradGuard no_grad;
  codec_->eval();
  auto stream = make_stream(cfg_.seed + 17);
  double sum = 0.0;
  for (const auto& img : validation_) {
    auto enc = codec_->encode(img);
    auto s_hat = awgn_transmit(enc.codeword.values, cfg_.validation_snr_db, stream);
    auto x_hat = codec_->generate(s_hat, enc.layout);
    sum += lpips_distance(img.unsqueeze(0), x_hat, *features_).item<double>();
  }
  codec_->train();
  return validation_.empty() ? 0.0 : sum / static_cast<double>(validation_.size());
}

void Trainer::alternate_train(std::int64_t iterations) {
  require_phase({Phase::DiscWarmed, Phase::Adversarial}, "alternating training");
  codec_->train();
  disc_->train();
  const bool early_stop =
      cfg_.validate_every > 0 && cfg_.early_stop_patience > 0 && !validation_.empty();
  double best = std::numeric_limits<double>::infinity();
  std::int64_t stale = 0;
  for (std::int64_t i = 0; i < iterations; ++i) {
    std::vector<double> snrs;
    auto x = data_.next_batch(cfg_.batch_size, cfg_.crop_pixels, rng_);
    auto sigma2 = draw_sigma2(x.size(0), snrs);
    auto enc = codec_->encode(x);
    auto s_hat = awgn_transmit(enc.codeword.values, sigma2, noise_);
    auto x_hat = codec_->generate(s_hat, enc.layout);

    // Discriminator step on detached inputs.
    const Codeword condition{enc.codeword.values.detach(), enc.codeword.grid};
    auto d_real = discriminate(disc_, x, condition);
    auto d_fake = discriminate(disc_, x_hat.detach(), condition);
    auto d_loss = discriminator_loss(d_real, d_fake);
    const double d_value = d_loss.item<double>();
    check_finite(d_value, "discriminator loss");
    disc_opt_->zero_grad();
    d_loss.backward();
    disc_opt_->step();

    ++iteration_;
    ++progress_[2];
    phase_ = Phase::Adversarial;
    StepRecord d_rec{iteration_, phase_, "disc", snrs, std::nullopt, d_value};
    emit(d_rec);

    // Encoder + generator step against the updated discriminator.
    auto d_out = discriminate(disc_, x_hat, enc.codeword);
    auto g_loss = generator_loss(d_out, x, x_hat, cfg_.adversarial_weights, *features_);
    const auto report = g_loss.report();
    check_finite(report.total, "generator loss");
    codec_opt_->zero_grad();
    g_loss.total.backward();
    codec_opt_->step();
    disc_opt_->zero_grad();

    StepRecord g_rec{iteration_, phase_, "gen", snrs, report, std::nullopt};
    emit(g_rec);
    maybe_checkpoint();

    if (early_stop && progress_[2] % cfg_.validate_every == 0) {
      const double v = validation_lpips();
      last_metrics_["validation_lpips"] = v;
      if (v < best) {
        best = v;
        stale = 0;
      } else if (++stale >= cfg_.early_stop_patience) {
        log::info("early stop at iteration ", iteration_, ": validation LPIPS plateaued at ", best);
        break;
      }
    }
  }
  phase_ = Phase::Adversarial;
  if (checkpoint_dir_) save_checkpoint(*checkpoint_dir_ / "adversarial.gjc");
}

void Trainer::run_schedule() {
  if (phase_ <= Phase::Pretrained) pretrain(std::max<std::int64_t>(0, cfg_.phase1_iters - progress_[0]));
  if (cfg_.phase2_iters == 0 && cfg_.phase3_iters == 0) return;
  if (phase_ <= Phase::DiscWarmed) {
    train_discriminator_only(std::max<std::int64_t>(0, cfg_.phase2_iters - progress_[1]));
  }
  alternate_train(std::max<std::int64_t>(0, cfg_.phase3_iters - progress_[2]));
}

CheckpointMeta Trainer::meta() const {
  CheckpointMeta m;
  m.phase = phase_;
  m.iteration = iteration_;
  m.phase_progress = progress_;
  m.cbr = cfg_.codec.cbr();
  m.config_hash = cfg_.hash();
  m.metrics = last_metrics_;
  return m;
}

TensorArchive Trainer::checkpoint() const {
  TensorArchive archive;
  const auto m = meta();
  std::ostringstream rng_state;
  rng_state << rng_;
  archive.meta() = {{"format", "gjscc-checkpoint"},
                    {"phase", to_string(m.phase)},
                    {"iteration", m.iteration},
                    {"phase_progress", m.phase_progress},
                    {"cbr", m.cbr.str()},
                    {"config", cfg_},
                    {"config_hash", m.config_hash},
                    {"metrics", m.metrics},
                    {"rng_state", rng_state.str()}};
  archive.put_module("codec", *codec_);
  archive.put_module("discriminator", *disc_);
  codec_opt_->save(archive, "optim.codec");
  disc_opt_->save(archive, "optim.discriminator");
  auto noise = noise_;
  archive.put("rng.noise", noise.get_state());
  return archive;
}

void Trainer::save_checkpoint(const fs::path& path) const { checkpoint().save(path); }

CheckpointMeta read_checkpoint_meta(const TensorArchive& archive) {
  const auto& j = archive.meta();
  if (j.value("format", std::string()) != "gjscc-checkpoint") {
    throw IngestError("archive is not a gjscc checkpoint");
  }
  CheckpointMeta m;
  m.phase = phase_from_string(j.at("phase").get<std::string>());
  m.iteration = j.at("iteration").get<std::int64_t>();
  m.phase_progress = j.value("phase_progress", m.phase_progress);
  m.cbr = Rational::parse(j.at("cbr").get<std::string>());
  m.config_hash = j.value("config_hash", std::string());
  m.metrics = j.value("metrics", nlohmann::json::object());
  return m;
}

std::unique_ptr<Trainer> Trainer::resume(const fs::path& checkpoint,
                                         std::shared_ptr<FeatureExtractor> features,
                                         BatchSource& data) {
  const auto archive = TensorArchive::load(checkpoint);
  const auto m = read_checkpoint_meta(archive);
  if (!archive.contains("optim.codec.steps")) {
    throw IngestError(checkpoint.string() + " is a deployment export and cannot be resumed");
  }
  const auto cfg = archive.meta().at("config").get<TrainConfig>();
  auto trainer = std::make_unique<Trainer>(cfg, std::move(features), data);
  archive.load_module("codec", *trainer->codec_);
  archive.load_module("discriminator", *trainer->disc_);
  trainer->codec_opt_->load(archive, "optim.codec");
  trainer->disc_opt_->load(archive, "optim.discriminator");
  std::istringstream rng_state(archive.meta().at("rng_state").get<std::string>());
  rng_state >> trainer->rng_;
  trainer->noise_.set_state(archive.get("rng.noise"));
  trainer->phase_ = m.phase;
  trainer->iteration_ = m.iteration;
  trainer->progress_ = m.phase_progress;
  trainer->last_metrics_ = m.metrics;
  return trainer;
}

LoadedModel load_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw IngestError("checkpoint " + checkpoint.string() + " does not exist");
  const auto archive = TensorArchive::load(checkpoint);
  LoadedModel model;
  model.meta = read_checkpoint_meta(archive);
  model.config = archive.meta().at("config").get<TrainConfig>().resolved();
  model.codec = Codec(model.config.codec);
  archive.load_module("codec", *model.codec);
  model.codec->eval();
  return model;
}

void export_deployment(const fs::path& checkpoint, const fs::path& out) {
  auto archive = TensorArchive::load(checkpoint);
  read_checkpoint_meta(archive);
  archive.erase_prefix("discriminator");
  archive.erase_prefix("optim");
  archive.meta()["deployment"] = true;
  archive.save(out);
}

}  // namespace gjscc
