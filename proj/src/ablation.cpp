#include "gjscc/ablation.hpp"

#include <cstdio>

#include "gjscc/archive.hpp"
#include "gjscc/channel.hpp"
#include "gjscc/log.hpp"

namespace gjscc {

namespace fs = std::filesystem;

std::vector<AblationCell> ablation_grid(const TrainConfig& base, const std::vector<double>& beta_m,
                                        const std::vector<double>& beta_g) {
  std::vector<AblationCell> cells;
  for (double m : beta_m) {
    for (double g : beta_g) {
      AblationCell cell;
      cell.beta_m = m;
      cell.beta_g = g;
      char label[64];
      std::snprintf(label, sizeof(label), "bm%.0e_bg%.0e", m, g);
      cell.label = label;
      cell.config = base;
      cell.config.pretrain_weights.beta_m = m;
      cell.config.adversarial_weights.beta_m = m;
      cell.config.adversarial_weights.beta_g = g;
      cell.config.validate();
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells, BatchSource& data,
                                         const std::vector<torch::Tensor>& eval_images,
                                         std::shared_ptr<FeatureExtractor> features, const fs::path& out_dir) {
  std::vector<AblationResult> results;
  for (const auto& cell : cells) {
    const auto dir = out_dir / cell.label;
    fs::create_directories(dir / "recon");
    write_file_atomic(dir / "config.json", nlohmann::json(cell.config).dump(2) + "\n");
    log::info("ablation cell ", cell.label);

    Trainer trainer(cell.config, features, data);
    trainer.set_log_path(dir / "train_log.jsonl");
    trainer.run_schedule();

    AblationResult r;
    r.label = cell.label;
    r.checkpoint = dir / "final.gjc";
    trainer.save_checkpoint(r.checkpoint);
    r.parameter_hash = parameter_hash(*trainer.codec());

    torch::NoGradGuard no_grad;
    auto& codec = trainer.codec();
    codec->eval();
    auto stream = make_stream(cell.config.seed + 101);
    for (std::size_t i = 0; i < eval_images.size(); ++i) {
      auto enc = codec->encode(eval_images[i]);
      auto s_hat = awgn_transmit(enc.codeword.values, cell.config.validation_snr_db, stream);
      char name[32];
      std::snprintf(name, sizeof(name), "img_%03zu.png", i);
      r.reconstructions.push_back(dir / "recon" / name);
      save_image(codec->generate(s_hat, enc.layout).squeeze(0), r.reconstructions.back());
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace gjscc
