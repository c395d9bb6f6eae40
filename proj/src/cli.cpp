#include "gjscc/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "gjscc/ablation.hpp"
#include "gjscc/archive.hpp"
#include "gjscc/baselines.hpp"
#include "gjscc/data.hpp"
#include "gjscc/error.hpp"
#include "gjscc/hash.hpp"
#include "gjscc/log.hpp"
#include "gjscc/metrics.hpp"
#include "gjscc/study.hpp"
#include "gjscc/trainer.hpp"

namespace gjscc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      if (item == "inf" || item == "+inf") {
        out.push_back(std::numeric_limits<double>::infinity());
      } else {
        out.push_back(std::stod(item));
      }
    } catch (const std::logic_error&) {
      throw UsageError("cannot parse number '" + item + "' in list '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list '" + text + "'");
  return out;
}

void write_manifest(const fs::path& out_dir, const std::string& command, const std::vector<std::string>& argv,
                    const json& config, std::uint64_t seed) {
  fs::create_directories(out_dir);
  json manifest{{"command", command},
                {"argv", argv},
                {"config", config},
                {"seed", seed},
                {"output_dir", fs::absolute(out_dir).string()}};
  manifest["content_hash"] = sha256_hex(json{{"command", command}, {"config", config}, {"seed", seed}}.dump());
  write_file_atomic(out_dir / "run_manifest.json", manifest.dump(2) + "\n");
}

std::vector<torch::Tensor> load_dataset(const fs::path& root, std::vector<std::string>* names = nullptr) {
  ImageFolder folder(DatasetSpec{root, Split::Eval});
  if (names) {
    for (std::size_t i = 0; i < folder.size(); ++i) names->push_back(folder.name(i));
  }
  return folder.images();
}

TrainConfig load_config_or_usage(const std::string& path) {
  if (path.empty()) throw UsageError("--config is required");
  if (!fs::exists(path)) throw UsageError("config file '" + path + "' does not exist");
  return load_train_config(path);
}

std::string data_root_from(const std::string& flag, const std::string& config_path) {
  if (!flag.empty()) return flag;
  const auto j = json::parse(read_file(config_path));
  if (j.contains("data") && j.at("data").contains("train")) {
    fs::path p = j.at("data").at("train").get<std::string>();
    if (p.is_relative()) p = fs::path(config_path).parent_path() / p;
    return p.string();
  }
  throw UsageError("no training data: pass --data or set data.train in the config");
}

std::string format_double(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Generative deep joint source-channel coding toolkit"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  // train
  auto* train = app.add_subcommand("train", "Run the training schedule (or one phase of it)");
  std::string config_path, phase = "all", resume, data_dir, out_dir = "runs/train";
  std::int64_t iters = -1, batch_size = 0, checkpoint_every = -1;
  std::optional<std::uint64_t> seed_override;
  train->add_option("--config", config_path, "Training config (JSON)");
  train->add_option("--phase", phase, "all | pretrain | disc | adversarial")
      ->check(CLI::IsMember({"all", "pretrain", "disc", "adversarial"}));
  train->add_option("--iters", iters, "Iterations for --phase (overrides the config)");
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_option("--data", data_dir, "Training image folder");
  train->add_option("--out", out_dir, "Output directory");
  train->add_option("--seed", seed_override, "Override the config seed");
  train->add_option("--batch-size", batch_size, "Override the batch size");
  train->add_option("--checkpoint-every", checkpoint_every, "Override the checkpoint interval");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints over an SNR or CBR sweep");
  std::vector<std::string> checkpoints;
  std::string snr_list, eval_out = "runs/eval", scheme = "gjscc", expect_cbr;
  bool cbr_sweep = false;
  double sweep_snr_db = 10.0;
  std::uint64_t eval_seed = 0;
  std::int64_t fid_patch = 256;
  eval->add_option("--checkpoint", checkpoints, "Checkpoint(s); several with --cbr-sweep")->required();
  eval->add_option("--data", data_dir, "Evaluation image folder")->required();
  eval->add_option("--snr-list", snr_list, "Comma separated SNRs in dB");
  eval->add_flag("--cbr-sweep", cbr_sweep, "One point per checkpoint at --snr");
  eval->add_option("--snr", sweep_snr_db, "SNR for --cbr-sweep");
  eval->add_option("--cbr", expect_cbr, "Expected checkpoint CBR, e.g. 1/48");
  eval->add_option("--seed", eval_seed, "Channel noise seed");
  eval->add_option("--fid-patch", fid_patch, "FID patch size (0 disables FID)");
  eval->add_option("--scheme", scheme, "Scheme label for the CSV");
  eval->add_option("--out", eval_out, "Output directory");

  // baseline
  auto* baseline = app.add_subcommand("baseline", "Comparison schemes");
  bool bpg_capacity = false, complex_channel = false;
  std::string base_cbr = "1/48", base_out = "runs/baseline", mse_config_out;
  baseline->add_flag("--bpg-capacity", bpg_capacity, "BPG + ideal capacity-achieving code");
  baseline->add_option("--mse-config", mse_config_out, "Write the MSE deep JSCC config derived from --config");
  baseline->add_option("--config", config_path, "Base training config for --mse-config");
  baseline->add_option("--data", data_dir, "Evaluation image folder");
  baseline->add_option("--cbr", base_cbr, "Channel bandwidth ratio");
  baseline->add_option("--snr-list", snr_list, "Comma separated SNRs in dB");
  baseline->add_flag("--complex", complex_channel, "Complex-channel capacity");
  baseline->add_option("--seed", eval_seed, "Recorded seed");
  baseline->add_option("--fid-patch", fid_patch, "FID patch size (0 disables FID)");
  baseline->add_option("--out", base_out, "Output directory");

  // study
  auto* study = app.add_subcommand("study", "User study tooling");
  study->require_subcommand(1);
  auto* serve = study->add_subcommand("serve", "Serve the study API");
  std::string store_dir, pairs_path, host = "127.0.0.1", admin_token;
  int port = 8080;
  bool show_reference = false;
  serve->add_option("--store", store_dir, "Study state directory")->required();
  serve->add_option("--pairs", pairs_path, "Pair manifest (first start only)");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--admin-token", admin_token, "Token for GET /report (or GJSCC_ADMIN_TOKEN)");
  serve->add_flag("--show-reference", show_reference, "Expose the original patch alongside the pair");
  auto* gen_pairs = study->add_subcommand("generate-pairs", "Sample matched patch pairs");
  std::string dir_a, dir_b, pairs_out = "runs/pairs", method_a = "a", method_b = "b", reference_dir;
  std::size_t n_pairs = 46;
  std::int64_t crop = 256;
  std::uint64_t pair_seed = 0;
  gen_pairs->add_option("--a", dir_a, "Reconstructions of method A")->required();
  gen_pairs->add_option("--b", dir_b, "Reconstructions of method B")->required();
  gen_pairs->add_option("--method-a", method_a, "Label of method A");
  gen_pairs->add_option("--method-b", method_b, "Label of method B");
  gen_pairs->add_option("--reference", reference_dir, "Originals (optional)");
  gen_pairs->add_option("--n", n_pairs, "Number of pairs");
  gen_pairs->add_option("--crop", crop, "Patch size");
  gen_pairs->add_option("--seed", pair_seed, "Sampling seed");
  gen_pairs->add_option("--out", pairs_out, "Output directory");
  auto* report = study->add_subcommand("report", "Aggregate responses");
  std::string report_out;
  report->add_option("--store", store_dir, "Study state directory")->required();
  report->add_option("--out", report_out, "Write the report here instead of stdout");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "beta_m x beta_g grid");
  std::string ablate_out = "runs/ablate", eval_dir, bm_list = "1e-3,1e-4,1e-5", bg_list = "0,1e-5,1e-3,1e-1";
  bool run_cells = false;
  ablate->add_option("--config", config_path, "Base training config");
  ablate->add_option("--data", data_dir, "Training image folder (with --run)");
  ablate->add_option("--eval-data", eval_dir, "Images to reconstruct per cell (with --run)");
  ablate->add_option("--beta-m", bm_list, "Comma separated beta_m values");
  ablate->add_option("--beta-g", bg_list, "Comma separated beta_g values");
  ablate->add_flag("--run", run_cells, "Train every cell (otherwise only write configs)");
  ablate->add_option("--out", ablate_out, "Output directory");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a procedural image folder");
  std::string synth_out;
  std::size_t synth_count = 100;
  std::int64_t synth_h = 128, synth_w = 128;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_count, "Number of images");
  synth->add_option("--height", synth_h, "Image height");
  synth->add_option("--width", synth_w, "Image width");
  synth->add_option("--seed", synth_seed, "Seed");

  // export
  auto* exporter = app.add_subcommand("export", "Strip a checkpoint down to the codec");
  std::string export_in, export_out;
  exporter->add_option("--checkpoint", export_in, "Training checkpoint")->required();
  exporter->add_option("--out", export_out, "Deployment archive")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (verbose) log::set_min_level(log::Level::Debug);

  try {
    if (*train) {
      auto cfg = load_config_or_usage(config_path);
      const auto data_root = data_root_from(data_dir, config_path);
      if (seed_override) cfg.seed = *seed_override;
      if (batch_size > 0) cfg.batch_size = batch_size;
      if (checkpoint_every >= 0) cfg.checkpoint_every = checkpoint_every;
      if (iters >= 0) {
        if (phase == "pretrain" || phase == "all") cfg.phase1_iters = iters;
        if (phase == "disc") cfg.phase2_iters = iters;
        if (phase == "adversarial") cfg.phase3_iters = iters;
      }
      cfg.validate();
      write_manifest(out_dir, "train", args, cfg, cfg.seed);

      ImageFolder data(DatasetSpec{data_root, Split::Train});
      std::shared_ptr<FeatureExtractor> features = make_feature_extractor(cfg.features);
      std::unique_ptr<Trainer> trainer;
      if (!resume.empty()) {
        trainer = Trainer::resume(resume, features, data);
        log::info("resumed at iteration ", trainer->iteration(), " (", to_string(trainer->phase()), ")");
      } else {
        trainer = std::make_unique<Trainer>(cfg, features, data);
      }
      trainer->set_checkpoint_dir(out_dir);
      trainer->set_log_path(fs::path(out_dir) / "train_log.jsonl");
      const auto n = [&](std::int64_t configured) { return iters >= 0 ? iters : configured; };
      if (phase == "all") {
        trainer->run_schedule();
      } else if (phase == "pretrain") {
        trainer->pretrain(n(cfg.phase1_iters));
      } else if (phase == "disc") {
        trainer->train_discriminator_only(n(cfg.phase2_iters));
      } else {
        trainer->alternate_train(n(cfg.phase3_iters));
      }
      trainer->save_checkpoint(fs::path(out_dir) / "final.gjc");
      log::info("finished at iteration ", trainer->iteration(), ", phase ", to_string(trainer->phase()));
      return 0;
    }

    if (*eval) {
      if (cbr_sweep == !snr_list.empty()) throw UsageError("pass exactly one of --snr-list and --cbr-sweep");
      for (const auto& c : checkpoints) {
        if (!fs::exists(c)) throw IngestError("checkpoint '" + c + "' does not exist");
      }
      json config{{"checkpoints", checkpoints}, {"data", data_dir},  {"snr_list", snr_list},
                  {"cbr_sweep", cbr_sweep},     {"snr", sweep_snr_db}, {"fid_patch", fid_patch},
                  {"scheme", scheme},           {"cbr", expect_cbr}};
      write_manifest(eval_out, "eval", args, config, eval_seed);
      const auto images = load_dataset(data_dir);
      auto model = load_model(checkpoints.front());
      auto features = make_feature_extractor(model.config.features);
      SweepOptions options{scheme, eval_seed, fid_patch};
      std::vector<CurvePoint> points;
      if (cbr_sweep) {
        std::vector<fs::path> paths(checkpoints.begin(), checkpoints.end());
        points = sweep_cbr(paths, images, *features, sweep_snr_db, options);
      } else {
        std::optional<Rational> expected;
        if (!expect_cbr.empty()) expected = Rational::parse(expect_cbr);
        points = sweep_snr(checkpoints.front(), images, parse_list(snr_list), *features, options, expected);
      }
      write_curve(fs::path(eval_out) / "curve.csv", points, config);
      std::cout << curve_to_csv(points);
      return 0;
    }

    if (*baseline) {
      if (!mse_config_out.empty()) {
        const auto cfg = mse_jscc_config(load_config_or_usage(config_path));
        write_file_atomic(mse_config_out, json(cfg).dump(2) + "\n");
        return 0;
      }
      if (!bpg_capacity) throw UsageError("choose --bpg-capacity or --mse-config");
      if (data_dir.empty()) throw UsageError("--data is required for --bpg-capacity");
      if (snr_list.empty()) snr_list = "1,4,7,10,13";
      const auto cbr = Rational::parse(base_cbr);
      const auto model = complex_channel ? ChannelModel::Complex : ChannelModel::Real;
      const auto codec = BpgCodec::from_env();
      json config{{"data", data_dir},
                  {"cbr", cbr.str()},
                  {"snr_list", snr_list},
                  {"channel", complex_channel ? "complex" : "real"},
                  {"encoder", codec.encoder},
                  {"decoder", codec.decoder},
                  {"header_bytes_counted", true},
                  {"fid_patch", fid_patch}};
      write_manifest(base_out, "baseline", args, config, eval_seed);
      std::vector<std::string> names;
      const auto images = load_dataset(data_dir, &names);
      auto features = make_feature_extractor(FeatureSpec{});
      std::vector<CurvePoint> points;
      json per_image = json::array();
      for (double snr : parse_list(snr_list)) {
        const auto recon_dir = fs::path(base_out) / "recon" / ("snr_" + format_double(snr));
        fs::create_directories(recon_dir);
        std::vector<torch::Tensor> refs, recons;
        double psnr_sum = 0, ssim_sum = 0, lp_sum = 0, di_sum = 0;
        std::int64_t n_ok = 0, n_perc = 0;
        for (std::size_t i = 0; i < images.size(); ++i) {
          json entry{{"image", names[i]}, {"snr_db", snr}};
          try {
            const auto t = bpg_capacity_transmit(images[i], cbr, snr, codec, model);
            entry["bits"] = t.achieved_bits;
            entry["budget_bits"] = t.budget_bits;
            entry["quality"] = t.quality;
            entry["achieved_cbr"] = t.achieved_cbr.str();
            const auto r = evaluate_pair(images[i], t.reconstruction, *features);
            psnr_sum += *r.psnr_db;
            ssim_sum += *r.ms_ssim;
            if (r.lpips) {
              lp_sum += *r.lpips;
              di_sum += *r.dists;
              ++n_perc;
            }
            ++n_ok;
            save_image(t.reconstruction, recon_dir / fs::path(names[i]).replace_extension(".png").filename());
            refs.push_back(images[i]);
            recons.push_back(t.reconstruction);
          } catch (const BudgetInfeasibleError& e) {
            entry["missing"] = e.what();
            log::warn(names[i], " at ", snr, " dB: ", e.what());
          } catch (const ShapeError& e) {
            entry["skipped"] = e.what();
            log::warn(names[i], ": skipped: ", e.what());
          }
          per_image.push_back(entry);
        }
        CurvePoint p;
        p.scheme = "bpg+capacity";
        p.axis = CurveAxis::SnrDb;
        p.x = snr;
        p.snr_db = snr;
        p.seed = eval_seed;
        p.cbr = cbr;
        p.y.n_images = n_ok;
        if (n_ok > 0) {
          p.y.psnr_db = psnr_sum / double(n_ok);
          p.y.ms_ssim = ssim_sum / double(n_ok);
          if (n_perc > 0) {
            p.y.lpips = lp_sum / double(n_perc);
            p.y.dists = di_sum / double(n_perc);
          }
          p.y.fid = patch_fid(refs, recons, *features, fid_patch);
        }
        points.push_back(p);
      }
      std::sort(points.begin(), points.end(), [](const auto& a, const auto& b) { return a.x < b.x; });
      write_curve(fs::path(base_out) / "curve.csv", points, config);
      write_file_atomic(fs::path(base_out) / "per_image.json", per_image.dump(2) + "\n");
      std::cout << curve_to_csv(points);
      return 0;
    }

    if (*study) {
      if (*gen_pairs) {
        PairOptions options{n_pairs, crop, pair_seed, method_a, method_b, reference_dir};
        write_manifest(pairs_out, "study generate-pairs", args,
                       json{{"a", dir_a}, {"b", dir_b}, {"n", n_pairs}, {"crop", crop}, {"reference", reference_dir}},
                       pair_seed);
        const auto manifest = generate_pairs(dir_a, dir_b, pairs_out, options);
        std::cout << manifest.pairs.size() << " pairs written to " << (fs::path(pairs_out) / "pairs.json").string()
                  << "\n";
        return 0;
      }
      if (*report) {
        StudyStore store(store_dir, std::nullopt);
        const auto text = store.report().to_json().dump(2) + "\n";
        if (report_out.empty()) {
          std::cout << text;
        } else {
          write_file_atomic(report_out, text);
        }
        return 0;
      }
      if (*serve) {
        if (admin_token.empty()) {
          if (const char* env = std::getenv("GJSCC_ADMIN_TOKEN")) admin_token = env;
        }
        std::optional<fs::path> manifest;
        if (!pairs_path.empty()) manifest = pairs_path;
        StoreOptions store_options;
        store_options.show_reference = show_reference;
        StudyStore store(store_dir, manifest, store_options);
        StudyServer server(store, ServerOptions{host, port, admin_token});
        sigset_t signals;
        sigemptyset(&signals);
        sigaddset(&signals, SIGINT);
        sigaddset(&signals, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &signals, nullptr);
        const int bound = server.bind();
        log::info("study service listening on ", host, ":", bound);
        std::cout << "listening on " << host << ":" << bound << std::endl;
        std::thread worker([&] { server.serve(); });
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
        worker.join();
        store.snapshot();
        return 0;
      }
    }

    if (*ablate) {
      const auto base = load_config_or_usage(config_path);
      const auto cells = ablation_grid(base, parse_list(bm_list), parse_list(bg_list));
      json grid = json::array();
      for (const auto& c : cells) grid.push_back({{"label", c.label}, {"beta_m", c.beta_m}, {"beta_g", c.beta_g}});
      write_manifest(ablate_out, "ablate", args, json{{"base", base}, {"grid", grid}}, base.seed);
      for (const auto& c : cells) {
        fs::create_directories(fs::path(ablate_out) / c.label);
        write_file_atomic(fs::path(ablate_out) / c.label / "config.json", json(c.config).dump(2) + "\n");
      }
      if (run_cells) {
        ImageFolder data(DatasetSpec{data_root_from(data_dir, config_path), Split::Train});
        const auto eval_images = eval_dir.empty() ? std::vector<torch::Tensor>{} : load_dataset(eval_dir);
        std::shared_ptr<FeatureExtractor> features = make_feature_extractor(base.features);
        const auto results = run_ablation(cells, data, eval_images, features, ablate_out);
        json summary = json::array();
        for (const auto& r : results) {
          summary.push_back({{"label", r.label}, {"checkpoint", r.checkpoint.string()}, {"parameter_hash", r.parameter_hash}});
        }
        write_file_atomic(fs::path(ablate_out) / "summary.json", summary.dump(2) + "\n");
      }
      std::cout << cells.size() << " cells under " << ablate_out << "\n";
      return 0;
    }

    if (*synth) {
      write_manifest(synth_out, "synth", args,
                     json{{"count", synth_count}, {"height", synth_h}, {"width", synth_w}}, synth_seed);
      write_synthetic_dataset(synth_out, synth_count, synth_h, synth_w, synth_seed);
      return 0;
    }

    if (*exporter) {
      if (!fs::exists(export_in)) throw IngestError("checkpoint '" + export_in + "' does not exist");
      export_deployment(export_in, export_out);
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace gjscc
