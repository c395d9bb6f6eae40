#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "gjscc/metrics.hpp"
#include "gjscc/trainer.hpp"
#include "test_support.hpp"

using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const std::string& env = "") {
  const auto exe = testing_support::binary_dir() / "tools" / "gjscc";
  const std::string cmd = env + " " + exe.string() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train --config /nonexistent/config.json"), 2);
  EXPECT_EQ(run("train --phase sideways"), 2);
  EXPECT_EQ(run("eval --data /tmp"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, RuntimeErrorsExitWithOne) {
  TempDir dir("cli-err");
  EXPECT_EQ(run("export --checkpoint /nonexistent.gjc --out " + (dir / "x.gjc").string()), 1);
}

TEST(Cli, TrainEvalExportPipeline) {
  TempDir dir("cli");
  ASSERT_EQ(run("synth --out " + (dir / "data").string() + " --count 4 --height 64 --width 64 --seed 2"), 0);
  EXPECT_TRUE(fs::exists(dir / "data" / "run_manifest.json"));

  auto cfg = testing_support::tiny_config(4);
  cfg.phase1_iters = 2;
  cfg.phase2_iters = 1;
  cfg.phase3_iters = 1;
  cfg.batch_size = 2;
  cfg.crop_pixels = 32;
  {
    std::ofstream out(dir / "cfg.json");
    out << nlohmann::json(cfg).dump(2);
  }
  const auto run_dir = dir / "run";
  ASSERT_EQ(run("train --config " + (dir / "cfg.json").string() + " --data " + (dir / "data").string() +
                " --out " + run_dir.string()),
            0);
  auto manifest = read_json(run_dir / "run_manifest.json");
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["seed"], 4);
  EXPECT_EQ(manifest["config"], nlohmann::json(cfg));
  EXPECT_EQ(manifest["content_hash"].get<std::string>().size(), 64u);
  for (const char* f : {"pretrained.gjc", "disc_warmed.gjc", "adversarial.gjc", "final.gjc", "train_log.jsonl"}) {
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  }
  auto model = gjscc::load_model(run_dir / "final.gjc");
  EXPECT_EQ(model.meta.phase, gjscc::Phase::Adversarial);
  EXPECT_EQ(model.meta.iteration, 4);

  ASSERT_EQ(run("train --config " + (dir / "cfg.json").string() + " --data " + (dir / "data").string() +
                " --resume " + (run_dir / "final.gjc").string() + " --phase adversarial --iters 1 --out " +
                (dir / "run2").string()),
            0);
  EXPECT_EQ(gjscc::load_model(dir / "run2" / "final.gjc").meta.iteration, 5);

  const auto eval_dir = dir / "eval";
  ASSERT_EQ(run("eval --checkpoint " + (run_dir / "final.gjc").string() + " --data " + (dir / "data").string() +
                " --snr-list 10,4 --fid-patch 0 --cbr 1/12 --out " + eval_dir.string()),
            0);
  auto curve = gjscc::read_curve_csv(eval_dir / "curve.csv");
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_EQ(curve[0].x, 4.0);
  EXPECT_EQ(curve[1].x, 10.0);
  EXPECT_TRUE(curve[0].y.psnr_db.has_value());
  EXPECT_TRUE(fs::exists(eval_dir / "curve.csv.json"));
  EXPECT_EQ(run("eval --checkpoint " + (run_dir / "final.gjc").string() + " --data " + (dir / "data").string() +
                " --snr-list 10 --fid-patch 0 --cbr 1/48 --out " + (dir / "eval2").string()),
            1);

  ASSERT_EQ(run("export --checkpoint " + (run_dir / "final.gjc").string() + " --out " +
                (dir / "deploy.gjc").string()),
            0);
  EXPECT_LT(fs::file_size(dir / "deploy.gjc"), fs::file_size(run_dir / "final.gjc"));

  ASSERT_EQ(run("baseline --mse-config " + (dir / "mse.json").string() + " --config " +
                (dir / "cfg.json").string()),
            0);
  auto mse = read_json(dir / "mse.json").get<gjscc::TrainConfig>();
  EXPECT_EQ(mse.pretrain_weights.beta_m, 1.0);
  EXPECT_EQ(mse.phase3_iters, 0);
}

TEST(Cli, BpgCapacityBaseline) {
  TempDir dir("cli-bpg");
  ASSERT_EQ(run("synth --out " + (dir / "data").string() + " --count 2 --height 64 --width 64 --seed 3"), 0);
  const auto tools = testing_support::binary_dir() / "tools";
  const std::string env =
      "GJSCC_BPGENC=" + (tools / "quantenc").string() + " GJSCC_BPGDEC=" + (tools / "quantdec").string();
  ASSERT_EQ(run("baseline --bpg-capacity --data " + (dir / "data").string() +
                    " --cbr 1/6 --snr-list 10 --fid-patch 0 --out " + (dir / "out").string(),
                env),
            0);
  auto curve = gjscc::read_curve_csv(dir / "out" / "curve.csv");
  ASSERT_EQ(curve.size(), 1u);
  EXPECT_EQ(curve[0].scheme, "bpg+capacity");
  auto per_image = read_json(dir / "out" / "per_image.json");
  ASSERT_EQ(per_image.size(), 2u);
  for (const auto& rec : per_image) EXPECT_LE(rec["bits"].get<double>(), rec["budget_bits"].get<double>());
}
