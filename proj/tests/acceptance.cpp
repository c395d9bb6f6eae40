// Acceptance checks: one line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <string>

#include "gjscc/ablation.hpp"
#include "gjscc/baselines.hpp"
#include "gjscc/channel.hpp"
#include "gjscc/codec.hpp"
#include "gjscc/data.hpp"
#include "gjscc/error.hpp"
#include "gjscc/log.hpp"
#include "gjscc/losses.hpp"
#include "gjscc/metrics.hpp"
#include "gjscc/study.hpp"
#include "gjscc/trainer.hpp"
#include "gradcheck.hpp"
#include "test_support.hpp"

using namespace gjscc;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum Kind { Pass, Fail, Skip } kind = Pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

Outcome channel_calibration() {
  const auto t0 = Clock::now();
  const std::int64_t k = 1000000;
  auto stream = make_stream(1234);
  double worst_db = 0, worst_power = 0;
  for (double snr : {1.0, 4.0, 7.0, 10.0, 13.0}) {
    auto raw = torch::randn({1, k}, torch::TensorOptions().dtype(torch::kFloat64)) * 3.7 + 0.2;
    auto s = power_normalize(raw);
    const double power = s.pow(2).mean().item<double>();
    auto y = awgn_transmit(s, snr, stream);
    const double noise = (y - s).pow(2).mean().item<double>();
    worst_db = std::max(worst_db, std::abs(10 * std::log10(power / noise) - snr));
    worst_power = std::max(worst_power, std::abs(power - 1));
  }
  const double t = seconds_since(t0);
  const bool ok = worst_db <= 0.1 && worst_power <= 1e-6 && t < 10;
  return {ok ? Outcome::Pass : Outcome::Fail,
          fmt("max |realized - target| = %.4f dB (<= 0.1), max |E[s^2] - 1| = %.2e (<= 1e-6), %.2f s (< 10)", worst_db,
              worst_power, t)};
}

Outcome rate_bookkeeping() {
  std::string detail;
  bool ok = true;
  for (std::int64_t c_out : {16, 32}) {
    CodecConfig cfg;
    cfg.latent_channels = c_out;
    auto codec = build_codec(cfg, 0);
    codec->eval();
    torch::NoGradGuard ng;
    auto enc = codec->encode(torch::zeros({1, 3, 512, 768}));
    const auto rate = compute_cbr(512, 768, enc.codeword.values.size(1));
    const Rational expected(1, c_out == 16 ? 48 : 24);
    ok = ok && rate.cbr == expected && cfg.cbr() == expected;
    detail += fmt("C_out=%lld: k=%lld, CBR=%s (expected %s); ", static_cast<long long>(c_out),
                  static_cast<long long>(rate.k), rate.cbr.str().c_str(), expected.str().c_str());
  }
  return {ok ? Outcome::Pass : Outcome::Fail, detail};
}

Outcome loss_correctness() {
  const auto t0 = Clock::now();
  auto half = torch::full({2, 1, 4, 4}, 0.5, torch::kFloat64);
  const double g = adversarial_generator_term(half).item<double>();
  const double d = discriminator_loss(half, half).item<double>();
  const double g_err = std::abs(g - std::log(2.0));
  const double d_err = std::abs(d - 2 * std::log(2.0));

  auto cfg = testing_support::tiny_config();
  auto codec = build_codec(cfg.codec, 11);
  auto disc = build_discriminator(cfg.discriminator, 12);
  auto fe = AlexNetFeatures::random(13, cfg.features.alexnet);
  codec->to(torch::kFloat64);
  disc->to(torch::kFloat64);
  disc->eval();
  fe->to(torch::kFloat64);
  torch::manual_seed(5);
  auto x = torch::rand({2, 3, 32, 32}, torch::kFloat64);
  const LossWeights w{1.0, 0.5, 0.1};
  auto gen_loss = [&]() {
    auto enc = codec->encode(x);
    auto stream = make_stream(21);
    auto s_hat = awgn_transmit(enc.codeword.values, 7.0, stream);
    auto x_hat = codec->generate(s_hat, enc.layout);
    return generator_loss(discriminate(disc, x_hat, enc.codeword), x, x_hat, w, *fe).total;
  };
  double worst_g = 0;
  auto params = codec->named_parameters();
  for (std::size_t i : {std::size_t{0}, params.size() / 2, params.size() - 1}) {
    worst_g = std::max(worst_g, testing_support::worst_relative_error(params[i].value(), gen_loss, 6));
  }
  Encoded enc;
  torch::Tensor x_hat;
  {
    torch::NoGradGuard ng;
    enc = codec->encode(x);
    x_hat = codec->generate(enc.codeword.values, enc.layout);
  }
  auto disc_loss = [&]() {
    return discriminator_loss(discriminate(disc, x, enc.codeword), discriminate(disc, x_hat, enc.codeword));
  };
  double worst_d = 0;
  for (auto& p : disc->parameters()) worst_d = std::max(worst_d, testing_support::worst_relative_error(p, disc_loss, 4));
  const double t = seconds_since(t0);
  const bool ok = g_err <= 1e-9 && d_err <= 1e-9 && worst_g <= 1e-3 && worst_d <= 1e-3 && t < 120;
  return {ok ? Outcome::Pass : Outcome::Fail,
          fmt("|L_adv - ln2| = %.1e, |L_D - 2ln2| = %.1e (<= 1e-9); gradcheck rel err G %.2e, D %.2e (<= 1e-3); "
              "%.1f s (< 120)",
              g_err, d_err, worst_g, worst_d, t)};
}

Outcome fid_oracle() {
  const std::int64_t n = 100000, d = 8;
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto gen = make_stream(77);
  auto q = std::get<0>(torch::linalg_qr(torch::randn({d, d}, gen, opts)));
  auto var_a = torch::linspace(0.5, 2.0, d, opts);
  auto var_b = torch::linspace(1.5, 0.3, d, opts);
  auto mu_a = torch::zeros({d}, opts);
  auto mu_b = torch::full({d}, 0.3, opts);
  // Both covariances share the eigenbasis q, so the closed form reduces to
  // |mu_a - mu_b|^2 + sum (sqrt(var_a) - sqrt(var_b))^2.
  const double closed = (mu_a - mu_b).pow(2).sum().item<double>() +
                        (var_a.sqrt() - var_b.sqrt()).pow(2).sum().item<double>();
  auto a = torch::matmul(torch::randn({n, d}, gen, opts) * var_a.sqrt(), q.t()) + torch::matmul(mu_a, q.t());
  auto b = torch::matmul(torch::randn({n, d}, gen, opts) * var_b.sqrt(), q.t()) + torch::matmul(mu_b, q.t());
  const double got = fid(a, b);
  const double rel = std::abs(got - closed) / closed;
  const double self = fid(a, a.clone());
  const bool ok = rel <= 0.05 && std::abs(self) <= 1e-6;
  return {ok ? Outcome::Pass : Outcome::Fail,
          fmt("FID %.5f vs closed form %.5f (rel err %.4f <= 0.05); identical sets %.2e (|.| <= 1e-6)", got, closed,
              rel, self)};
}

Outcome patch_protocol() {
  std::string detail;
  bool any = false, ok = true;
  auto count = [](const char* dir) {
    std::int64_t total = 0;
    for (const auto& p : list_images(DatasetSpec{dir, Split::Eval})) {
      auto img = load_image(p);
      total += count_patches(img.size(1), img.size(2));
    }
    return total;
  };
  for (auto [env, expected] : {std::pair{"GJSCC_KODAK_DIR", 144}, std::pair{"GJSCC_CLIC_DIR", 2155}}) {
    if (const char* dir = std::getenv(env)) {
      any = true;
      const auto n = count(dir);
      ok = ok && n == expected;
      detail += fmt("%s: %lld patches (expected %d); ", env, static_cast<long long>(n), expected);
    } else {
      detail += fmt("%s not set; ", env);
    }
  }
  if (!any) return {Outcome::Skip, detail + "datasets absent"};
  return {ok ? Outcome::Pass : Outcome::Fail, detail};
}

double window_mean(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return s / static_cast<double>(end - begin);
}

Outcome smoke_training() {
  const auto t0 = Clock::now();
  TempDir dir("smoke");
  write_synthetic_dataset(dir / "data", 100, 96, 96, 2024);
  ImageFolder data(DatasetSpec{dir / "data", Split::Train});

  std::vector<double> deltas;
  std::string per_seed;
  bool freeze_ok = true, resume_ok = true;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto cfg = testing_support::tiny_config(seed);
    std::shared_ptr<FeatureExtractor> fe = make_feature_extractor(cfg.features);
    Trainer t(cfg, fe, data);
    // Distortion part of the objective (same weights in every phase).
    std::vector<double> start, end;
    t.on_step([&](const StepRecord& r) {
      if (!r.generator) return;
      const double v = r.generator->perceptual * cfg.pretrain_weights.beta_p + r.generator->mse * cfg.pretrain_weights.beta_m;
      (r.phase == Phase::Pretrained ? start : end).push_back(v);
    });
    t.pretrain(cfg.phase1_iters);
    const auto codec_hash = parameter_hash(*t.codec());
    t.train_discriminator_only(cfg.phase2_iters);
    freeze_ok = freeze_ok && parameter_hash(*t.codec()) == codec_hash;

    const auto half = cfg.phase3_iters / 2;
    t.alternate_train(half);
    if (seed == 0) {
      t.save_checkpoint(dir / "mid.gjc");
      t.alternate_train(cfg.phase3_iters - half);
      auto resumed = Trainer::resume(dir / "mid.gjc", fe, data);
      resumed->alternate_train(cfg.phase3_iters - half);
      resume_ok = resumed->checkpoint().serialize() == t.checkpoint().serialize() &&
                  parameter_hash(*resumed->codec()) == parameter_hash(*t.codec());
    } else {
      t.alternate_train(cfg.phase3_iters - half);
    }
    const std::size_t w = 25;
    const double s = window_mean(start, 0, w);
    const double e = window_mean(end, end.size() - w, end.size());
    deltas.push_back(e - s);
    per_seed += fmt("seed %llu: %.4f -> %.4f; ", static_cast<unsigned long long>(seed), s, e);
  }
  std::sort(deltas.begin(), deltas.end());
  const double median = deltas[1];
  const double t = seconds_since(t0);
  const bool ok = median < 0 && freeze_ok && resume_ok && t < 3600;
  return {ok ? Outcome::Pass : Outcome::Fail,
          per_seed + fmt("median change %.4f (< 0); phase-2 freeze %s; resume %s; %.0f s (< 3600)", median,
                         freeze_ok ? "bit-exact" : "VIOLATED", resume_ok ? "bit-exact" : "DIVERGED", t)};
}

Outcome baseline_budget() {
  const double c = capacity_bits(24576, 10.0);
  BpgCodec codec = BpgCodec::from_env();
  if (!std::getenv("GJSCC_BPGENC")) {
    codec.encoder = (testing_support::binary_dir() / "tools" / "quantenc").string();
    codec.decoder = (testing_support::binary_dir() / "tools" / "quantdec").string();
  }
  int feasible = 0, infeasible = 0, violations = 0;
  const double snrs[] = {1, 4, 7, 10, 13};
  for (int i = 0; i < 20; ++i) {
    auto img = synthesize_image(256, 384, 500 + i);
    const double snr = snrs[i % 5];
    const Rational cbr = i % 2 ? Rational(1, 24) : Rational(1, 48);
    try {
      auto t = bpg_capacity_transmit(img, cbr, snr, codec);
      ++feasible;
      if (static_cast<double>(t.achieved_bits) > t.budget_bits) ++violations;
      if (static_cast<std::int64_t>(t.bitstream.size()) * 8 != t.achieved_bits) ++violations;
    } catch (const BudgetInfeasibleError&) {
      ++infeasible;
    }
  }
  const bool ok = std::abs(c - 42510) <= 1 && violations == 0 && feasible > 0;
  return {ok ? Outcome::Pass : Outcome::Fail,
          fmt("capacity_bits(24576, 10 dB) = %.3f (42510 +/- 1); 20 images via %s: %d fit, %d infeasible, %d over "
              "budget",
              c, fs::path(codec.encoder).filename().c_str(), feasible, infeasible, violations)};
}

Outcome ablation_harness() {
  const auto t0 = Clock::now();
  TempDir dir("ablation");
  write_synthetic_dataset(dir / "data", 20, 96, 96, 77);
  ImageFolder data(DatasetSpec{dir / "data", Split::Train});
  auto base = testing_support::tiny_config(9);
  base.phase1_iters = 10;
  base.phase2_iters = 5;
  base.phase3_iters = 10;
  auto cells = ablation_grid(base);
  std::vector<torch::Tensor> eval{synthesize_image(64, 64, 1), synthesize_image(64, 96, 2)};
  std::shared_ptr<FeatureExtractor> fe = make_feature_extractor(base.features);
  auto results = run_ablation(cells, data, eval, fe, dir / "out");
  std::set<std::string> labels, hashes;
  std::size_t recon = 0;
  bool files_ok = true;
  for (const auto& r : results) {
    labels.insert(r.label);
    hashes.insert(r.parameter_hash);
    files_ok = files_ok && fs::exists(r.checkpoint);
    for (const auto& p : r.reconstructions) {
      files_ok = files_ok && fs::exists(p);
      ++recon;
    }
  }
  const bool ok = cells.size() == 12 && results.size() == 12 && labels.size() == 12 && hashes.size() == 12 &&
                  recon == 24 && files_ok;
  return {ok ? Outcome::Pass : Outcome::Fail,
          fmt("%zu cells, %zu distinct labels, %zu distinct checkpoints, %zu reconstructions (expected 12/12/12/24); "
              "%.0f s",
              cells.size(), labels.size(), hashes.size(), recon, seconds_since(t0))};
}

Outcome study_aggregation() {
  TempDir dir("study");
  for (const char* sub : {"a", "b"}) fs::create_directories(dir / sub);
  for (int i = 0; i < 24; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img%02d.png", i);
    auto x = synthesize_image(64, 96, 300 + i);
    save_image((x * 0.9).clamp(0, 1), dir / "a" / name);
    save_image((x * 0.8 + 0.1).clamp(0, 1), dir / "b" / name);
  }
  PairOptions opt;
  opt.crop = 16;
  opt.seed = 3;
  opt.method_a = "A";
  opt.method_b = "B";
  generate_pairs(dir / "a", dir / "b", dir / "pairs", opt);

  std::mt19937_64 coin(99);
  double coin_pct = 0;
  std::string before;
  {
    StudyStore store(dir / "coin", dir / "pairs" / "pairs.json", StoreOptions{100, 1, false});
    for (int s = 0; s < 20; ++s) {
      auto session = store.create_session("participant-" + std::to_string(s));
      for (const auto& pair_id : session.order) {
        store.record_response(session.session_id, pair_id, (coin() & 1) ? Side::Left : Side::Right);
      }
    }
    auto report = store.report();
    coin_pct = report.preference.at("A");
    before = report.to_json().dump();
  }
  StudyStore reopened(dir / "coin", std::nullopt);
  const bool roundtrip = reopened.report().to_json().dump() == before;

  StudyStore all_a(dir / "all_a", dir / "pairs" / "pairs.json");
  for (int s = 0; s < 5; ++s) {
    auto session = all_a.create_session("fan-" + std::to_string(s));
    for (const auto& pair_id : session.order) {
      all_a.record_response(session.session_id, pair_id, session.a_on_left.at(pair_id) ? Side::Left : Side::Right);
    }
  }
  const double a_pct = all_a.report().preference.at("A");
  const bool ok = std::abs(coin_pct - 50) <= 5 && a_pct == 100.0 && roundtrip;
  return {ok ? Outcome::Pass : Outcome::Fail,
          fmt("coin flip (20 x 46): A = %.2f%% (50 +/- 5); all-A: %.1f%% (100); restart round trip %s", coin_pct,
              a_pct, roundtrip ? "byte-identical" : "DIFFERS")};
}

}  // namespace

int main() {
  torch::set_num_threads(1);
  gjscc::log::set_min_level(gjscc::log::Level::Warn);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"channel calibration", channel_calibration},
      {"rate bookkeeping", rate_bookkeeping},
      {"loss correctness", loss_correctness},
      {"FID oracle", fid_oracle},
      {"patch protocol", patch_protocol},
      {"smoke training", smoke_training},
      {"baseline budget", baseline_budget},
      {"ablation harness", ablation_harness},
      {"study aggregation", study_aggregation},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {Outcome::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.kind == Outcome::Pass ? "PASS" : o.kind == Outcome::Skip ? "SKIP" : "FAIL";
    failures += o.kind == Outcome::Fail;
    std::printf("[%s] %s: %s\n", tag, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
