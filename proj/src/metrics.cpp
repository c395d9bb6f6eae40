#include "gjscc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "gjscc/archive.hpp"
#include "gjscc/channel.hpp"
#include "gjscc/data.hpp"
#include "gjscc/error.hpp"
#include "gjscc/log.hpp"
#include "gjscc/losses.hpp"
#include "gjscc/trainer.hpp"

namespace gjscc {

namespace F = torch::nn::functional;

namespace {

constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr std::int64_t kWindow = 11;

void require_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    std::ostringstream msg;
    msg << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
    throw ShapeError(msg.str());
  }
}

torch::Tensor as_batch(const torch::Tensor& x) { return x.dim() == 3 ? x.unsqueeze(0) : x; }

torch::Tensor gaussian_window(torch::ScalarType dtype) {
  auto coords = torch::arange(kWindow, torch::kFloat64) - (kWindow / 2);
  auto g = torch::exp(-(coords * coords) / (2.0 * 1.5 * 1.5));
  return (g / g.sum()).to(dtype);
}

torch::Tensor gaussian_filter(const torch::Tensor& x, const torch::Tensor& win) {
  const auto c = x.size(1);
  auto h = win.view({1, 1, 1, kWindow}).expand({c, 1, 1, kWindow});
  auto v = win.view({1, 1, kWindow, 1}).expand({c, 1, kWindow, 1});
  auto out = F::conv2d(x, h, F::Conv2dFuncOptions().groups(c));
  return F::conv2d(out, v, F::Conv2dFuncOptions().groups(c));
}

// Per-(image, channel) SSIM and contrast-structure terms.
std::pair<torch::Tensor, torch::Tensor> ssim_terms(const torch::Tensor& x, const torch::Tensor& y,
                                                   const torch::Tensor& win) {
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  auto mu1 = gaussian_filter(x, win);
  auto mu2 = gaussian_filter(y, win);
  auto mu1_sq = mu1 * mu1;
  auto mu2_sq = mu2 * mu2;
  auto mu12 = mu1 * mu2;
  auto s1 = gaussian_filter(x * x, win) - mu1_sq;
  auto s2 = gaussian_filter(y * y, win) - mu2_sq;
  auto s12 = gaussian_filter(x * y, win) - mu12;
  auto cs_map = (2 * s12 + c2) / (s1 + s2 + c2);
  auto ssim_map = ((2 * mu12 + c1) / (mu1_sq + mu2_sq + c1)) * cs_map;
  return {ssim_map.flatten(2).mean(-1), cs_map.flatten(2).mean(-1)};
}

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  Eigen::MatrixXd m(c.size(0), c.size(1));
  auto acc = c.accessor<double, 2>();
  for (std::int64_t i = 0; i < c.size(0); ++i) {
    for (std::int64_t j = 0; j < c.size(1); ++j) m(i, j) = acc[i][j];
  }
  return m;
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) {
    throw NumericalError(std::string("FID: eigendecomposition of ") + what + " did not converge");
  }
  const auto& ev = solver.eigenvalues();
  const double max_ev = ev.cwiseAbs().maxCoeff();
  const double min_ev = ev.minCoeff();
  if (!std::isfinite(max_ev) || min_ev < -1e-6 * std::max(1.0, max_ev)) {
    std::ostringstream msg;
    msg << "FID: " << what << " is not positive semi-definite (eigenvalues in [" << min_ev << ", "
        << ev.maxCoeff() << "], condition ~" << (max_ev / std::max(std::abs(min_ev), 1e-300)) << ")";
    throw NumericalError(msg.str());
  }
  const Eigen::VectorXd root = ev.cwiseMax(0.0).cwiseSqrt();
  return solver.eigenvectors() * root.asDiagonal() * solver.eigenvectors().transpose();
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

std::uint64_t point_seed(std::uint64_t seed, std::size_t index) {
  return seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL * (index + 1);
}

}  // namespace

double psnr(const torch::Tensor& x, const torch::Tensor& x_hat, double cap) {
  require_same(x, x_hat, "psnr");
  const double mse = (x.to(torch::kFloat64) - x_hat.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse <= 0.0) return cap;
  return std::min(cap, -10.0 * std::log10(mse));
}

double ms_ssim(const torch::Tensor& x_in, const torch::Tensor& y_in, int* levels_used) {
  require_same(x_in, y_in, "ms_ssim");
  auto x = as_batch(x_in).to(torch::kFloat64);
  auto y = as_batch(y_in).to(torch::kFloat64);
  const auto side = std::min(x.size(2), x.size(3));
  int levels = static_cast<int>(kMsSsimWeights.size());
  while (levels > 1 && side <= (kWindow - 1) * (std::int64_t{1} << (levels - 1))) --levels;
  if (side < kWindow) {
    throw ShapeError("ms_ssim: inputs must be at least " + std::to_string(kWindow) + " pixels per side");
  }
  if (levels < static_cast<int>(kMsSsimWeights.size())) {
    log::warn("ms_ssim: ", side, " px input supports only ", levels, " scale(s); exponents renormalized");
  }
  if (levels_used) *levels_used = levels;
  double wsum = 1.0;
  if (levels < static_cast<int>(kMsSsimWeights.size())) {
    wsum = 0.0;
    for (int i = 0; i < levels; ++i) wsum += kMsSsimWeights[i];
  }

  const auto win = gaussian_window(torch::kFloat64);
  auto value = torch::ones({x.size(0), x.size(1)}, torch::kFloat64);
  for (int i = 0; i < levels; ++i) {
    auto [ssim, cs] = ssim_terms(x, y, win);
    const double w = kMsSsimWeights[i] / wsum;
    if (i < levels - 1) {
      value = value * torch::relu(cs).pow(w);
      const std::vector<std::int64_t> pad{x.size(2) % 2, x.size(3) % 2};
      x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2).padding(pad));
      y = F::avg_pool2d(y, F::AvgPool2dFuncOptions(2).padding(pad));
    } else {
      value = value * torch::relu(ssim).pow(w);
    }
  }
  return value.mean().item<double>();
}

torch::Tensor dists_per_image(const torch::Tensor& x_in, const torch::Tensor& y_in, FeatureExtractor& fe) {
  require_same(x_in, y_in, "dists");
  torch::NoGradGuard no_grad;
  auto x = as_batch(x_in);
  auto y = as_batch(y_in);
  std::vector<torch::Tensor> fx{x};
  std::vector<torch::Tensor> fy{y};
  for (auto& t : fe.taps(x)) fx.push_back(t);
  for (auto& t : fe.taps(y)) fy.push_back(t);
  const auto alpha = fe.dists_alpha();
  const auto beta = fe.dists_beta();
  if (alpha.size() != fx.size() || beta.size() != fx.size()) {
    throw ShapeError("dists: extractor weights do not match its tap count");
  }
  constexpr double c1 = 1e-6;
  constexpr double c2 = 1e-6;
  auto similarity = torch::zeros({x.size(0)}, torch::kFloat64);
  for (std::size_t i = 0; i < fx.size(); ++i) {
    auto a = fx[i].to(torch::kFloat64);
    auto b = fy[i].to(torch::kFloat64);
    auto mx = a.mean({2, 3});
    auto my = b.mean({2, 3});
    auto vx = (a - mx.unsqueeze(-1).unsqueeze(-1)).pow(2).mean({2, 3});
    auto vy = (b - my.unsqueeze(-1).unsqueeze(-1)).pow(2).mean({2, 3});
    auto cov = ((a - mx.unsqueeze(-1).unsqueeze(-1)) * (b - my.unsqueeze(-1).unsqueeze(-1))).mean({2, 3});
    auto s1 = (2 * mx * my + c1) / (mx * mx + my * my + c1);
    auto s2 = (2 * cov + c2) / (vx + vy + c2);
    auto wa = alpha[i].to(torch::kFloat64).view({1, -1});
    auto wb = beta[i].to(torch::kFloat64).view({1, -1});
    similarity = similarity + (wa * s1 + wb * s2).sum(1);
  }
  return (1.0 - similarity).clamp_min(0.0);
}

double dists_metric(const torch::Tensor& x, const torch::Tensor& x_hat, FeatureExtractor& fe) {
  return dists_per_image(x, x_hat, fe).mean().item<double>();
}

double lpips_metric(const torch::Tensor& x, const torch::Tensor& x_hat, FeatureExtractor& fe) {
  torch::NoGradGuard no_grad;
  return lpips_distance(as_batch(x), as_batch(x_hat), fe).item<double>();
}

double fid(const torch::Tensor& features_a, const torch::Tensor& features_b, double jitter) {
  auto a = features_a.dim() == 1 ? features_a.unsqueeze(1) : features_a;
  auto b = features_b.dim() == 1 ? features_b.unsqueeze(1) : features_b;
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(1)) {
    std::ostringstream msg;
    msg << "fid: feature sets must be [N,D] with equal D, got " << a.sizes() << " and " << b.sizes();
    throw ShapeError(msg.str());
  }
  if (a.size(0) < 2 || b.size(0) < 2) throw ShapeError("fid: each set needs at least two samples");
  const auto ma = to_eigen(a);
  const auto mb = to_eigen(b);
  const Eigen::RowVectorXd mu_a = ma.colwise().mean();
  const Eigen::RowVectorXd mu_b = mb.colwise().mean();
  const Eigen::MatrixXd ca = ma.rowwise() - mu_a;
  const Eigen::MatrixXd cb = mb.rowwise() - mu_b;
  const auto d = ma.cols();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sigma_a = (ca.transpose() * ca) / double(ma.rows() - 1) + jitter * eye;
  const Eigen::MatrixXd sigma_b = (cb.transpose() * cb) / double(mb.rows() - 1) + jitter * eye;
  const Eigen::MatrixXd root_a = sqrt_psd(sigma_a, "covariance A");
  Eigen::MatrixXd inner = root_a * sigma_b * root_a;
  inner = 0.5 * (inner + inner.transpose());
  const Eigen::MatrixXd root = sqrt_psd(inner, "sqrt(A) B sqrt(A)");
  const double value =
      (mu_a - mu_b).squaredNorm() + sigma_a.trace() + sigma_b.trace() - 2.0 * root.trace();
  if (!std::isfinite(value)) throw NumericalError("fid: non-finite result");
  return std::max(0.0, value);
}

MetricReport evaluate_pair(const torch::Tensor& x, const torch::Tensor& x_hat, FeatureExtractor& fe,
                           double psnr_cap) {
  MetricReport r;
  r.n_images = as_batch(x).size(0);
  r.psnr_db = psnr(x, x_hat, psnr_cap);
  r.ms_ssim = ms_ssim(x, x_hat);
  const auto side = std::min(x.size(-1), x.size(-2));
  if (side >= fe.min_input_size()) {
    r.lpips = lpips_metric(x, x_hat, fe);
    r.dists = dists_metric(x, x_hat, fe);
  }
  return r;
}

std::optional<double> patch_fid(const std::vector<torch::Tensor>& reference,
                                const std::vector<torch::Tensor>& distorted, FeatureExtractor& fe,
                                std::int64_t patch) {
  if (patch <= 0) return std::nullopt;
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> ea;
  std::vector<torch::Tensor> eb;
  for (std::size_t i = 0; i < reference.size() && i < distorted.size(); ++i) {
    auto pa = tile_patches(reference[i], patch);
    auto pb = tile_patches(distorted[i], patch);
    if (pa.empty()) continue;
    ea.push_back(fe.embed(torch::stack(pa)).to(torch::kFloat64));
    eb.push_back(fe.embed(torch::stack(pb)).to(torch::kFloat64));
  }
  if (ea.empty()) return std::nullopt;
  auto a = torch::cat(ea);
  auto b = torch::cat(eb);
  if (a.size(0) < 2) return std::nullopt;
  return fid(a, b);
}

namespace {

struct Accumulator {
  double psnr = 0, ms_ssim = 0, lpips = 0, dists = 0;
  std::int64_t n = 0, n_perceptual = 0;

  void add(const MetricReport& r) {
    psnr += *r.psnr_db;
    ms_ssim += *r.ms_ssim;
    ++n;
    if (r.lpips && r.dists) {
      lpips += *r.lpips;
      dists += *r.dists;
      ++n_perceptual;
    }
  }

  MetricReport finish() const {
    MetricReport r;
    r.n_images = n;
    if (n > 0) {
      r.psnr_db = psnr / double(n);
      r.ms_ssim = ms_ssim / double(n);
    }
    if (n_perceptual > 0) {
      r.lpips = lpips / double(n_perceptual);
      r.dists = dists / double(n_perceptual);
    }
    return r;
  }
};

std::optional<Rational> realized_cbr(Codec& codec, const std::vector<torch::Tensor>& images) {
  std::int64_t k = 0;
  std::int64_t m = 0;
  for (const auto& img : images) {
    const auto layout = codec->layout_for(img.size(-2), img.size(-1));
    k += layout.grid.size();
    m += 3 * img.size(-2) * img.size(-1);
  }
  if (m == 0) return std::nullopt;
  return Rational(k, m);
}

CurvePoint run_point(Codec& codec, const std::vector<torch::Tensor>& images, double snr_db,
                     std::uint64_t stream_seed, FeatureExtractor& fe, const SweepOptions& options) {
  torch::NoGradGuard no_grad;
  codec->eval();
  auto stream = make_stream(stream_seed);
  Accumulator acc;
  std::vector<torch::Tensor> recon;
  recon.reserve(images.size());
  for (const auto& img : images) {
    auto enc = codec->encode(img);
    auto s_hat = awgn_transmit(enc.codeword.values, snr_db, stream);
    auto x_hat = codec->generate(s_hat, enc.layout).squeeze(0);
    acc.add(evaluate_pair(img, x_hat, fe, options.psnr_cap));
    recon.push_back(x_hat);
  }
  CurvePoint p;
  p.scheme = options.scheme;
  p.snr_db = snr_db;
  p.seed = options.seed;
  p.y = acc.finish();
  p.y.fid = patch_fid(images, recon, fe, options.fid_patch);
  p.cbr = realized_cbr(codec, images);
  return p;
}

}  // namespace

std::vector<CurvePoint> sweep_snr(Codec& codec, const std::vector<torch::Tensor>& images,
                                  std::vector<double> snr_list, FeatureExtractor& fe,
                                  const SweepOptions& options) {
  if (images.empty()) throw IngestError("sweep_snr: no evaluation images");
  if (snr_list.empty()) throw ConfigError("sweep_snr: empty SNR list");
  std::sort(snr_list.begin(), snr_list.end());
  std::vector<CurvePoint> out;
  for (std::size_t i = 0; i < snr_list.size(); ++i) {
    if (std::isnan(snr_list[i])) throw ConfigError("sweep_snr: NaN SNR");
    auto p = run_point(codec, images, snr_list[i], point_seed(options.seed, i), fe, options);
    p.axis = CurveAxis::SnrDb;
    p.x = snr_list[i];
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<CurvePoint> sweep_snr(const std::filesystem::path& checkpoint,
                                  const std::vector<torch::Tensor>& images, std::vector<double> snr_list,
                                  FeatureExtractor& fe, const SweepOptions& options,
                                  std::optional<Rational> expected_cbr) {
  auto model = load_model(checkpoint);
  if (expected_cbr && !(model.meta.cbr == *expected_cbr)) {
    throw ConfigError("checkpoint " + checkpoint.string() + " has CBR " + model.meta.cbr.str() +
                      ", requested " + expected_cbr->str());
  }
  return sweep_snr(model.codec, images, std::move(snr_list), fe, options);
}

std::vector<CurvePoint> sweep_cbr(const std::vector<std::filesystem::path>& checkpoints,
                                  const std::vector<torch::Tensor>& images, FeatureExtractor& fe,
                                  double snr_db, const SweepOptions& options) {
  if (checkpoints.empty()) throw ConfigError("sweep_cbr: no checkpoints given");
  if (images.empty()) throw IngestError("sweep_cbr: no evaluation images");
  std::vector<LoadedModel> models;
  for (const auto& path : checkpoints) {
    auto model = load_model(path);
    for (const auto& other : models) {
      if (other.meta.cbr == model.meta.cbr) {
        throw ConfigError("sweep_cbr: duplicate CBR " + model.meta.cbr.str() + " (" + path.string() + ")");
      }
    }
    models.push_back(std::move(model));
  }
  std::vector<CurvePoint> out;
  for (std::size_t i = 0; i < models.size(); ++i) {
    auto p = run_point(models[i].codec, images, snr_db, point_seed(options.seed, 0), fe, options);
    p.axis = CurveAxis::Cbr;
    p.x = p.cbr ? p.cbr->value() : models[i].meta.cbr.value();
    out.push_back(std::move(p));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.x < b.x; });
  return out;
}

std::string curve_csv_header() { return "scheme,x_kind,x,psnr_db,ms_ssim,lpips,dists,fid,n_images,seed"; }

std::string curve_to_csv(const std::vector<CurvePoint>& points) {
  std::ostringstream out;
  out << curve_csv_header() << '\n';
  for (const auto& p : points) {
    out << p.scheme << ',' << (p.axis == CurveAxis::SnrDb ? "snr_db" : "cbr") << ',' << format_number(p.x)
        << ',' << format_optional(p.y.psnr_db) << ',' << format_optional(p.y.ms_ssim) << ','
        << format_optional(p.y.lpips) << ',' << format_optional(p.y.dists) << ','
        << format_optional(p.y.fid) << ',' << p.y.n_images << ',' << p.seed << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const CurvePoint& p) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  return {{"scheme", p.scheme},
          {"x_kind", p.axis == CurveAxis::SnrDb ? "snr_db" : "cbr"},
          {"x", p.x},
          {"snr_db", std::isfinite(p.snr_db) ? nlohmann::json(p.snr_db) : nlohmann::json("inf")},
          {"cbr_realized", p.cbr ? nlohmann::json(p.cbr->str()) : nlohmann::json()},
          {"psnr_db", opt(p.y.psnr_db)},
          {"ms_ssim", opt(p.y.ms_ssim)},
          {"lpips", opt(p.y.lpips)},
          {"dists", opt(p.y.dists)},
          {"fid", opt(p.y.fid)},
          {"n_images", p.y.n_images},
          {"seed", p.seed}};
}

void write_curve(const std::filesystem::path& path, const std::vector<CurvePoint>& points,
                 const nlohmann::json& config) {
  write_file_atomic(path, curve_to_csv(points));
  nlohmann::json sidecar{{"config", config}, {"points", nlohmann::json::array()}};
  for (const auto& p : points) sidecar["points"].push_back(to_json(p));
  write_file_atomic(path.string() + ".json", sidecar.dump(2) + "\n");
}

std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != curve_csv_header()) {
    throw IngestError(path.string() + ": missing or unexpected curve CSV header");
  }
  std::vector<CurvePoint> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 10) throw IngestError(path.string() + ": row " + std::to_string(row) + " has wrong field count");
    auto opt = [](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return std::stod(s);
    };
    try {
      CurvePoint p;
      p.scheme = f[0];
      if (f[1] == "snr_db") {
        p.axis = CurveAxis::SnrDb;
      } else if (f[1] == "cbr") {
        p.axis = CurveAxis::Cbr;
      } else {
        throw IngestError("unknown x_kind '" + f[1] + "'");
      }
      p.x = std::stod(f[2]);
      if (p.axis == CurveAxis::SnrDb) p.snr_db = p.x;
      p.y.psnr_db = opt(f[3]);
      p.y.ms_ssim = opt(f[4]);
      p.y.lpips = opt(f[5]);
      p.y.dists = opt(f[6]);
      p.y.fid = opt(f[7]);
      p.y.n_images = std::stoll(f[8]);
      p.seed = std::stoull(f[9]);
      out.push_back(std::move(p));
    } catch (const std::logic_error& e) {
      throw IngestError(path.string() + ": row " + std::to_string(row) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace gjscc
