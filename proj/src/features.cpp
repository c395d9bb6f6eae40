#include "gjscc/features.hpp"

#include "gjscc/error.hpp"
#include "gjscc/seeding.hpp"

namespace gjscc {

namespace F = torch::nn::functional;

namespace {

constexpr std::int64_t kTaps = 5;

torch::nn::Conv2dOptions alexnet_conv(std::size_t i, std::int64_t in, std::int64_t out) {
  switch (i) {
    case 0: return torch::nn::Conv2dOptions(in, out, 11).stride(4).padding(2);
    case 1: return torch::nn::Conv2dOptions(in, out, 5).padding(2);
    default: return torch::nn::Conv2dOptions(in, out, 3).padding(1);
  }
}

}  // namespace

torch::Tensor FeatureExtractor::embed(const torch::Tensor& images) {
  auto maps = taps(images);
  return maps.back().mean({2, 3});
}

AlexNetFeatures::AlexNetFeatures(AlexNetConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.widths.size() != kTaps) throw ConfigError("alexnet: exactly five widths required");
  std::int64_t in = 3;
  for (std::size_t i = 0; i < kTaps; ++i) {
    convs_.emplace_back(alexnet_conv(i, in, cfg_.widths[i]));
    in = cfg_.widths[i];
  }
  shift_ = torch::tensor({-0.030, -0.088, -0.188}, torch::kFloat32).view({1, 3, 1, 1});
  scale_ = torch::tensor({0.458, 0.448, 0.450}, torch::kFloat32).view({1, 3, 1, 1});
}

std::unique_ptr<AlexNetFeatures> AlexNetFeatures::random(std::uint64_t seed, AlexNetConfig cfg) {
  auto fe = with_seed(seed, [&] { return std::unique_ptr<AlexNetFeatures>(new AlexNetFeatures(cfg)); });
  for (auto w : fe->cfg_.widths) {
    fe->lin_.push_back(torch::full({w}, 1.0 / static_cast<double>(kTaps)));
  }
  fe->set_uniform_dists_weights();
  fe->name_ = "alexnet-random:" + std::to_string(seed);
  fe->freeze();
  return fe;
}

void AlexNetFeatures::set_uniform_dists_weights() {
  std::int64_t total = 3;
  for (auto w : cfg_.widths) total += w;
  const double each = 1.0 / (2.0 * static_cast<double>(total));
  alpha_.clear();
  beta_.clear();
  alpha_.push_back(torch::full({3}, each));
  beta_.push_back(torch::full({3}, each));
  for (auto w : cfg_.widths) {
    alpha_.push_back(torch::full({w}, each));
    beta_.push_back(torch::full({w}, each));
  }
}

std::unique_ptr<AlexNetFeatures> AlexNetFeatures::from_file(const std::filesystem::path& path) {
  const auto archive = TensorArchive::load(path);
  AlexNetConfig cfg;
  for (std::size_t i = 0; i < kTaps; ++i) {
    const auto& w = archive.get("conv" + std::to_string(i) + ".weight");
    if (w.dim() != 4) throw IngestError("alexnet weights: conv" + std::to_string(i) + " is not 4-D");
    cfg.widths[i] = w.size(0);
  }
  if (archive.meta().contains("layers")) {
    for (const auto& layer : archive.meta().at("layers")) {
      const auto name = layer.at("name").get<std::string>();
      const auto shape = layer.at("shape").get<std::vector<std::int64_t>>();
      if (archive.get(name).sizes().vec() != shape) {
        throw IngestError("alexnet weights: manifest shape mismatch for " + name);
      }
    }
  }
  auto fe = std::unique_ptr<AlexNetFeatures>(new AlexNetFeatures(cfg));
  {
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < kTaps; ++i) {
      const auto prefix = "conv" + std::to_string(i);
      const auto& w = archive.get(prefix + ".weight");
      const auto& b = archive.get(prefix + ".bias");
      if (w.sizes() != fe->convs_[i]->weight.sizes() || b.sizes() != fe->convs_[i]->bias.sizes()) {
        throw IngestError("alexnet weights: " + prefix + " does not fit the AlexNet topology");
      }
      fe->convs_[i]->weight.copy_(w);
      fe->convs_[i]->bias.copy_(b);
      auto lin = archive.get("lin" + std::to_string(i)).to(torch::kFloat32).reshape({-1});
      if (lin.size(0) != cfg.widths[i]) throw IngestError("alexnet weights: lin width mismatch");
      if ((lin < 0).any().item<bool>()) throw IngestError("alexnet weights: negative LPIPS weight");
      fe->lin_.push_back(lin);
    }
  }
  if (archive.contains("dists.alpha0")) {
    for (std::size_t i = 0; i <= kTaps; ++i) {
      fe->alpha_.push_back(archive.get("dists.alpha" + std::to_string(i)).to(torch::kFloat32).reshape({-1}));
      fe->beta_.push_back(archive.get("dists.beta" + std::to_string(i)).to(torch::kFloat32).reshape({-1}));
    }
  } else {
    fe->set_uniform_dists_weights();
  }
  fe->name_ = "alexnet-file:" + path.string();
  fe->freeze();
  return fe;
}

TensorArchive AlexNetFeatures::to_archive() const {
  TensorArchive archive;
  nlohmann::json layers = nlohmann::json::array();
  auto add = [&](const std::string& name, const torch::Tensor& t) {
    archive.put(name, t.to(torch::kFloat32));
    layers.push_back({{"name", name}, {"shape", t.sizes().vec()}});
  };
  for (std::size_t i = 0; i < kTaps; ++i) {
    add("conv" + std::to_string(i) + ".weight", convs_[i]->weight);
    add("conv" + std::to_string(i) + ".bias", convs_[i]->bias);
    add("lin" + std::to_string(i), lin_[i]);
  }
  for (std::size_t i = 0; i < alpha_.size(); ++i) {
    add("dists.alpha" + std::to_string(i), alpha_[i]);
    add("dists.beta" + std::to_string(i), beta_[i]);
  }
  archive.meta()["kind"] = "alexnet-lpips";
  archive.meta()["layers"] = layers;
  return archive;
}

void AlexNetFeatures::freeze() {
  for (auto& c : convs_) {
    for (auto& p : c->parameters()) p.set_requires_grad(false);
    c->eval();
  }
}

void AlexNetFeatures::to(torch::ScalarType dtype) {
  for (auto& c : convs_) c->to(dtype);
  for (auto& t : lin_) t = t.to(dtype);
  for (auto& t : alpha_) t = t.to(dtype);
  for (auto& t : beta_) t = t.to(dtype);
  shift_ = shift_.to(dtype);
  scale_ = scale_.to(dtype);
}

std::vector<torch::Tensor> AlexNetFeatures::taps(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw ShapeError("feature extractor expects [N,3,H,W]");
  }
  if (images.size(2) < min_input_size() || images.size(3) < min_input_size()) {
    throw ShapeError("feature extractor needs inputs of at least " +
                     std::to_string(min_input_size()) + " pixels per side");
  }
  auto h = ((images * 2.0 - 1.0) - shift_) / scale_;
  std::vector<torch::Tensor> out;
  out.reserve(kTaps);
  for (std::size_t i = 0; i < kTaps; ++i) {
    if (i == 1 || i == 2) h = F::max_pool2d(h, F::MaxPool2dFuncOptions(3).stride(2));
    h = torch::relu(convs_[i]->forward(h));
    out.push_back(h);
  }
  return out;
}

TorchScriptFeatures::TorchScriptFeatures(const std::filesystem::path& path) : path_(path.string()) {
  try {
    module_ = torch::jit::load(path_);
  } catch (const c10::Error& e) {
    throw IngestError("cannot load TorchScript feature module " + path_ + ": " + e.what_without_backtrace());
  }
  module_.eval();
  for (auto p : module_.parameters()) p.set_requires_grad(false);
}

torch::IValue TorchScriptFeatures::run(const torch::Tensor& images) {
  return module_.forward({images.to(dtype_)});
}

std::vector<torch::Tensor> TorchScriptFeatures::taps(const torch::Tensor& images) {
  auto result = run(images);
  std::vector<torch::Tensor> out;
  if (result.isTuple()) {
    for (const auto& v : result.toTuple()->elements()) out.push_back(v.toTensor());
  } else if (result.isTensorList()) {
    for (const auto& t : result.toTensorVector()) out.push_back(t);
  } else if (result.isList()) {
    for (const auto& v : result.toList()) out.push_back(v.get().toTensor());
  } else {
    throw ShapeError("TorchScript feature module " + path_ + " returns no tap list");
  }
  if (channels_.empty()) {
    for (const auto& t : out) channels_.push_back(t.size(1));
  }
  return out;
}

torch::Tensor TorchScriptFeatures::embed(const torch::Tensor& images) {
  auto result = run(images);
  if (result.isTensor()) {
    auto t = result.toTensor();
    return t.reshape({t.size(0), -1});
  }
  return FeatureExtractor::embed(images);
}

std::vector<torch::Tensor> TorchScriptFeatures::lpips_weights() const {
  if (channels_.empty()) throw Error("TorchScriptFeatures: call taps() before requesting weights");
  std::vector<torch::Tensor> w;
  for (auto c : channels_) w.push_back(torch::full({c}, 1.0 / channels_.size(), dtype_));
  return w;
}

std::vector<torch::Tensor> TorchScriptFeatures::dists_alpha() const {
  if (channels_.empty()) throw Error("TorchScriptFeatures: call taps() before requesting weights");
  std::int64_t total = 3;
  for (auto c : channels_) total += c;
  std::vector<torch::Tensor> w{torch::full({3}, 0.5 / total, dtype_)};
  for (auto c : channels_) w.push_back(torch::full({c}, 0.5 / total, dtype_));
  return w;
}

std::vector<torch::Tensor> TorchScriptFeatures::dists_beta() const { return dists_alpha(); }

void TorchScriptFeatures::to(torch::ScalarType dtype) {
  dtype_ = dtype;
  module_.to(dtype);
}

std::unique_ptr<FeatureExtractor> make_feature_extractor(const FeatureSpec& spec) {
  if (spec.kind == "alexnet-random") return AlexNetFeatures::random(spec.seed, spec.alexnet);
  if (spec.kind == "alexnet-file") return AlexNetFeatures::from_file(spec.path);
  if (spec.kind == "torchscript") return std::make_unique<TorchScriptFeatures>(spec.path);
  throw ConfigError("unknown feature extractor kind '" + spec.kind + "'");
}

}  // namespace gjscc
