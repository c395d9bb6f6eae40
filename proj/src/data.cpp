#include "gjscc/data.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gjscc/error.hpp"
#include "gjscc/log.hpp"

namespace gjscc {

namespace fs = std::filesystem;

torch::Tensor image_from_rgb8(const std::uint8_t* data, std::int64_t height, std::int64_t width) {
  auto hwc = torch::from_blob(const_cast<std::uint8_t*>(data), {height, width, 3}, torch::kUInt8);
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

std::vector<std::uint8_t> image_to_rgb8(const torch::Tensor& image) {
  auto img = image.dim() == 4 ? image.squeeze(0) : image;
  if (img.dim() != 3 || img.size(0) != 3) throw ShapeError("expected an image [3,H,W]");
  auto bytes = img.detach().to(torch::kCPU).to(torch::kFloat64).clamp(0.0, 1.0).mul(255.0).round()
                   .to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  const auto* p = bytes.data_ptr<std::uint8_t>();
  return std::vector<std::uint8_t>(p, p + bytes.numel());
}

torch::Tensor load_image(const fs::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw IngestError("cannot decode image " + path.string() + ": " + e.what());
  }
  if (bgr.empty()) throw IngestError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (!rgb.isContinuous()) rgb = rgb.clone();
  return image_from_rgb8(rgb.data, rgb.rows, rgb.cols);
}

void save_image(const torch::Tensor& image, const fs::path& path) {
  auto img = image.dim() == 4 ? image.squeeze(0) : image;
  auto bytes = image_to_rgb8(img);
  cv::Mat rgb(static_cast<int>(img.size(1)), static_cast<int>(img.size(2)), CV_8UC3, bytes.data());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw Error("cannot write image " + path.string());
}

std::optional<torch::Tensor> random_crop(const torch::Tensor& image, std::int64_t size,
                                         std::mt19937_64& rng) {
  using torch::indexing::Slice;
  const auto h = image.size(-2);
  const auto w = image.size(-1);
  if (h < size || w < size) {
    log::warn("random_crop: skipping ", h, "x", w, " image smaller than crop ", size);
    return std::nullopt;
  }
  std::uniform_int_distribution<std::int64_t> dy(0, h - size);
  std::uniform_int_distribution<std::int64_t> dx(0, w - size);
  const auto y = dy(rng);
  const auto x = dx(rng);
  return image.index({Slice(), Slice(y, y + size), Slice(x, x + size)});
}

std::int64_t count_patches(std::int64_t height, std::int64_t width, std::int64_t size) {
  if (size <= 0) throw ConfigError("patch size must be positive");
  return (height / size) * (width / size);
}

std::vector<torch::Tensor> tile_patches(const torch::Tensor& image, std::int64_t size) {
  using torch::indexing::Slice;
  const auto rows = image.size(-2) / size;
  const auto cols = image.size(-1) / size;
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      out.push_back(image.index({Slice(), Slice(r * size, (r + 1) * size), Slice(c * size, (c + 1) * size)}));
    }
  }
  return out;
}

std::vector<fs::path> list_images(const DatasetSpec& spec) {
  if (!fs::is_directory(spec.root)) {
    throw IngestError("dataset root " + spec.root.string() + " is not a directory");
  }
  std::vector<fs::path> out;
  auto manifest = spec.manifest;
  if (!manifest && fs::exists(spec.root / "manifest.txt")) manifest = spec.root / "manifest.txt";
  if (manifest) {
    std::ifstream in(*manifest);
    if (!in) throw IngestError("cannot read manifest " + manifest->string());
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      out.push_back(spec.root / line);
    }
    return out;
  }
  for (const auto& entry : fs::recursive_directory_iterator(spec.root)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

ImageFolder::ImageFolder(const DatasetSpec& spec) {
  for (const auto& path : list_images(spec)) {
    images_.push_back(load_image(path));
    names_.push_back(fs::relative(path, spec.root).string());
  }
  if (images_.empty()) throw IngestError("dataset " + spec.root.string() + " contains no images");
}

ImageFolder::ImageFolder(std::vector<torch::Tensor> images, std::vector<std::string> names)
    : images_(std::move(images)), names_(std::move(names)) {
  if (names_.empty()) {
    for (std::size_t i = 0; i < images_.size(); ++i) names_.push_back("image_" + std::to_string(i));
  }
  if (names_.size() != images_.size()) throw ConfigError("ImageFolder: names/images size mismatch");
}

torch::Tensor ImageFolder::next_batch(std::int64_t batch, std::int64_t crop, std::mt19937_64& rng) {
  if (images_.empty()) throw IngestError("ImageFolder is empty");
  std::vector<torch::Tensor> crops;
  std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
  std::size_t attempts = 0;
  const std::size_t max_attempts = static_cast<std::size_t>(batch) * 16 + images_.size();
  while (static_cast<std::int64_t>(crops.size()) < batch) {
    if (++attempts > max_attempts) {
      throw IngestError("ImageFolder: no image is large enough for " + std::to_string(crop) + " crops");
    }
    if (auto c = random_crop(images_[pick(rng)], crop, rng)) crops.push_back(*c);
  }
  return torch::stack(crops);
}

torch::Tensor synthesize_image(std::int64_t height, std::int64_t width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int h = static_cast<int>(height);
  const int w = static_cast<int>(width);

  cv::Mat img(h, w, CV_32FC3);
  // Smooth two-colour gradient background.
  const cv::Vec3f c0(u(rng), u(rng), u(rng));
  const cv::Vec3f c1(u(rng), u(rng), u(rng));
  const double angle = u(rng) * 2.0 * M_PI;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double t = 0.5 + 0.5 * ((x - w / 2.0) * ca + (y - h / 2.0) * sa) / (0.5 * std::hypot(w, h));
      img.at<cv::Vec3f>(y, x) = c0 * static_cast<float>(1.0 - t) + c1 * static_cast<float>(t);
    }
  }

  const int shapes = 6 + static_cast<int>(u(rng) * 10);
  const double scale = std::min(h, w);
  for (int i = 0; i < shapes; ++i) {
    const cv::Scalar colour(u(rng), u(rng), u(rng));
    const cv::Point centre(static_cast<int>(u(rng) * w), static_cast<int>(u(rng) * h));
    const int kind = static_cast<int>(u(rng) * 3);
    if (kind == 0) {
      const cv::Size axes(static_cast<int>(scale * (0.05 + 0.25 * u(rng))),
                          static_cast<int>(scale * (0.05 + 0.25 * u(rng))));
      cv::ellipse(img, centre, axes, u(rng) * 180.0, 0.0, 360.0, colour, cv::FILLED, cv::LINE_AA);
    } else if (kind == 1) {
      const cv::Point corner(centre.x + static_cast<int>(scale * (u(rng) - 0.5) * 0.6),
                             centre.y + static_cast<int>(scale * (u(rng) - 0.5) * 0.6));
      cv::rectangle(img, centre, corner, colour, cv::FILLED, cv::LINE_AA);
    } else {
      const cv::Point end(static_cast<int>(u(rng) * w), static_cast<int>(u(rng) * h));
      cv::line(img, centre, end, colour, 1 + static_cast<int>(u(rng) * scale * 0.03), cv::LINE_AA);
    }
  }

  // Oriented grating inside a random disc, giving periodic texture.
  {
    const double freq = 0.15 + 0.5 * u(rng);
    const double theta = u(rng) * M_PI;
    const double cx = u(rng) * w, cy = u(rng) * h, radius = scale * (0.15 + 0.3 * u(rng));
    const float amp = static_cast<float>(0.15 + 0.2 * u(rng));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (std::hypot(x - cx, y - cy) > radius) continue;
        const float g = amp * static_cast<float>(std::sin(freq * (x * std::cos(theta) + y * std::sin(theta))));
        img.at<cv::Vec3f>(y, x) += cv::Vec3f(g, g, g);
      }
    }
  }

  // Fine-grained noise texture.
  std::normal_distribution<float> n(0.0f, 0.03f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = n(rng);
      img.at<cv::Vec3f>(y, x) += cv::Vec3f(v, v, v);
    }
  }

  cv::Mat clipped;
  cv::min(cv::max(img, 0.0), 1.0, clipped);
  auto t = torch::from_blob(clipped.data, {height, width, 3}, torch::kFloat32).clone();
  // Quantize so the image survives an 8-bit round trip unchanged.
  return t.permute({2, 0, 1}).mul(255.0).round().div(255.0).contiguous();
}

void write_synthetic_dataset(const fs::path& dir, std::size_t count, std::int64_t height,
                             std::int64_t width, std::uint64_t seed) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03zu.png", i);
    save_image(synthesize_image(height, width, seed * 1000003ULL + i), dir / name);
  }
}

}  // namespace gjscc
