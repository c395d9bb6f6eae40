#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace gjscc {

// Images are float tensors [3,H,W] with values in [0,1]; batches are [N,3,H,W].

/// Decodes an 8-bit PNG/JPEG (grey images are expanded to RGB).
/// Throws IngestError naming the file when decoding fails.
torch::Tensor load_image(const std::filesystem::path& path);

/// Clamps to [0,1], rounds to 8 bits and writes a PNG.
void save_image(const torch::Tensor& image, const std::filesystem::path& path);

/// Converts to/from interleaved 8-bit RGB (H*W*3 bytes).
torch::Tensor image_from_rgb8(const std::uint8_t* data, std::int64_t height, std::int64_t width);
std::vector<std::uint8_t> image_to_rgb8(const torch::Tensor& image);

/// Uniform axis-aligned size x size crop. Returns nullopt (and logs a warning)
/// when the image is smaller than `size` in either dimension.
std::optional<torch::Tensor> random_crop(const torch::Tensor& image, std::int64_t size,
                                         std::mt19937_64& rng);

/// floor(H/size) x floor(W/size) non-overlapping tiles in row-major order;
/// remainder pixels are dropped.
std::vector<torch::Tensor> tile_patches(const torch::Tensor& image, std::int64_t size = 256);

/// Number of tiles tile_patches would return, without touching pixels.
std::int64_t count_patches(std::int64_t height, std::int64_t width, std::int64_t size = 256);

enum class Split { Train, Eval };

struct DatasetSpec {
  std::filesystem::path root;
  Split split = Split::Train;
  /// Line-delimited paths relative to root. Defaults to root/manifest.txt when
  /// present, otherwise every .png/.jpg/.jpeg under root (sorted).
  std::optional<std::filesystem::path> manifest;
};

std::vector<std::filesystem::path> list_images(const DatasetSpec& spec);

/// Anything that can hand the trainer a batch of crops.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  /// [batch, 3, crop, crop]. Draws only from `rng`.
  virtual torch::Tensor next_batch(std::int64_t batch, std::int64_t crop, std::mt19937_64& rng) = 0;
};

/// Decoded images held in memory.
class ImageFolder : public BatchSource {
 public:
  explicit ImageFolder(const DatasetSpec& spec);
  explicit ImageFolder(std::vector<torch::Tensor> images, std::vector<std::string> names = {});

  std::size_t size() const { return images_.size(); }
  const torch::Tensor& image(std::size_t i) const { return images_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<torch::Tensor>& images() const { return images_; }

  /// Picks images uniformly with replacement and crops each; images smaller
  /// than the crop are skipped with a warning.
  torch::Tensor next_batch(std::int64_t batch, std::int64_t crop, std::mt19937_64& rng) override;

 private:
  std::vector<torch::Tensor> images_;
  std::vector<std::string> names_;
};

/// Deterministic procedural test image: smooth background, filled shapes,
/// oriented gratings and fine noise texture.
torch::Tensor synthesize_image(std::int64_t height, std::int64_t width, std::uint64_t seed);

/// Writes `count` synthetic PNGs named img_000.png ... into `dir`.
void write_synthetic_dataset(const std::filesystem::path& dir, std::size_t count,
                             std::int64_t height, std::int64_t width, std::uint64_t seed);

}  // namespace gjscc
