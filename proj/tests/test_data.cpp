#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "gjscc/data.hpp"
#include "gjscc/error.hpp"
#include "test_support.hpp"

using namespace gjscc;
using testing_support::TempDir;
namespace fs = std::filesystem;

TEST(Images, PngRoundTripIsExactOn8BitValues) {
  TempDir dir("img");
  auto x = torch::randint(0, 256, {3, 17, 23}).to(torch::kFloat32) / 255.0;
  save_image(x, dir / "x.png");
  auto y = load_image(dir / "x.png");
  EXPECT_EQ(y.sizes(), x.sizes());
  EXPECT_LT((x - y).abs().max().item<float>(), 1e-6);
}

TEST(Images, Rgb8Conversion) {
  std::vector<std::uint8_t> rgb{255, 0, 0, 0, 255, 0};
  auto img = image_from_rgb8(rgb.data(), 1, 2);
  EXPECT_EQ(img[0][0][0].item<float>(), 1.0f);
  EXPECT_EQ(img[1][0][1].item<float>(), 1.0f);
  EXPECT_EQ(image_to_rgb8(img), rgb);
}

TEST(Images, UnreadableFileNamesThePath) {
  TempDir dir("bad");
  std::ofstream(dir / "broken.png") << "garbage";
  try {
    load_image(dir / "broken.png");
    FAIL();
  } catch (const IngestError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.png"), std::string::npos);
  }
}

TEST(Crops, UniformCropsAndUndersizedSkip) {
  auto img = torch::rand({3, 40, 50});
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    auto c = random_crop(img, 32, rng);
    ASSERT_TRUE(c.has_value());
    EXPECT_EQ(c->sizes(), (std::vector<std::int64_t>{3, 32, 32}));
  }
  EXPECT_FALSE(random_crop(img, 41, rng).has_value());
  std::mt19937_64 a(5), b(5);
  EXPECT_TRUE(torch::equal(*random_crop(img, 16, a), *random_crop(img, 16, b)));
}

TEST(Tiling, CountsAndOrder) {
  EXPECT_EQ(count_patches(512, 768), 6);
  EXPECT_EQ(count_patches(768, 512), 6);
  EXPECT_EQ(count_patches(255, 1000), 0);
  auto img = torch::arange(3 * 4 * 6, torch::kFloat32).view({3, 4, 6});
  auto tiles = tile_patches(img, 2);
  ASSERT_EQ(tiles.size(), 6u);
  EXPECT_TRUE(torch::equal(tiles[1], img.narrow(1, 0, 2).narrow(2, 2, 2)));
  EXPECT_TRUE(torch::equal(tiles[3], img.narrow(1, 2, 2).narrow(2, 0, 2)));
}

TEST(Tiling, KodakShapedSetYields144) {
  std::int64_t total = 0;
  for (int i = 0; i < 24; ++i) total += (i % 5 == 0) ? count_patches(768, 512) : count_patches(512, 768);
  EXPECT_EQ(total, 144);
}

namespace {

std::int64_t count_dir_patches(const fs::path& root) {
  std::int64_t total = 0;
  for (const auto& p : list_images(DatasetSpec{root})) {
    auto img = load_image(p);
    total += static_cast<std::int64_t>(tile_patches(img).size());
  }
  return total;
}

}  // namespace

TEST(Tiling, KodakDataset) {
  const char* dir = std::getenv("GJSCC_KODAK_DIR");
  if (!dir) GTEST_SKIP() << "GJSCC_KODAK_DIR not set";
  EXPECT_EQ(count_dir_patches(dir), 144);
}

TEST(Tiling, ClicTestDataset) {
  const char* dir = std::getenv("GJSCC_CLIC_DIR");
  if (!dir) GTEST_SKIP() << "GJSCC_CLIC_DIR not set";
  EXPECT_EQ(count_dir_patches(dir), 2155);
}

TEST(Dataset, ListingAndManifest) {
  TempDir dir("ds");
  write_synthetic_dataset(dir.path(), 3, 40, 40, 1);
  fs::create_directories(dir / "sub");
  save_image(torch::rand({3, 8, 8}), dir / "sub" / "z.png");
  std::ofstream(dir / "notes.txt") << "x";
  auto all = list_images(DatasetSpec{dir.path()});
  ASSERT_EQ(all.size(), 4u);
  EXPECT_EQ(all.front().filename(), "img_000.png");
  std::ofstream(dir / "manifest.txt") << "# subset\nimg_002.png\nimg_000.png\n";
  auto listed = list_images(DatasetSpec{dir.path()});
  ASSERT_EQ(listed.size(), 2u);
  EXPECT_EQ(listed[0].filename(), "img_002.png");
  EXPECT_THROW(list_images(DatasetSpec{dir / "missing"}), IngestError);
}

TEST(Dataset, FolderBatches) {
  TempDir dir("batch");
  write_synthetic_dataset(dir.path(), 5, 48, 64, 2);
  save_image(torch::rand({3, 20, 20}), dir / "small.png");
  ImageFolder folder(DatasetSpec{dir.path()});
  EXPECT_EQ(folder.size(), 6u);
  std::mt19937_64 rng(3);
  auto batch = folder.next_batch(8, 32, rng);
  EXPECT_EQ(batch.sizes(), (std::vector<std::int64_t>{8, 3, 32, 32}));
  EXPECT_GE(batch.min().item<float>(), 0.0f);
  EXPECT_LE(batch.max().item<float>(), 1.0f);
  std::mt19937_64 r1(9), r2(9);
  EXPECT_TRUE(torch::equal(folder.next_batch(2, 16, r1), folder.next_batch(2, 16, r2)));
}

TEST(Synthetic, DeterministicAndTextured) {
  auto a = synthesize_image(64, 96, 4);
  auto b = synthesize_image(64, 96, 4);
  auto c = synthesize_image(64, 96, 5);
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_FALSE(torch::equal(a, c));
  EXPECT_EQ(a.sizes(), (std::vector<std::int64_t>{3, 64, 96}));
  EXPECT_GT(a.std().item<float>(), 0.05f);
}
