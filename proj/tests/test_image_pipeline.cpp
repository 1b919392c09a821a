#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "test_util.hpp"
#include "unetsr/error.hpp"
#include "unetsr/image.hpp"
#include "unetsr/pairs.hpp"
#include "unetsr/resample.hpp"

using namespace unetsr;
using unetsr::testing::kernel_sum_pixel;
using unetsr::testing::keys;
using unetsr::testing::random_tensor;
using unetsr::testing::read_bytes;
using unetsr::testing::ScratchDir;
namespace fs = std::filesystem;

namespace {

ImageBuf gradient_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  ImageBuf img(h, w);
  std::mt19937_64 rng(seed);
  for (auto& v : img.pixels) v = static_cast<double>(rng() % 256) / 255.0;
  return img;
}

// Minimal 24-bit bottom-up BMP writer.
void write_bmp(const fs::path& path, const std::vector<std::uint8_t>& rgb, int w, int h) {
  const int row = (3 * w + 3) / 4 * 4;
  const std::uint32_t size = 54 + static_cast<std::uint32_t>(row * h);
  std::string bytes(size, '\0');
  auto put32 = [&](std::size_t at, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) bytes[at + k] = static_cast<char>((v >> (8 * k)) & 0xff);
  };
  bytes[0] = 'B';
  bytes[1] = 'M';
  put32(2, size);
  put32(10, 54);
  put32(14, 40);
  put32(18, static_cast<std::uint32_t>(w));
  put32(22, static_cast<std::uint32_t>(h));
  bytes[26] = 1;
  bytes[28] = 24;
  for (int y = 0; y < h; ++y) {
    const std::size_t base = 54 + static_cast<std::size_t>((h - 1 - y) * row);
    for (int x = 0; x < w; ++x) {
      const std::size_t src = static_cast<std::size_t>((y * w + x) * 3);
      bytes[base + 3 * x + 0] = static_cast<char>(rgb[src + 2]);
      bytes[base + 3 * x + 1] = static_cast<char>(rgb[src + 1]);
      bytes[base + 3 * x + 2] = static_cast<char>(rgb[src + 0]);
    }
  }
  unetsr::testing::write_bytes(path, bytes);
}

}  // namespace

TEST(Bicubic, KernelProperties) {
  EXPECT_EQ(cubic_kernel(0.0), 1.0);
  EXPECT_EQ(cubic_kernel(1.0), 0.0);
  EXPECT_EQ(cubic_kernel(-2.0), 0.0);
  for (double t = -2.5; t <= 2.5; t += 0.125) EXPECT_NEAR(cubic_kernel(t), keys(t), 1e-15) << t;
}

TEST(Bicubic, ConstantPreservedAtAnySize) {
  const Tensor img(Shape{1, 3, 17, 23}, 0.3125);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{34, 46}, {5, 7}, {17, 23}, {1, 1},
                      {100, 3}, {9, 61}}) {
    const Tensor out = bicubic_resize(img, h, w);
    ASSERT_EQ(out.shape(), (Shape{1, 3, h, w}));
    for (double v : out.data()) EXPECT_NEAR(v, 0.3125, 1e-9);
  }
}

TEST(Bicubic, UpscaleReproducesLinearRampInInterior) {
  Tensor ramp(Shape{1, 1, 8, 16});
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 16; ++j) ramp.mutable_data()[i * 16 + j] = 0.25 * static_cast<double>(j) + 1.0;
  const Tensor up = bicubic_resize(ramp, 16, 32);
  // Output column x sits at source coordinate (x + 0.5) / 2 - 0.5.
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t x = 4; x < 28; ++x) {
      const double src = (static_cast<double>(x) + 0.5) / 2.0 - 0.5;
      EXPECT_NEAR(up.at(0, 0, i, x), 0.25 * src + 1.0, 1e-6);
    }
  }
}

TEST(Bicubic, DownscaleMatchesDirectKernelSum) {
  const Tensor img = random_tensor({1, 3, 224, 224}, 7, 0.0, 1.0);
  const Tensor out = bicubic_resize(img, 112, 112);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 112; y += 3) {
      for (std::size_t x = 0; x < 112; x += 1) {
        EXPECT_NEAR(out.at(0, c, y, x), kernel_sum_pixel(img, c, y, x, 112, 112), 1e-9);
      }
    }
  }
  // Border rows exercise clamping.
  for (std::size_t x = 0; x < 112; ++x) {
    EXPECT_NEAR(out.at(0, 0, 111, x), kernel_sum_pixel(img, 0, 111, x, 112, 112), 1e-9);
  }
}

TEST(Bicubic, NonIntegerRatiosMatchDirectKernelSum) {
  const Tensor img = random_tensor({1, 3, 13, 17}, 8, 0.0, 1.0);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{5, 29}, {31, 6}}) {
    const Tensor out = bicubic_resize(img, h, w);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          EXPECT_NEAR(out.at(0, c, y, x), kernel_sum_pixel(img, c, y, x, h, w), 1e-9);
  }
}

TEST(Bicubic, SameSizeIsIdentity) {
  const Tensor img = random_tensor({2, 3, 9, 12}, 9);
  const Tensor out = bicubic_resize(img, 9, 12);
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(out.data()[i], img.data()[i], 1e-9);
}

TEST(Bicubic, ZeroTargetRejected) {
  EXPECT_THROW(bicubic_resize(Tensor(Shape{1, 3, 4, 4}), 0, 4), ContractError);
  EXPECT_THROW(bicubic_resize(ImageBuf(4, 4), 4, 0), ContractError);
}

TEST(Bicubic, ImageBufOverloadMatchesTensor) {
  const ImageBuf img = gradient_image(10, 14, 3);
  const ImageBuf out = bicubic_resize(img, 20, 7);
  EXPECT_EQ(out.height, 20U);
  EXPECT_EQ(out.width, 7U);
  EXPECT_EQ(out.pixels, bicubic_resize(to_tensor(img), 20, 7).to_vector());
}

TEST(Conversion, EightBitRoundTripIsLossless) {
  const ImageBuf img = gradient_image(7, 9, 4);
  const ImageBuf back = from_tensor(to_tensor(img));
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Conversion, QuantisationRules) {
  EXPECT_EQ(quantize(1.5), 255);
  EXPECT_EQ(quantize(-0.2), 0);
  EXPECT_EQ(quantize(0.5), 128);
  EXPECT_EQ(quantize(1.0 / 255.0), 1);
  Tensor t(Shape{1, 3, 1, 1}, std::vector<double>{1.5, 0.5, -1.0});
  const ImageBuf img = from_tensor(t);
  EXPECT_EQ(img.pixels[0], 1.0);
  EXPECT_EQ(img.pixels[1], 128.0 / 255.0);
  EXPECT_EQ(img.pixels[2], 0.0);
}

TEST(Conversion, WrongShapeRejected) {
  EXPECT_THROW(from_tensor(Tensor(Shape{1, 1, 4, 4})), DimensionError);
}

TEST(Codec, PngRoundTrip) {
  ScratchDir dir("png");
  const ImageBuf img = gradient_image(6, 11, 5);
  encode_png(img, dir / "a.png");
  const ImageBuf back = decode_image(dir / "a.png");
  EXPECT_EQ(back.height, 6U);
  EXPECT_EQ(back.width, 11U);
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_EQ(back.source_path, dir / "a.png");
}

TEST(Codec, DecodesBmpChannelOrder) {
  ScratchDir dir("bmp");
  std::vector<std::uint8_t> rgb = {255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30};
  write_bmp(dir / "x.bmp", rgb, 2, 2);
  const ImageBuf img = decode_image(dir / "x.bmp");
  ASSERT_EQ(img.height, 2U);
  EXPECT_EQ(img.at(0, 0, 0), 1.0);
  EXPECT_EQ(img.at(1, 0, 0), 0.0);
  EXPECT_EQ(img.at(1, 0, 1), 1.0);
  EXPECT_EQ(img.at(2, 1, 0), 1.0);
  EXPECT_EQ(img.at(0, 1, 1), 10.0 / 255.0);
  EXPECT_EQ(img.at(2, 1, 1), 30.0 / 255.0);
}

TEST(Codec, DecodesJpegAndGreyscale) {
  ScratchDir dir("jpeg");
  cv::Mat grey(8, 8, CV_8UC1, cv::Scalar(77));
  cv::imwrite((dir / "g.jpg").string(), grey);
  const ImageBuf img = decode_image(dir / "g.jpg");
  EXPECT_EQ(img.pixels.size(), 3U * 64U);
  for (double v : img.pixels) EXPECT_NEAR(v * 255.0, 77.0, 2.0);
}

TEST(Codec, UndecodableFileRaisesIoErrorWithPath) {
  ScratchDir dir("bad");
  unetsr::testing::write_bytes(dir / "bad.png", "not an image");
  try {
    decode_image(dir / "bad.png");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.png"), std::string::npos);
  }
}

class PairGenTest : public ::testing::Test {
 protected:
  void SetUp() override {
    fs::create_directories(src_.path());
    encode_png(gradient_image(40, 60, 1), src_ / "b_scene.png");
    encode_png(gradient_image(33, 30, 2), src_ / "a_text.png");
    cv::Mat m(25, 31, CV_8UC3, cv::Scalar(10, 200, 90));
    cv::imwrite((src_ / "c_photo.jpg").string(), m);
    unetsr::testing::write_bytes(src_ / "notes.txt", "not an image");
  }

  ScratchDir src_{"pairs_src"};
  ScratchDir out_{"pairs_out"};
};

TEST_F(PairGenTest, TableSizesPerScale) {
  for (auto [scale, lr] : {std::pair<int, std::size_t>{2, 112}, {4, 56}, {8, 28}}) {
    const auto result = make_pairs(src_.path(), out_.path(), scale);
    ASSERT_EQ(result.manifest.size(), 3U);
    EXPECT_EQ(result.warnings.size(), 1U);
    EXPECT_EQ(result.manifest_path, out_.path() / ("x" + std::to_string(scale)) / "pairs.json");
    for (const auto& e : result.manifest.entries) {
      const ImageBuf l = decode_image(e.lr);
      const ImageBuf h = decode_image(e.hr);
      EXPECT_EQ(e.scale, scale);
      EXPECT_EQ(h.height, 224U);
      EXPECT_EQ(h.width, 224U);
      EXPECT_EQ(l.height, lr);
      EXPECT_EQ(l.width, lr);
      EXPECT_EQ(l.height * static_cast<std::size_t>(scale), h.height);
    }
  }
}

TEST_F(PairGenTest, ManifestSortedAndLayout) {
  const auto result = make_pairs(src_.path(), out_.path(), 4);
  const auto& e = result.manifest.entries;
  ASSERT_EQ(e.size(), 3U);
  EXPECT_EQ(e[0].hr.filename(), "a_text.png");
  EXPECT_EQ(e[1].hr.filename(), "b_scene.png");
  EXPECT_EQ(e[2].hr.filename(), "c_photo.png");
  EXPECT_TRUE(fs::exists(out_.path() / "hr" / "c_photo.png"));
  EXPECT_TRUE(fs::exists(out_.path() / "x4" / "lr" / "c_photo.png"));
  const std::string text = read_bytes(result.manifest_path);
  EXPECT_NE(text.find("\"../hr/a_text.png\""), std::string::npos);
  EXPECT_NE(text.find("\"lr/a_text.png\""), std::string::npos);
}

TEST_F(PairGenTest, RerunIsByteIdentical) {
  const auto first = make_pairs(src_.path(), out_.path(), 2);
  std::vector<std::string> before;
  for (const auto& e : first.manifest.entries) {
    before.push_back(read_bytes(e.lr) + read_bytes(e.hr));
  }
  const std::string manifest_before = read_bytes(first.manifest_path);
  const auto second = make_pairs(src_.path(), out_.path(), 2);
  EXPECT_EQ(read_bytes(second.manifest_path), manifest_before);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(read_bytes(second.manifest.entries[i].lr) + read_bytes(second.manifest.entries[i].hr),
              before[i]);
  }
}

TEST_F(PairGenTest, ManifestFileRoundTripsByteIdentically) {
  const auto result = make_pairs(src_.path(), out_.path(), 8);
  const PairManifest loaded = load_manifest(result.manifest_path);
  EXPECT_EQ(loaded.entries.size(), result.manifest.entries.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    EXPECT_TRUE(fs::equivalent(loaded.entries[i].lr, result.manifest.entries[i].lr));
    EXPECT_TRUE(fs::equivalent(loaded.entries[i].hr, result.manifest.entries[i].hr));
  }
  const fs::path copy = out_.path() / "x8" / "copy.json";
  save_manifest(loaded, copy);
  EXPECT_EQ(read_bytes(copy), read_bytes(result.manifest_path));
}

TEST_F(PairGenTest, BadScaleRejected) {
  EXPECT_THROW(make_pairs(src_.path(), out_.path(), 3), ConfigError);
}

TEST(PairGen, EmptyDirectoryIsError) {
  ScratchDir src("empty_src");
  ScratchDir out("empty_out");
  EXPECT_THROW(make_pairs(src.path(), out.path(), 2), IoError);
  EXPECT_THROW(make_pairs(src.path() / "missing", out.path(), 2), IoError);
}

TEST(Manifest, MalformedContentIsCorruptError) {
  ScratchDir dir("manifest");
  unetsr::testing::write_bytes(dir / "pairs.json", "[{\"lr\": 3}]");
  EXPECT_THROW(load_manifest(dir / "pairs.json"), CorruptFileError);
  unetsr::testing::write_bytes(dir / "pairs.json", "[{\"lr\": \"a\", \"hr\": \"b\", \"scale\": 5}]");
  EXPECT_THROW(load_manifest(dir / "pairs.json"), CorruptFileError);
  EXPECT_THROW(load_manifest(dir / "missing.json"), IoError);
}
