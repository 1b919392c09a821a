#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unetsr/tensor.hpp"

namespace unetsr {

/// Decoded RGB raster. Values are planar (channel, row, column) in [0, 1].
struct ImageBuf {
  static constexpr std::size_t kChannels = 3;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
  std::filesystem::path source_path;

  ImageBuf() = default;
  ImageBuf(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), pixels(kChannels * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return pixels[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
};

/// Clamps to [0, 1], scales by 255 and rounds half away from zero.
std::uint8_t quantize(double value);

/// Decodes PNG, JPEG or BMP into RGB. Grey images are expanded to three
/// channels and alpha is dropped. Throws IoError with the path on failure.
ImageBuf decode_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG (values quantised via `quantize`).
void encode_png(const ImageBuf& image, const std::filesystem::path& path);

/// 1 x 3 x H x W tensor with the image's [0, 1] values.
Tensor to_tensor(const ImageBuf& image);

/// Quantises a 1 x 3 x H x W tensor to 8 bits; the returned buffer holds
/// k / 255 values.
ImageBuf from_tensor(const Tensor& tensor);

}  // namespace unetsr
