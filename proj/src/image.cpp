#include "unetsr/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "unetsr/error.hpp"

namespace unetsr {

std::uint8_t quantize(double value) {
  const double clamped = std::clamp(value, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::round(clamped * 255.0));
}

ImageBuf decode_image(const std::filesystem::path& path) {
  cv::Mat raw;
  try {
    raw = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode " + path.string() + ": " + e.what());
  }
  if (raw.empty() || raw.depth() != CV_8U || raw.channels() != 3) {
    throw IoError("cannot decode " + path.string());
  }
  ImageBuf img(static_cast<std::size_t>(raw.rows), static_cast<std::size_t>(raw.cols));
  img.source_path = path;
  for (int y = 0; y < raw.rows; ++y) {
    const auto* row = raw.ptr<cv::Vec3b>(y);
    for (int x = 0; x < raw.cols; ++x) {
      // OpenCV stores BGR.
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            static_cast<double>(row[x][static_cast<int>(2 - c)]) / 255.0;
      }
    }
  }
  return img;
}

void encode_png(const ImageBuf& image, const std::filesystem::path& path) {
  if (image.pixels.size() != ImageBuf::kChannels * image.height * image.width) {
    throw ContractError("encode_png: pixel buffer does not match " +
                        std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  cv::Mat out(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3);
  for (std::size_t y = 0; y < image.height; ++y) {
    auto* row = out.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        row[x][static_cast<int>(2 - c)] = quantize(image.at(c, y, x));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), out, {cv::IMWRITE_PNG_COMPRESSION, 6});
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

Tensor to_tensor(const ImageBuf& image) {
  return Tensor(Shape{1, ImageBuf::kChannels, image.height, image.width}, image.pixels);
}

ImageBuf from_tensor(const Tensor& tensor) {
  if (tensor.rank() != 4 || tensor.dim(0) != 1 || tensor.dim(1) != ImageBuf::kChannels) {
    throw DimensionError("from_tensor", "shape",
                         "expected 1 x 3 x H x W, got " + shape_string(tensor.shape()));
  }
  ImageBuf img(tensor.dim(2), tensor.dim(3));
  const auto src = tensor.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    img.pixels[i] = static_cast<double>(quantize(src[i])) / 255.0;
  }
  return img;
}

}  // namespace unetsr
