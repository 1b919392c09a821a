#pragma once

#include <cstddef>
#include <vector>

#include "unetsr/image.hpp"
#include "unetsr/tensor.hpp"

namespace unetsr {

/// Coefficient of the cubic convolution kernel (Catmull-Rom family).
inline constexpr double kCubicA = -0.5;

/// Cubic convolution kernel value at offset `t` (support |t| < 2).
double cubic_kernel(double t, double a = kCubicA);

/// One output sample along an axis: clamped source indices and normalised
/// weights.
struct ResampleTaps {
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

/// Taps for resampling an axis of `in` samples to `out` samples. Pixel
/// centres are aligned ((o + 0.5) * in / out - 0.5). When shrinking, the
/// kernel is stretched by in / out so it also low-passes. Weights are
/// normalised to sum to one.
std::vector<ResampleTaps> resample_taps(std::size_t in, std::size_t out, double a = kCubicA);

/// Separable bicubic resize of every N, C plane of a rank-4 tensor.
/// Not recorded on the gradient tape. Throws ContractError on a zero extent.
Tensor bicubic_resize(const Tensor& image, std::size_t out_h, std::size_t out_w);

ImageBuf bicubic_resize(const ImageBuf& image, std::size_t out_h, std::size_t out_w);

}  // namespace unetsr
