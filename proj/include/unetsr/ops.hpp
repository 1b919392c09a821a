#pragma once

#include <cstddef>

#include "unetsr/tensor.hpp"

/// Differentiable tensor operations. Every op validates extents and throws
/// `DimensionError` naming the offending axis.
namespace unetsr::ops {

enum class PadMode { zero, replicate };

struct Padding2d {
  std::size_t top = 0;
  std::size_t bottom = 0;
  std::size_t left = 0;
  std::size_t right = 0;

  static constexpr Padding2d uniform(std::size_t p) { return {p, p, p, p}; }
};

struct Conv2dOptions {
  std::size_t stride = 1;
  Padding2d padding{};
  PadMode pad_mode = PadMode::zero;
};

/// 2-D cross-correlation (no kernel flip) of an N x Cin x H x W input with a
/// Cout x Cin x kh x kw weight. `bias` may be undefined. Output extents are
/// (H + pad_top + pad_bottom - kh) / stride + 1, likewise for W.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& options);
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding, PadMode pad_mode = PadMode::zero);

/// 2x2 max pooling, stride 2. Ties route the gradient to the first element in
/// scan order.
Tensor maxpool2x2(const Tensor& input);

/// Nearest-neighbour 2x upsampling.
Tensor upsample_nearest2x(const Tensor& input);

/// max(0, x); gradient is zero at x == 0.
Tensor relu(const Tensor& input);

Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Spatial window [top, top+height) x [left, left+width) of a rank-4 tensor.
Tensor crop(const Tensor& input, std::size_t top, std::size_t left, std::size_t height,
            std::size_t width);

/// Spatial padding of a rank-4 tensor.
Tensor pad(const Tensor& input, const Padding2d& padding, PadMode mode);

/// Same values, new extents with equal element count.
Tensor reshape(const Tensor& input, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor square(const Tensor& x);
/// sqrt(x + eps); finite derivative at x == 0 for eps > 0.
Tensor sqrt_eps(const Tensor& x, double eps);
Tensor scalar_mul(const Tensor& x, double s);
/// Mean over every element, returned as a rank-0 tensor.
Tensor mean_all(const Tensor& x);

}  // namespace unetsr::ops
