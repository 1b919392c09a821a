#include "unetsr/loss.hpp"

#include <cmath>
#include <cstddef>

#include "unetsr/error.hpp"
#include "unetsr/ops.hpp"

namespace unetsr {

namespace {

// 1-2-1 smoothing of a padded tensor along one spatial axis, dropping the
// two border samples of that axis.
Tensor smooth_rows(const Tensor& padded) {
  const std::size_t h = padded.dim(2) - 2, w = padded.dim(3);
  return ops::add(ops::add(ops::crop(padded, 0, 0, h, w),
                           ops::scalar_mul(ops::crop(padded, 1, 0, h, w), 2.0)),
                  ops::crop(padded, 2, 0, h, w));
}

Tensor smooth_cols(const Tensor& padded) {
  const std::size_t h = padded.dim(2), w = padded.dim(3) - 2;
  return ops::add(ops::add(ops::crop(padded, 0, 0, h, w),
                           ops::scalar_mul(ops::crop(padded, 0, 1, h, w), 2.0)),
                  ops::crop(padded, 0, 2, h, w));
}

void require_same_shape(const char* op, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError(op, "shape",
                         "prediction " + shape_string(pred.shape()) + " vs target " +
                             shape_string(target.shape()));
  }
}

}  // namespace

std::string to_string(LossKind kind) { return kind == LossKind::mse ? "mse" : "mixge"; }

LossKind parse_loss_kind(const std::string& text) {
  if (text == "mse") return LossKind::mse;
  if (text == "mixge") return LossKind::mixge;
  throw ConfigError("unknown loss '" + text + "' (expected mse or mixge)");
}

void LossConfig::validate() const {
  if (!std::isfinite(lambda_g) || lambda_g < 0.0) {
    throw ConfigError("lambda_g must be finite and >= 0");
  }
  if (!std::isfinite(sqrt_epsilon) || sqrt_epsilon <= 0.0) {
    throw ConfigError("sqrt_epsilon must be finite and > 0");
  }
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape("mse", pred, target);
  return ops::mean_all(ops::square(ops::sub(pred, target)));
}

// The printed kernels are separable: a 1-2-1 smoother across one axis and a
// central difference along the other. Convolving (not correlating) with
// [-1 -2 -1; 0 0 0; 1 2 1] gives smooth(row i-1) - smooth(row i+1); its
// transpose gives the same along columns. Both sides of each difference go
// through identical arithmetic, so flat regions cancel exactly.
GradientMap sobel_maps(const Tensor& image, double eps) {
  if (image.rank() != 4) {
    throw DimensionError("sobel_maps", "rank",
                         "expected N x C x H x W, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(2), w = image.dim(3);
  if (h == 0 || w == 0) throw DimensionError("sobel_maps", h == 0 ? "height" : "width", "empty image");
  const Tensor padded = ops::pad(image, ops::Padding2d::uniform(1), ops::PadMode::replicate);
  const Tensor across = smooth_cols(padded);  // (H + 2) x W
  const Tensor down = smooth_rows(padded);    // H x (W + 2)
  GradientMap map;
  map.gx = ops::sub(ops::crop(across, 0, 0, h, w), ops::crop(across, 2, 0, h, w));
  map.gy = ops::sub(ops::crop(down, 0, 0, h, w), ops::crop(down, 0, 2, h, w));
  map.magnitude = ops::sqrt_eps(ops::add(ops::square(map.gx), ops::square(map.gy)), eps);
  return map;
}

Tensor mge(const Tensor& pred, const Tensor& target, double eps) {
  require_same_shape("mge", pred, target);
  const Tensor g_target = sobel_maps(target, eps).magnitude;
  const Tensor g_pred = sobel_maps(pred, eps).magnitude;
  return ops::mean_all(ops::square(ops::sub(g_target, g_pred)));
}

Tensor mixge(const Tensor& pred, const Tensor& target, const LossConfig& config) {
  config.validate();
  const Tensor pixel = mse(pred, target);
  const Tensor gradient = mge(pred, target, config.sqrt_epsilon);
  return ops::add(pixel, ops::scalar_mul(gradient, config.lambda_g));
}

Tensor training_loss(const Tensor& pred, const Tensor& target, const LossConfig& config) {
  return config.kind == LossKind::mse ? mse(pred, target) : mixge(pred, target, config);
}

}  // namespace unetsr
