#pragma once

#include <string>

#include "unetsr/tensor.hpp"

namespace unetsr {

enum class LossKind { mse, mixge };

std::string to_string(LossKind kind);
/// Parses "mse" or "mixge"; throws ConfigError otherwise.
LossKind parse_loss_kind(const std::string& text);

struct LossConfig {
  LossKind kind = LossKind::mixge;
  /// Weight of the gradient term in MSE + lambda_g * MGE.
  double lambda_g = 0.1;
  /// Stabiliser inside the gradient-magnitude square root.
  double sqrt_epsilon = 1e-12;

  /// Throws ConfigError on a negative or non-finite weight or epsilon <= 0.
  void validate() const;
};

/// Sobel responses and magnitude, each with the input's N x C x H x W shape.
struct GradientMap {
  Tensor gx;
  Tensor gy;
  Tensor magnitude;
};

/// Global mean of (pred - target)^2 over N*C*H*W.
Tensor mse(const Tensor& pred, const Tensor& target);

/// Per-channel Sobel responses with replicate padding (same-size output) and
/// magnitude sqrt(gx^2 + gy^2 + eps). `gx` uses the kernel with rows
/// [-1 -2 -1; 0 0 0; 1 2 1] and `gy` its transpose, both applied as true
/// convolutions. Despite the names, `gx` therefore responds to variation down
/// the rows; the magnitude does not depend on the labelling.
GradientMap sobel_maps(const Tensor& image, double eps);

/// Global mean of (|grad target| - |grad pred|)^2.
Tensor mge(const Tensor& pred, const Tensor& target, double eps);

/// mse + lambda_g * mge.
Tensor mixge(const Tensor& pred, const Tensor& target, const LossConfig& config);

/// Loss selected by `config.kind`.
Tensor training_loss(const Tensor& pred, const Tensor& target, const LossConfig& config);

}  // namespace unetsr
