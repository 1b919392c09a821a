#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "unetsr/gradcheck.hpp"
#include "unetsr/tensor.hpp"

namespace unetsr {

struct NetConfig {
  /// Encoder downscale stages (and matching decoder stages).
  int depth = 5;
  /// Output magnification: 2, 4 or 8.
  int scale = 2;
  int in_channels = 3;
  int base_width = 64;
  int width_cap = 512;
  int kernel = 3;
  std::uint64_t seed = 1;

  /// Throws ConfigError on anything outside the supported family.
  void validate() const;
  /// log2(scale).
  int head_stages() const;
  /// Channel width of encoder level d: min(base_width * 2^d, width_cap).
  std::size_t width(int level) const;
  /// Input extents must be multiples of this.
  std::size_t input_multiple() const { return std::size_t{1} << depth; }

  bool operator==(const NetConfig&) const = default;
};

/// Named parameter tensors in construction order.
class ParamSet {
 public:
  void add(std::string name, Tensor tensor);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  /// Total element count.
  std::size_t numel() const;

  const Tensor& at(const std::string& name) const;
  const Tensor* find(const std::string& name) const;

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<NamedTensor>::const_iterator begin() const { return entries_.begin(); }
  std::vector<NamedTensor>::const_iterator end() const { return entries_.end(); }

  void zero_grad();
  /// Deep copy of every tensor.
  ParamSet clone() const;

 private:
  std::vector<NamedTensor> entries_;
};

/// One convolution of the network as listed by `layer_table`.
struct LayerSpec {
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;

  std::size_t weights() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t params() const { return weights() + out_channels; }
};

/// Every convolution in construction order.
std::vector<LayerSpec> layer_table(const NetConfig& config);

/// Closed-form parameter total.
std::size_t param_count(const NetConfig& config);

/// He-normal weights (std sqrt(2 / fan_in)), zero biases, seeded.
ParamSet init_params(const NetConfig& config, std::uint64_t seed);

/// Raw LR input made divisible by 2^depth, with its bicubic pyramid.
struct PreparedInput {
  Tensor image;
  /// Bicubic upscales of `image` at 2x, 4x, ... up to the network scale.
  std::vector<Tensor> pyramid;
  /// Target extents before any padding, i.e. scale * original input.
  std::size_t out_h = 0;
  std::size_t out_w = 0;
};

/// Replicate-pads the bottom and right edges up to the next multiple of
/// 2^depth, then builds the pyramid from the padded image.
PreparedInput prepare_input(const NetConfig& config, const Tensor& lr);

class Model {
 public:
  /// Fresh parameters from `config.seed`.
  explicit Model(NetConfig config);
  Model(NetConfig config, ParamSet params);

  const NetConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  /// For optimizers; the tensor handles stay shared with the model.
  ParamSet& mutable_params() { return params_; }

  std::size_t encoder_stages() const;
  std::size_t decoder_stages() const;
  std::size_t head_stages() const;

  /// `x` is N x 3 x H x W with H and W multiples of 2^depth; `pyramid[s]`
  /// must be N x 3 x 2^(s+1) H x 2^(s+1) W. Returns N x 3 x rH x rW.
  Tensor forward(const Tensor& x, const std::vector<Tensor>& pyramid) const;

  /// Forward pass on a prepared input, cropped back to out_h x out_w.
  Tensor forward(const PreparedInput& input) const;

  /// prepare_input + forward.
  Tensor predict(const Tensor& lr) const;

 private:
  const Tensor& param(const std::string& name) const;
  Tensor conv(const std::string& layer, const Tensor& x) const;
  Tensor conv_relu(const std::string& layer, const Tensor& x) const;

  NetConfig config_;
  ParamSet params_;
};

}  // namespace unetsr
