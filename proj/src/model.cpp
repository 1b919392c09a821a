#include "unetsr/model.hpp"

#include <cmath>
#include <random>

#include "unetsr/error.hpp"
#include "unetsr/ops.hpp"
#include "unetsr/resample.hpp"

namespace unetsr {

void NetConfig::validate() const {
  if (depth < 1 || depth > 16) {
    throw ConfigError("depth must be in [1, 16], got " + std::to_string(depth));
  }
  if (scale != 2 && scale != 4 && scale != 8) {
    throw ConfigError("scale must be 2, 4 or 8, got " + std::to_string(scale));
  }
  if (in_channels != 3) throw ConfigError("in_channels must be 3");
  if (kernel != 3) throw ConfigError("kernel must be 3");
  if (base_width < 1) throw ConfigError("base_width must be >= 1");
  if (width_cap < base_width) throw ConfigError("width_cap must be >= base_width");
}

int NetConfig::head_stages() const {
  int k = 0;
  for (int s = scale; s > 1; s >>= 1) ++k;
  return k;
}

std::size_t NetConfig::width(int level) const {
  // Saturate before shifting so deep configs cannot overflow.
  std::size_t w = static_cast<std::size_t>(base_width);
  const auto cap = static_cast<std::size_t>(width_cap);
  for (int d = 0; d < level && w < cap; ++d) w *= 2;
  return std::min(w, cap);
}

void ParamSet::add(std::string name, Tensor tensor) {
  if (find(name) != nullptr) throw ContractError("duplicate parameter name " + name);
  entries_.push_back({std::move(name), std::move(tensor)});
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

const Tensor* ParamSet::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

const Tensor& ParamSet::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (t == nullptr) throw ContractError("no parameter named " + name);
  return *t;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& e : entries_) {
    Tensor t = e.tensor.clone();
    t.set_requires_grad(e.tensor.requires_grad());
    out.add(e.name, std::move(t));
  }
  return out;
}

std::vector<LayerSpec> layer_table(const NetConfig& config) {
  config.validate();
  const std::size_t k = static_cast<std::size_t>(config.kernel);
  const std::size_t in = static_cast<std::size_t>(config.in_channels);
  std::vector<LayerSpec> layers;
  std::size_t prev = in;
  for (int d = 0; d < config.depth; ++d) {
    layers.push_back({"enc" + std::to_string(d), prev, config.width(d), k});
    prev = config.width(d);
  }
  layers.push_back({"bottleneck", prev, config.width(config.depth), k});
  for (int d = config.depth - 1; d >= 0; --d) {
    const std::string id = "dec" + std::to_string(d);
    layers.push_back({id + ".up", config.width(d + 1), config.width(d), 2});
    layers.push_back({id + ".fuse", 2 * config.width(d), config.width(d), k});
  }
  const std::size_t w0 = config.width(0);
  for (int s = 0; s < config.head_stages(); ++s) {
    const std::string id = "head" + std::to_string(s);
    layers.push_back({id + ".up", w0, w0, k});
    layers.push_back({id + ".branch", in, w0, k});
    layers.push_back({id + ".fuse", 2 * w0, w0, k});
  }
  layers.push_back({"out", w0, in, k});
  return layers;
}

std::size_t param_count(const NetConfig& config) {
  config.validate();
  auto conv = [](std::size_t ci, std::size_t co, std::size_t k) { return co * ci * k * k + co; };
  const std::size_t c = static_cast<std::size_t>(config.in_channels);
  const std::size_t D = static_cast<std::size_t>(config.depth);
  const std::size_t w0 = config.width(0);
  std::size_t total = 0;
  for (std::size_t d = 0; d < D; ++d) {
    total += conv(d == 0 ? c : config.width(static_cast<int>(d) - 1),
                  config.width(static_cast<int>(d)), 3);
    total += conv(config.width(static_cast<int>(d) + 1), config.width(static_cast<int>(d)), 2) +
             conv(2 * config.width(static_cast<int>(d)), config.width(static_cast<int>(d)), 3);
  }
  total += conv(config.width(config.depth - 1), config.width(config.depth), 3);
  total += static_cast<std::size_t>(config.head_stages()) *
           (conv(w0, w0, 3) + conv(c, w0, 3) + conv(2 * w0, w0, 3));
  total += conv(w0, c, 3);
  return total;
}

ParamSet init_params(const NetConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamSet params;
  for (const auto& layer : layer_table(config)) {
    const double fan_in = static_cast<double>(layer.in_channels * layer.kernel * layer.kernel);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    Tensor w(Shape{layer.out_channels, layer.in_channels, layer.kernel, layer.kernel});
    for (auto& v : w.mutable_data()) v = dist(rng);
    params.add(layer.name + ".weight", std::move(w.set_requires_grad(true)));
    Tensor b(Shape{layer.out_channels});
    params.add(layer.name + ".bias", std::move(b.set_requires_grad(true)));
  }
  return params;
}

PreparedInput prepare_input(const NetConfig& config, const Tensor& lr) {
  config.validate();
  if (lr.rank() != 4) {
    throw DimensionError("prepare_input", "rank", "expected N x C x H x W, got " +
                                                      shape_string(lr.shape()));
  }
  if (lr.dim(1) != static_cast<std::size_t>(config.in_channels)) {
    throw DimensionError("prepare_input", "channel",
                         "expected " + std::to_string(config.in_channels) + ", got " +
                             std::to_string(lr.dim(1)));
  }
  const std::size_t m = config.input_multiple();
  const std::size_t h = lr.dim(2), w = lr.dim(3);
  if (h == 0 || w == 0) throw ContractError("prepare_input: empty image");
  const std::size_t ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  PreparedInput out;
  {
    NoGradScope no_grad;
    out.image = (ph == h && pw == w)
                    ? lr
                    : ops::pad(lr, {0, ph - h, 0, pw - w}, ops::PadMode::replicate);
    for (int s = 1; s <= config.head_stages(); ++s) {
      out.pyramid.push_back(bicubic_resize(out.image, ph << s, pw << s));
    }
  }
  const auto r = static_cast<std::size_t>(config.scale);
  out.out_h = h * r;
  out.out_w = w * r;
  return out;
}

Model::Model(NetConfig config) : Model(config, init_params(config, config.seed)) {}

Model::Model(NetConfig config, ParamSet params) : config_(config), params_(std::move(params)) {
  config_.validate();
  const auto layers = layer_table(config_);
  if (params_.size() != 2 * layers.size()) {
    throw ContractError("parameter set has " + std::to_string(params_.size()) +
                        " tensors, network needs " + std::to_string(2 * layers.size()));
  }
  for (const auto& layer : layers) {
    const Shape ws{layer.out_channels, layer.in_channels, layer.kernel, layer.kernel};
    const Shape bs{layer.out_channels};
    if (param(layer.name + ".weight").shape() != ws || param(layer.name + ".bias").shape() != bs) {
      throw DimensionError("Model", layer.name,
                           "parameter shapes do not match the configuration");
    }
  }
}

std::size_t Model::encoder_stages() const { return static_cast<std::size_t>(config_.depth); }
std::size_t Model::decoder_stages() const { return static_cast<std::size_t>(config_.depth); }
std::size_t Model::head_stages() const { return static_cast<std::size_t>(config_.head_stages()); }

const Tensor& Model::param(const std::string& name) const { return params_.at(name); }

Tensor Model::conv(const std::string& layer, const Tensor& x) const {
  return ops::conv2d(x, param(layer + ".weight"), param(layer + ".bias"), 1, 1);
}

Tensor Model::conv_relu(const std::string& layer, const Tensor& x) const {
  return ops::relu(conv(layer, x));
}

Tensor Model::forward(const Tensor& x, const std::vector<Tensor>& pyramid) const {
  if (x.rank() != 4) {
    throw DimensionError("forward", "rank", "expected N x C x H x W, got " + shape_string(x.shape()));
  }
  const std::size_t m = config_.input_multiple();
  if (x.dim(2) % m != 0 || x.dim(3) % m != 0) {
    throw DimensionError("forward", x.dim(2) % m != 0 ? "height" : "width",
                         "extents " + shape_string(x.shape()) + " must be multiples of " +
                             std::to_string(m));
  }
  if (pyramid.size() != head_stages()) {
    throw DimensionError("forward", "pyramid",
                         "expected " + std::to_string(head_stages()) + " levels, got " +
                             std::to_string(pyramid.size()));
  }
  for (std::size_t s = 0; s < pyramid.size(); ++s) {
    const Shape want{x.dim(0), x.dim(1), x.dim(2) << (s + 1), x.dim(3) << (s + 1)};
    if (pyramid[s].shape() != want) {
      throw DimensionError("forward", "pyramid",
                           "level " + std::to_string(s) + " is " +
                               shape_string(pyramid[s].shape()) + ", expected " +
                               shape_string(want));
    }
  }

  std::vector<Tensor> skips;
  Tensor h = x;
  for (int d = 0; d < config_.depth; ++d) {
    h = conv_relu("enc" + std::to_string(d), h);
    skips.push_back(h);
    h = ops::maxpool2x2(h);
  }
  h = conv_relu("bottleneck", h);
  for (int d = config_.depth - 1; d >= 0; --d) {
    const std::string id = "dec" + std::to_string(d);
    const Tensor up = ops::upsample_nearest2x(h);
    // 2x2 kernel: pad one row/column after the data to keep the extents.
    ops::Conv2dOptions opts;
    opts.padding = {0, 1, 0, 1};
    const Tensor halved = ops::conv2d(up, param(id + ".up.weight"), param(id + ".up.bias"), opts);
    h = conv_relu(id + ".fuse", ops::concat_channels(halved, skips[static_cast<std::size_t>(d)]));
  }
  for (std::size_t s = 0; s < head_stages(); ++s) {
    const std::string id = "head" + std::to_string(s);
    const Tensor up = conv_relu(id + ".up", ops::upsample_nearest2x(h));
    const Tensor branch = conv_relu(id + ".branch", pyramid[s]);
    h = conv_relu(id + ".fuse", ops::concat_channels(up, branch));
  }
  return conv("out", h);
}

Tensor Model::forward(const PreparedInput& input) const {
  Tensor out = forward(input.image, input.pyramid);
  if (out.dim(2) == input.out_h && out.dim(3) == input.out_w) return out;
  return ops::crop(out, 0, 0, input.out_h, input.out_w);
}

Tensor Model::predict(const Tensor& lr) const { return forward(prepare_input(config_, lr)); }

}  // namespace unetsr
