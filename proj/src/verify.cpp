#include "unetsr/verify.hpp"

#include <functional>
#include <random>

#include "unetsr/error.hpp"
#include "unetsr/loss.hpp"
#include "unetsr/model.hpp"
#include "unetsr/ops.hpp"

namespace unetsr {

namespace {

constexpr double kStep = 1e-5;
constexpr double kElementwiseTol = 1e-6;
constexpr double kTol = 1e-4;

Tensor uniform(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Keeps values at least `gap` away from zero so no difference straddles a kink.
Tensor off_kink(Shape shape, std::uint64_t seed, double gap = 1e-2) {
  Tensor t = uniform(std::move(shape), seed);
  for (auto& e : t.mutable_data()) {
    if (std::abs(e) < gap) e += e < 0 ? -gap : gap;
  }
  return t;
}

// Scalar probe <y, r> / n with a fixed random r, so every output element
// carries a distinct weight.
Tensor project(const Tensor& y, std::uint64_t seed) {
  return ops::mean_all(ops::mul(y, uniform(y.shape(), seed)));
}

class Runner {
 public:
  explicit Runner(std::string suite) : suite_(std::move(suite)) {}

  void check(const std::string& name, double tol, const std::function<Tensor()>& f,
             std::vector<NamedTensor> wrt) {
    cases_.push_back({suite_, name, tol, finite_diff_check(f, wrt, kStep, tol)});
  }

  void unary(const std::string& name, double tol, const Tensor& x,
             const std::function<Tensor(const Tensor&)>& op, std::uint64_t seed) {
    check(name, tol, [=] { return project(op(x), seed); }, {{"x", x}});
  }

  std::vector<GradcheckCase> take() { return std::move(cases_); }

 private:
  std::string suite_;
  std::vector<GradcheckCase> cases_;
};

void ops_suite(std::vector<GradcheckCase>& out) {
  Runner r("ops");
  {
    const Tensor x = uniform({1, 2, 5, 5}, 1), w = uniform({3, 2, 3, 3}, 2), b = uniform({3}, 3);
    r.check("conv2d zero pad 1", kTol,
            [=] { return project(ops::conv2d(x, w, b, 1, 1), 4); },
            {{"input", x}, {"weight", w}, {"bias", b}});
    r.check("conv2d replicate pad 1", kTol,
            [=] { return project(ops::conv2d(x, w, b, 1, 1, ops::PadMode::replicate), 5); },
            {{"input", x}, {"weight", w}, {"bias", b}});
    r.check("conv2d stride 2", kTol,
            [=] { return project(ops::conv2d(x, w, b, 2, 0), 6); },
            {{"input", x}, {"weight", w}, {"bias", b}});
    const Tensor w2 = uniform({2, 2, 2, 2}, 7);
    ops::Conv2dOptions asym;
    asym.padding = {0, 1, 0, 1};
    r.check("conv2d 2x2 asymmetric pad", kTol,
            [=] { return project(ops::conv2d(x, w2, Tensor(), asym), 8); },
            {{"input", x}, {"weight", w2}});
  }
  {
    // Distinct values spaced well beyond the step keep the argmax stable.
    Tensor x(Shape{2, 3, 4, 4});
    std::vector<std::size_t> perm(x.numel());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::mt19937_64 rng(9);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      x.mutable_data()[i] = 0.01 * static_cast<double>(perm[i]);
    }
    r.unary("maxpool2x2", kTol, x, [](const Tensor& t) { return ops::maxpool2x2(t); }, 10);
  }
  const Tensor x = uniform({2, 3, 4, 4}, 11);
  r.unary("upsample_nearest2x", kTol, x, [](const Tensor& t) { return ops::upsample_nearest2x(t); }, 12);
  r.unary("relu", kElementwiseTol, off_kink({2, 3, 4, 4}, 13), [](const Tensor& t) { return ops::relu(t); }, 14);
  {
    const Tensor a = uniform({1, 2, 3, 3}, 15), b = uniform({1, 3, 3, 3}, 16);
    r.check("concat_channels", kTol, [=] { return project(ops::concat_channels(a, b), 17); },
            {{"a", a}, {"b", b}});
  }
  r.unary("crop", kTol, x, [](const Tensor& t) { return ops::crop(t, 1, 0, 2, 3); }, 18);
  r.unary("pad zero", kTol, x,
          [](const Tensor& t) { return ops::pad(t, {1, 0, 2, 1}, ops::PadMode::zero); }, 19);
  r.unary("pad replicate", kTol, x,
          [](const Tensor& t) { return ops::pad(t, {1, 2, 0, 1}, ops::PadMode::replicate); }, 20);
  r.unary("reshape", kTol, x, [](const Tensor& t) { return ops::reshape(t, {6, 16}); }, 21);
  {
    const Tensor a = uniform({2, 3, 4, 4}, 22), b = uniform({2, 3, 4, 4}, 23);
    r.check("add", kElementwiseTol, [=] { return project(ops::add(a, b), 24); }, {{"a", a}, {"b", b}});
    r.check("sub", kElementwiseTol, [=] { return project(ops::sub(a, b), 25); }, {{"a", a}, {"b", b}});
    r.check("mul", kElementwiseTol, [=] { return project(ops::mul(a, b), 26); }, {{"a", a}, {"b", b}});
  }
  r.unary("square", kElementwiseTol, x, [](const Tensor& t) { return ops::square(t); }, 27);
  r.unary("sqrt_eps", kElementwiseTol, uniform({2, 3, 4, 4}, 28, 0.1, 2.0),
          [](const Tensor& t) { return ops::sqrt_eps(t, 1e-12); }, 29);
  r.unary("scalar_mul", kElementwiseTol, x, [](const Tensor& t) { return ops::scalar_mul(t, -2.5); }, 30);
  r.check("mean_all", kElementwiseTol, [=] { return ops::mean_all(x); }, {{"x", x}});
  for (auto& c : r.take()) out.push_back(std::move(c));
}

Tensor flat_patch_input(std::uint64_t seed) {
  Tensor x = uniform({1, 3, 8, 8}, seed, 0.0, 1.0);
  // A constant 4 x 4 block puts near-zero gradient magnitudes in play.
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 2; i < 6; ++i)
      for (std::size_t j = 2; j < 6; ++j) x.mutable_data()[(c * 8 + i) * 8 + j] = 0.5;
  return x;
}

void loss_suite(std::vector<GradcheckCase>& out) {
  Runner r("loss");
  const Tensor pred = flat_patch_input(40), target = uniform({1, 3, 8, 8}, 41, 0.0, 1.0);
  r.check("mse", kElementwiseTol, [=] { return mse(pred, target); }, {{"pred", pred}});
  r.check("sobel magnitude", kTol, [=] { return project(sobel_maps(pred, 1e-12).magnitude, 42); },
          {{"image", pred}});
  r.check("mge", kTol, [=] { return mge(pred, target, 1e-12); }, {{"pred", pred}});
  LossConfig cfg;
  r.check("mixge", kTol, [=] { return mixge(pred, target, cfg); }, {{"pred", pred}});
  for (auto& c : r.take()) out.push_back(std::move(c));
}

void model_suite(std::vector<GradcheckCase>& out) {
  Runner r("model");
  NetConfig net;
  net.depth = 2;
  net.scale = 2;
  net.base_width = 2;
  net.seed = 17;
  const Model model(net);
  const Tensor x = uniform({1, 3, 8, 8}, 50, 0.0, 1.0);
  const Tensor y = uniform({1, 3, 16, 16}, 51, 0.0, 1.0);
  const PreparedInput in = prepare_input(net, x);
  const LossConfig cfg;
  std::vector<NamedTensor> wrt(model.params().begin(), model.params().end());
  r.check("unet depth 2 x2 mixge (parameters)", kTol,
          [&] { return mixge(model.forward(in), y, cfg); }, wrt);
  Tensor image = in.image.clone();
  r.check("unet depth 2 x2 mixge (input)", kTol,
          [&] { return mixge(model.forward(image, in.pyramid), y, cfg); }, {{"input", image}});
  for (auto& c : r.take()) out.push_back(std::move(c));
}

}  // namespace

const std::vector<std::string>& gradcheck_suites() {
  static const std::vector<std::string> names{"ops", "loss", "model"};
  return names;
}

std::vector<GradcheckCase> run_gradcheck(const std::string& suite) {
  std::vector<GradcheckCase> out;
  const bool all = suite == "all";
  if (!all && suite != "ops" && suite != "loss" && suite != "model") {
    throw ConfigError("unknown gradcheck suite '" + suite + "' (all, ops, loss, model)");
  }
  if (all || suite == "ops") ops_suite(out);
  if (all || suite == "loss") loss_suite(out);
  if (all || suite == "model") model_suite(out);
  return out;
}

}  // namespace unetsr
