#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "unetsr/error.hpp"
#include "unetsr/gradcheck.hpp"
#include "unetsr/ops.hpp"

using namespace unetsr;
using unetsr::testing::random_off_kink;
using unetsr::testing::random_tensor;

namespace {

// Scalar probe: mean(w * y) with fixed random weights, so every output
// element contributes a distinct gradient.
Tensor weighted_mean(const Tensor& y, std::uint64_t seed) {
  return ops::mean_all(ops::mul(y, random_tensor(Shape(y.shape()), seed)));
}

}  // namespace

TEST(Conv2d, AllOnesSumsWindow) {
  const Tensor x(Shape{1, 1, 3, 3}, 1.0);
  const Tensor w(Shape{1, 1, 3, 3}, 1.0);
  const Tensor b(Shape{1}, 0.0);
  const Tensor y = ops::conv2d(x, w, b, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 9.0);
}

TEST(Conv2d, IdentityKernel) {
  const Tensor x(Shape{1, 1, 1, 1}, std::vector<double>{-3.25});
  const Tensor w(Shape{1, 1, 1, 1}, 1.0);
  const Tensor b(Shape{1}, 0.0);
  EXPECT_EQ(ops::conv2d(x, w, b, 1, 0).item(), -3.25);
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  struct Case {
    std::size_t stride, padding;
    ops::PadMode mode;
  };
  for (const Case c : {Case{1, 1, ops::PadMode::zero}, Case{1, 1, ops::PadMode::replicate},
                       Case{2, 1, ops::PadMode::zero}, Case{1, 0, ops::PadMode::zero},
                       Case{2, 2, ops::PadMode::replicate}}) {
    const Tensor x = random_tensor({1, 2, 5, 5}, 11, -10.0, 10.0);
    const Tensor w = random_tensor({3, 2, 3, 3}, 12, -10.0, 10.0);
    const Tensor b = random_tensor({3}, 13, -10.0, 10.0);
    const Tensor y = ops::conv2d(x, w, b, c.stride, c.padding, c.mode);
    const auto expected = unetsr::testing::direct_conv2d(x, w, b, c.stride, c.padding, c.mode);
    ASSERT_EQ(y.numel(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      EXPECT_NEAR(y.data()[i], expected[i], 1e-12) << "element " << i;
    }
  }
}

TEST(Conv2d, OutputExtentFloorsByStride) {
  const Tensor x(Shape{2, 1, 6, 7}, 1.0);
  const Tensor w(Shape{4, 1, 3, 3}, 1.0);
  const Tensor y = ops::conv2d(x, w, Tensor(), 2, 0);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 2, 3}));
}

TEST(Conv2d, AsymmetricPaddingKeepsExtentFor2x2Kernel) {
  const Tensor x = random_tensor({1, 2, 4, 4}, 3);
  const Tensor w = random_tensor({1, 2, 2, 2}, 4);
  const Tensor y = ops::conv2d(x, w, Tensor(), ops::Conv2dOptions{1, {0, 1, 0, 1}});
  EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  // Bottom-right output sees one real pixel per channel.
  const double expected = x.at(0, 0, 3, 3) * w.at(0, 0, 0, 0) + x.at(0, 1, 3, 3) * w.at(0, 1, 0, 0);
  EXPECT_NEAR(y.at(0, 0, 3, 3), expected, 1e-15);
}

TEST(Conv2d, ChannelMismatchNamesAxis) {
  const Tensor x(Shape{1, 2, 4, 4});
  const Tensor w(Shape{1, 3, 3, 3});
  try {
    ops::conv2d(x, w, Tensor(), 1, 1);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.axis(), "channel");
  }
}

TEST(Conv2d, KernelLargerThanPaddedInputRejected) {
  const Tensor x(Shape{1, 1, 2, 2});
  const Tensor w(Shape{1, 1, 3, 3});
  EXPECT_THROW(ops::conv2d(x, w, Tensor(), 1, 0), DimensionError);
  EXPECT_NO_THROW(ops::conv2d(x, w, Tensor(), 1, 1));
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  for (auto mode : {ops::PadMode::zero, ops::PadMode::replicate}) {
    Tensor x = random_tensor({2, 2, 5, 5}, 21);
    Tensor w = random_tensor({3, 2, 3, 3}, 22);
    Tensor b = random_tensor({3}, 23);
    const auto f = [&] { return weighted_mean(ops::conv2d(x, w, b, 1, 1, mode), 24); };
    const auto report = finite_diff_check(f, {{"x", x}, {"w", w}, {"b", b}}, 1e-5, 1e-6);
    EXPECT_TRUE(report.pass) << report.max_rel_err << " at " << report.worst;
  }
}

TEST(Conv2d, StridedGradientMatchesFiniteDifferences) {
  Tensor x = random_tensor({1, 2, 6, 6}, 31);
  Tensor w = random_tensor({2, 2, 3, 3}, 32);
  Tensor b = random_tensor({2}, 33);
  const auto f = [&] { return weighted_mean(ops::conv2d(x, w, b, 2, 1), 34); };
  const auto report = finite_diff_check(f, {{"x", x}, {"w", w}, {"b", b}}, 1e-5, 1e-6);
  EXPECT_TRUE(report.pass) << report.max_rel_err << " at " << report.worst;
}

TEST(MaxPool, SingleWindowTakesMax) {
  const Tensor x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(ops::maxpool2x2(x).item(), 4.0);
}

TEST(MaxPool, ConstantStaysConstant) {
  const Tensor y = ops::maxpool2x2(Tensor(Shape{1, 2, 4, 6}, 0.75));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.75);
}

TEST(MaxPool, ForwardAndBackwardMatchWindowEnumeration) {
  Tensor x = random_tensor({1, 1, 4, 4}, 41);
  x.set_requires_grad(true);
  const Tensor upstream = random_tensor({1, 1, 2, 2}, 42);
  GradTape tape;
  const Tensor y = ops::maxpool2x2(x);
  tape.backward(ops::mean_all(ops::mul(y, upstream)));

  std::vector<double> expected_grad(16, 0.0);
  for (std::size_t oy = 0; oy < 2; ++oy) {
    for (std::size_t ox = 0; ox < 2; ++ox) {
      std::size_t best_r = 2 * oy, best_c = 2 * ox;
      for (std::size_t r = 2 * oy; r < 2 * oy + 2; ++r) {
        for (std::size_t c = 2 * ox; c < 2 * ox + 2; ++c) {
          if (x.at(0, 0, r, c) > x.at(0, 0, best_r, best_c)) {
            best_r = r;
            best_c = c;
          }
        }
      }
      EXPECT_EQ(y.at(0, 0, oy, ox), x.at(0, 0, best_r, best_c));
      expected_grad[best_r * 4 + best_c] += upstream.at(0, 0, oy, ox) / 4.0;
    }
  }
  for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], expected_grad[i]);
}

TEST(MaxPool, TiesRouteToFirstIndex) {
  Tensor x(Shape{1, 1, 2, 2}, 5.0);
  x.set_requires_grad(true);
  GradTape tape;
  tape.backward(ops::mean_all(ops::maxpool2x2(x)));
  EXPECT_EQ(x.to_vector().size(), 4U);
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 0.0);
  EXPECT_EQ(x.grad()[3], 0.0);
}

TEST(MaxPool, OddExtentRejected) {
  try {
    ops::maxpool2x2(Tensor(Shape{1, 1, 4, 5}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.axis(), "width");
  }
  EXPECT_THROW(ops::maxpool2x2(Tensor(Shape{1, 1, 3, 4})), DimensionError);
}

TEST(Upsample, SinglePixelBecomes2x2) {
  const Tensor y = ops::upsample_nearest2x(Tensor(Shape{1, 1, 1, 1}, 7.0));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 7.0);
}

TEST(Upsample, ReplicatesBlocks) {
  const Tensor x = random_tensor({1, 2, 3, 2}, 51);
  const Tensor y = ops::upsample_nearest2x(x);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t q = 0; q < 4; ++q) EXPECT_EQ(y.at(0, c, r, q), x.at(0, c, r / 2, q / 2));
}

TEST(Upsample, SumIsFourTimesInput) {
  const Tensor x = random_tensor({2, 3, 4, 5}, 52);
  const Tensor y = ops::upsample_nearest2x(x);
  EXPECT_NEAR(unetsr::testing::sum(y.data()), 4.0 * unetsr::testing::sum(x.data()), 1e-12);
}

TEST(Relu, PointValues) {
  const Tensor y = ops::relu(Tensor(Shape{3}, std::vector<double>{-1.0, 3.5, 0.0}));
  EXPECT_EQ(y.data()[0], 0.0);
  EXPECT_EQ(y.data()[1], 3.5);
  EXPECT_EQ(y.data()[2], 0.0);
}

TEST(Relu, SubgradientAtZeroIsZero) {
  Tensor x(Shape{1}, 0.0);
  x.set_requires_grad(true);
  GradTape tape;
  tape.backward(ops::mean_all(ops::relu(x)));
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Relu, GradientMatchesFiniteDifferencesOffKink) {
  const Tensor x = random_off_kink({2, 3, 4, 4}, 61);
  const auto report = finite_diff_check(
      [](const Tensor& t) { return weighted_mean(ops::relu(t), 62); }, x, 1e-5, 1e-6);
  EXPECT_TRUE(report.pass) << report.max_rel_err;
}

TEST(Concat, ShapesAdd) {
  const Tensor y = ops::concat_channels(Tensor(Shape{1, 2, 4, 4}), Tensor(Shape{1, 3, 4, 4}));
  EXPECT_EQ(y.shape(), (Shape{1, 5, 4, 4}));
}

TEST(Concat, EmptyChannelTensorIsIdentity) {
  const Tensor x = random_tensor({2, 3, 2, 2}, 71);
  const Tensor y = ops::concat_channels(x, Tensor(Shape{2, 0, 2, 2}));
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.to_vector(), x.to_vector());
}

TEST(Concat, LeadingChannelsReproduceFirstOperand) {
  const Tensor a = random_tensor({2, 2, 3, 3}, 72);
  const Tensor b = random_tensor({2, 3, 3, 3}, 73);
  const Tensor y = ops::concat_channels(a, b);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t q = 0; q < 3; ++q)
          EXPECT_EQ(y.at(n, c, r, q), c < 2 ? a.at(n, c, r, q) : b.at(n, c - 2, r, q));
}

TEST(Concat, SpatialMismatchNamesAxis) {
  try {
    ops::concat_channels(Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 4, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.axis(), "width");
  }
  EXPECT_THROW(ops::concat_channels(Tensor(Shape{2, 1, 4, 4}), Tensor(Shape{1, 1, 4, 4})),
               DimensionError);
}

TEST(Concat, GradientSplitsByChannel) {
  Tensor a = random_tensor({1, 2, 3, 3}, 74);
  Tensor b = random_tensor({1, 1, 3, 3}, 75);
  const auto report = finite_diff_check(
      [&] { return weighted_mean(ops::concat_channels(a, b), 76); }, {{"a", a}, {"b", b}}, 1e-5,
      1e-6);
  EXPECT_TRUE(report.pass) << report.max_rel_err;
}

TEST(Elementwise, MeanAll) {
  EXPECT_EQ(ops::mean_all(Tensor(Shape{4}, std::vector<double>{1, 2, 3, 4})).item(), 2.5);
}

TEST(Elementwise, SqrtEpsAtZero) {
  EXPECT_NEAR(ops::sqrt_eps(Tensor(Shape{1}, 0.0), 1e-12).item(), 1e-6, 1e-21);
}

TEST(Elementwise, ShapeMismatchRejected) {
  EXPECT_THROW(ops::add(Tensor(Shape{2, 3}), Tensor(Shape{3, 2})), DimensionError);
  EXPECT_THROW(ops::sub(Tensor(Shape{2}), Tensor(Shape{3})), DimensionError);
  EXPECT_THROW(ops::mul(Tensor(Shape{1, 1, 2, 2}), Tensor(Shape{1, 2, 2, 2})), DimensionError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  const Shape s{2, 3, 4, 4};
  Tensor a = random_tensor(s, 81);
  Tensor b = random_tensor(s, 82);
  Tensor pos = random_tensor(s, 83, 0.1, 2.0);
  struct Case {
    const char* name;
    std::function<Tensor()> f;
    std::vector<NamedTensor> wrt;
  };
  const std::vector<Case> cases = {
      {"add", [&] { return weighted_mean(ops::add(a, b), 84); }, {{"a", a}, {"b", b}}},
      {"sub", [&] { return weighted_mean(ops::sub(a, b), 85); }, {{"a", a}, {"b", b}}},
      {"mul", [&] { return weighted_mean(ops::mul(a, b), 86); }, {{"a", a}, {"b", b}}},
      {"square", [&] { return weighted_mean(ops::square(a), 87); }, {{"a", a}}},
      {"sqrt_eps", [&] { return weighted_mean(ops::sqrt_eps(pos, 1e-12), 88); }, {{"x", pos}}},
      {"scalar_mul", [&] { return weighted_mean(ops::scalar_mul(a, -2.5), 89); }, {{"a", a}}},
      {"mean_all", [&] { return ops::mean_all(a); }, {{"a", a}}},
      {"crop", [&] { return weighted_mean(ops::crop(a, 1, 0, 2, 3), 90); }, {{"a", a}}},
      {"pad", [&] {
         return weighted_mean(ops::pad(a, {1, 2, 0, 1}, ops::PadMode::replicate), 91);
       }, {{"a", a}}},
      {"reshape", [&] { return weighted_mean(ops::reshape(a, Shape{6, 16}), 92); }, {{"a", a}}},
  };
  for (const auto& c : cases) {
    const auto report = finite_diff_check(c.f, c.wrt, 1e-5, 1e-6);
    EXPECT_TRUE(report.pass) << c.name << ": " << report.max_rel_err << " at " << report.worst;
  }
}

TEST(Backward, MeanOfSquaresAnalytic) {
  Tensor x(Shape{2}, std::vector<double>{1.0, 2.0});
  x.set_requires_grad(true);
  GradTape tape;
  tape.backward(ops::mean_all(ops::square(x)));
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 2.0);
}

TEST(Backward, ConvReluMeanChain) {
  Tensor x = random_tensor({1, 2, 6, 6}, 101);
  Tensor w = random_tensor({3, 2, 3, 3}, 102);
  Tensor b = random_tensor({3}, 103);
  const auto f = [&] { return ops::mean_all(ops::relu(ops::conv2d(x, w, b, 1, 1))); };
  const auto report = finite_diff_check(f, {{"x", x}, {"w", w}, {"b", b}}, 1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << report.max_rel_err << " at " << report.worst;
}

TEST(Backward, AccumulatesAcrossFanOut) {
  Tensor x(Shape{1}, 3.0);
  x.set_requires_grad(true);
  GradTape tape;
  // x*x + x -> 2x + 1
  tape.backward(ops::mean_all(ops::add(ops::mul(x, x), x)));
  EXPECT_EQ(x.grad()[0], 7.0);
}

TEST(Backward, GradientsAccumulateUntilZeroed) {
  Tensor x(Shape{1}, 2.0);
  x.set_requires_grad(true);
  for (int pass = 0; pass < 2; ++pass) {
    GradTape tape;
    tape.backward(ops::mean_all(ops::scalar_mul(x, 3.0)));
  }
  EXPECT_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, IndependentTapesDoNotInterfere) {
  Tensor a(Shape{1}, 2.0);
  Tensor b(Shape{1}, 5.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tensor loss_a;
  {
    GradTape outer;
    loss_a = ops::mean_all(ops::square(a));
    {
      GradTape inner;
      const Tensor loss_b = ops::mean_all(ops::scalar_mul(b, 4.0));
      EXPECT_EQ(inner.size(), 2U);
      inner.backward(loss_b);
      EXPECT_EQ(inner.size(), 0U);
    }
    EXPECT_EQ(outer.size(), 2U);
    outer.backward(loss_a);
  }
  EXPECT_EQ(a.grad()[0], 4.0);
  EXPECT_EQ(b.grad()[0], 4.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  GradTape tape;
  const Tensor y = ops::square(x);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, LossWithoutTapeRejected) {
  const Tensor loss = Tensor::scalar(1.0);
  EXPECT_THROW(backward(loss), ContractError);
}

TEST(Tape, UntapedTensorsHaveNoNode) {
  Tensor x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  const Tensor y = ops::square(x);
  EXPECT_FALSE(y.tape_node().has_value());
  EXPECT_FALSE(y.requires_grad());
  GradTape tape;
  const Tensor z = ops::square(x);
  ASSERT_TRUE(z.tape_node().has_value());
  EXPECT_EQ(tape.op_name(*z.tape_node()), "square");
  const Tensor constant = ops::square(Tensor(Shape{2}, 1.0));
  EXPECT_FALSE(constant.tape_node().has_value());
}

TEST(Tape, NoGradScopeSuspendsRecording) {
  Tensor x(Shape{2}, 1.0);
  x.set_requires_grad(true);
  GradTape tape;
  {
    NoGradScope no_grad;
    EXPECT_FALSE(ops::square(x).tape_node().has_value());
  }
  EXPECT_TRUE(ops::square(x).tape_node().has_value());
}

TEST(Tape, ClearedAfterBackward) {
  Tensor x(Shape{1}, 1.0);
  x.set_requires_grad(true);
  GradTape tape;
  const Tensor y = ops::square(x);
  const Tensor loss = ops::mean_all(y);
  tape.backward(loss);
  EXPECT_EQ(tape.size(), 0U);
  EXPECT_FALSE(y.tape_node().has_value());
}

TEST(FiniteDiff, LinearFunctionIsExact) {
  const Tensor x = random_tensor({2, 3, 4, 4}, 111);
  const auto report =
      finite_diff_check([](const Tensor& t) { return ops::mean_all(t); }, x, 1e-5, 1e-10);
  EXPECT_TRUE(report.pass);
  EXPECT_LE(report.max_rel_err, 1e-10);
  EXPECT_EQ(report.checked, x.numel());
}

TEST(FiniteDiff, WrongBackwardDetected) {
  // Identity op whose backward doubles the gradient.
  const auto broken = [](const Tensor& x) {
    Tensor out = x.clone();
    record_op("broken_identity", {x}, out, [x](std::span<const double> g) {
      auto gx = x.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * g[i];
    });
    return ops::mean_all(ops::square(out));
  };
  const auto report = finite_diff_check(broken, random_tensor({1, 1, 3, 3}, 112), 1e-5, 1e-4);
  EXPECT_FALSE(report.pass);
  EXPECT_GT(report.max_rel_err, 0.1);
}

TEST(Properties, ForwardIsBitDeterministic) {
  const Tensor x = random_tensor({1, 3, 8, 8}, 121);
  const Tensor w = random_tensor({4, 3, 3, 3}, 122);
  const Tensor b = random_tensor({4}, 123);
  const auto run = [&] {
    return ops::upsample_nearest2x(ops::maxpool2x2(ops::relu(ops::conv2d(x, w, b, 1, 1))))
        .to_vector();
  };
  EXPECT_EQ(run(), run());
}

TEST(Properties, GradientMassConservedThroughRouting) {
  const Tensor upstream = random_tensor({1, 2, 8, 8}, 131);
  const auto mass = [](std::span<const double> v) { return unetsr::testing::sum(v); };

  Tensor x = random_tensor({1, 2, 4, 4}, 132);
  x.set_requires_grad(true);
  {
    GradTape tape;
    tape.backward(ops::mean_all(ops::mul(ops::upsample_nearest2x(x), upstream)));
  }
  EXPECT_NEAR(mass(x.grad()), mass(upstream.data()) / 128.0, 1e-14);

  Tensor y = random_tensor({1, 2, 16, 16}, 133);
  y.set_requires_grad(true);
  {
    GradTape tape;
    tape.backward(ops::mean_all(ops::mul(ops::maxpool2x2(y), upstream)));
  }
  EXPECT_NEAR(mass(y.grad()), mass(upstream.data()) / 128.0, 1e-14);
  std::size_t nonzero = 0;
  for (double g : y.grad()) nonzero += g != 0.0;
  EXPECT_EQ(nonzero, 128U);

  Tensor a = random_tensor({1, 1, 8, 8}, 134);
  Tensor b = random_tensor({1, 1, 8, 8}, 135);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  {
    GradTape tape;
    tape.backward(ops::mean_all(ops::mul(ops::concat_channels(a, b), upstream)));
  }
  EXPECT_NEAR(mass(a.grad()) + mass(b.grad()), mass(upstream.data()) / 128.0, 1e-14);
}
