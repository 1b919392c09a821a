#include "unetsr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "unetsr/error.hpp"
#include "unetsr/parallel.hpp"

namespace unetsr::ops {

namespace {

constexpr std::size_t kRowGrain = 4;

void require_rank4(const char* op, const Tensor& t) {
  if (t.rank() != 4) {
    throw DimensionError(op, "rank", "expected N x C x H x W, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    std::string axis = "rank";
    if (sa.size() == sb.size()) {
      static const char* names[] = {"batch", "channel", "height", "width"};
      for (std::size_t i = 0; i < sa.size(); ++i) {
        if (sa[i] != sb[i]) {
          axis = sa.size() == 4 ? names[i] : "axis " + std::to_string(i);
          break;
        }
      }
    }
    throw DimensionError(op, axis, shape_string(sa) + " vs " + shape_string(sb));
  }
}

// Source index of padded coordinate `pos` (already offset by the leading pad)
// along an axis of length `extent`; -1 for a zero-padded position.
inline std::ptrdiff_t source_index(std::ptrdiff_t pos, std::ptrdiff_t extent, PadMode mode) {
  if (pos >= 0 && pos < extent) return pos;
  if (mode == PadMode::zero) return -1;
  return std::clamp<std::ptrdiff_t>(pos, 0, extent - 1);
}

struct ConvGeometry {
  std::size_t n, cin, h, w;
  std::size_t cout, kh, kw;
  std::size_t ho, wo;
  std::size_t stride;
  Padding2d pad;
  PadMode mode;

  std::size_t k() const { return cin * kh * kw; }
  std::size_t p() const { return ho * wo; }
};

// Flat source offset within one image plane set (c * H * W + y * W + x) for
// every (row, col) of the im2col matrix; -1 marks zero padding.
std::vector<std::ptrdiff_t> im2col_index(const ConvGeometry& g) {
  const std::size_t rows = g.k();
  const std::size_t cols = g.p();
  std::vector<std::ptrdiff_t> index(rows * cols);
  const auto H = static_cast<std::ptrdiff_t>(g.h);
  const auto W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const std::size_t row = (c * g.kh + i) * g.kw + j;
        std::ptrdiff_t* out = index.data() + row * cols;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto y = source_index(static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                          static_cast<std::ptrdiff_t>(g.pad.top),
                                      H, g.mode);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto x = source_index(static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                            static_cast<std::ptrdiff_t>(g.pad.left),
                                        W, g.mode);
            out[oy * g.wo + ox] =
                (y < 0 || x < 0) ? -1 : static_cast<std::ptrdiff_t>(c) * H * W + y * W + x;
          }
        }
      }
    }
  }
  return index;
}

void gather_cols(const std::vector<std::ptrdiff_t>& index, const double* image,
                 std::vector<double>& cols) {
  cols.resize(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    cols[i] = index[i] < 0 ? 0.0 : image[index[i]];
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& options) {
  require_rank4("conv2d", input);
  if (weight.rank() != 4) {
    throw DimensionError("conv2d", "weight rank",
                         "expected Cout x Cin x kh x kw, got " + shape_string(weight.shape()));
  }
  if (options.stride == 0) throw ContractError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = options.stride;
  g.pad = options.padding;
  g.mode = options.pad_mode;
  if (weight.dim(1) != g.cin) {
    throw DimensionError("conv2d", "channel",
                         "weight expects " + std::to_string(weight.dim(1)) +
                             " input channels, input has " + std::to_string(g.cin));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw DimensionError("conv2d", "bias",
                         "expected (" + std::to_string(g.cout) + "), got " +
                             shape_string(bias.shape()));
  }
  const std::size_t padded_h = g.h + g.pad.top + g.pad.bottom;
  const std::size_t padded_w = g.w + g.pad.left + g.pad.right;
  if (g.kh == 0 || g.kh > padded_h) {
    throw DimensionError("conv2d", "height",
                         "kernel height " + std::to_string(g.kh) + " exceeds padded height " +
                             std::to_string(padded_h));
  }
  if (g.kw == 0 || g.kw > padded_w) {
    throw DimensionError("conv2d", "width",
                         "kernel width " + std::to_string(g.kw) + " exceeds padded width " +
                             std::to_string(padded_w));
  }
  if (g.mode == PadMode::replicate && (g.h == 0 || g.w == 0)) {
    throw DimensionError("conv2d", "height", "replicate padding of an empty image");
  }
  g.ho = (padded_h - g.kh) / g.stride + 1;
  g.wo = (padded_w - g.kw) / g.stride + 1;

  const std::size_t K = g.k();
  const std::size_t P = g.p();
  const auto index = im2col_index(g);
  Tensor out(Shape{g.n, g.cout, g.ho, g.wo});
  {
    const double* x = input.data().data();
    const double* wt = weight.data().data();
    const double* b = bias.defined() ? bias.data().data() : nullptr;
    double* y = out.mutable_data().data();
    std::vector<double> cols;
    for (std::size_t n = 0; n < g.n; ++n) {
      gather_cols(index, x + n * g.cin * g.h * g.w, cols);
      double* yn = y + n * g.cout * P;
      parallel_for(g.cout, kRowGrain, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t co = lo; co < hi; ++co) {
          double* row = yn + co * P;
          std::fill(row, row + P, b ? b[co] : 0.0);
          const double* wrow = wt + co * K;
          for (std::size_t k = 0; k < K; ++k) {
            const double wk = wrow[k];
            const double* src = cols.data() + k * P;
            for (std::size_t p = 0; p < P; ++p) row[p] += wk * src[p];
          }
        }
      });
    }
  }

  record_op("conv2d", {input, weight, bias}, out,
            [input, weight, bias, g, index](std::span<const double> gout) {
              const std::size_t K = g.k();
              const std::size_t P = g.p();
              const std::size_t plane = g.cin * g.h * g.w;
              const double* x = input.data().data();
              const double* wt = weight.data().data();
              const bool want_x = input.requires_grad();
              const bool want_w = weight.requires_grad();
              const bool want_b = bias.defined() && bias.requires_grad();
              double* gx = want_x ? input.grad_accumulator().data() : nullptr;
              double* gw = want_w ? weight.grad_accumulator().data() : nullptr;
              double* gb = want_b ? bias.grad_accumulator().data() : nullptr;
              std::vector<double> cols;
              std::vector<double> dcols;
              for (std::size_t n = 0; n < g.n; ++n) {
                const double* go = gout.data() + n * g.cout * P;
                if (gb) {
                  for (std::size_t co = 0; co < g.cout; ++co) {
                    double s = 0.0;
                    for (std::size_t p = 0; p < P; ++p) s += go[co * P + p];
                    gb[co] += s;
                  }
                }
                if (gw) {
                  gather_cols(index, x + n * plane, cols);
                  parallel_for(g.cout, kRowGrain, [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t co = lo; co < hi; ++co) {
                      const double* grow = go + co * P;
                      double* wrow = gw + co * K;
                      for (std::size_t k = 0; k < K; ++k) {
                        const double* src = cols.data() + k * P;
                        double s = 0.0;
                        for (std::size_t p = 0; p < P; ++p) s += grow[p] * src[p];
                        wrow[k] += s;
                      }
                    }
                  });
                }
                if (gx) {
                  dcols.assign(K * P, 0.0);
                  parallel_for(K, kRowGrain, [&](std::size_t lo, std::size_t hi) {
                    for (std::size_t k = lo; k < hi; ++k) {
                      double* drow = dcols.data() + k * P;
                      for (std::size_t co = 0; co < g.cout; ++co) {
                        const double wk = wt[co * K + k];
                        const double* grow = go + co * P;
                        for (std::size_t p = 0; p < P; ++p) drow[p] += wk * grow[p];
                      }
                    }
                  });
                  double* gxn = gx + n * plane;
                  for (std::size_t i = 0; i < index.size(); ++i) {
                    if (index[i] >= 0) gxn[index[i]] += dcols[i];
                  }
                }
              }
            });
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding, PadMode pad_mode) {
  return conv2d(input, weight, bias,
                Conv2dOptions{stride, Padding2d::uniform(padding), pad_mode});
}

Tensor maxpool2x2(const Tensor& input) {
  require_rank4("maxpool2x2", input);
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0) throw DimensionError("maxpool2x2", "height", "odd extent " + std::to_string(H));
  if (W % 2 != 0) throw DimensionError("maxpool2x2", "width", "odd extent " + std::to_string(W));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor out(Shape{N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.numel());
  const double* x = input.data().data();
  double* y = out.mutable_data().data();
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    const double* xp = x + plane * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (2 * oy) * W + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
        for (std::size_t c : cand) {
          if (xp[c] > xp[best]) best = c;
        }
        const std::size_t o = plane * Ho * Wo + oy * Wo + ox;
        y[o] = xp[best];
        argmax[o] = plane * H * W + best;
      }
    }
  }
  record_op("maxpool2x2", {input}, out,
            [input, argmax = std::move(argmax)](std::span<const double> gout) {
              auto gx = input.grad_accumulator();
              for (std::size_t o = 0; o < gout.size(); ++o) gx[argmax[o]] += gout[o];
            });
  return out;
}

Tensor upsample_nearest2x(const Tensor& input) {
  require_rank4("upsample_nearest2x", input);
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Ho = 2 * H, Wo = 2 * W;
  Tensor out(Shape{N, C, Ho, Wo});
  const double* x = input.data().data();
  double* y = out.mutable_data().data();
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const double* src = x + plane * H * W + (oy / 2) * W;
      double* dst = y + plane * Ho * Wo + oy * Wo;
      for (std::size_t ox = 0; ox < Wo; ++ox) dst[ox] = src[ox / 2];
    }
  }
  record_op("upsample_nearest2x", {input}, out,
            [input, N, C, H, W](std::span<const double> gout) {
              auto gx = input.grad_accumulator();
              const std::size_t Ho = 2 * H, Wo = 2 * W;
              for (std::size_t plane = 0; plane < N * C; ++plane) {
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                  const double* src = gout.data() + plane * Ho * Wo + oy * Wo;
                  double* dst = gx.data() + plane * H * W + (oy / 2) * W;
                  for (std::size_t ox = 0; ox < Wo; ++ox) dst[ox / 2] += src[ox];
                }
              }
            });
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out(Shape(input.shape()));
  const auto x = input.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  record_op("relu", {input}, out, [input](std::span<const double> gout) {
    const auto x = input.data();
    auto gx = input.grad_accumulator();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0) gx[i] += gout[i];
    }
  });
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank4("concat_channels", a);
  require_rank4("concat_channels", b);
  static const char* names[] = {"batch", "channel", "height", "width"};
  for (std::size_t axis : {0U, 2U, 3U}) {
    if (a.dim(axis) != b.dim(axis)) {
      throw DimensionError("concat_channels", names[axis],
                           shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
  }
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const std::size_t HW = a.dim(2) * a.dim(3);
  Tensor out(Shape{N, Ca + Cb, a.dim(2), a.dim(3)});
  auto y = out.mutable_data();
  const auto xa = a.data();
  const auto xb = b.data();
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(xa.begin() + n * Ca * HW, Ca * HW, y.begin() + n * (Ca + Cb) * HW);
    std::copy_n(xb.begin() + n * Cb * HW, Cb * HW, y.begin() + n * (Ca + Cb) * HW + Ca * HW);
  }
  record_op("concat_channels", {a, b}, out,
            [a, b, N, Ca, Cb, HW](std::span<const double> gout) {
              for (std::size_t n = 0; n < N; ++n) {
                const double* g = gout.data() + n * (Ca + Cb) * HW;
                if (a.requires_grad()) {
                  double* ga = a.grad_accumulator().data() + n * Ca * HW;
                  for (std::size_t i = 0; i < Ca * HW; ++i) ga[i] += g[i];
                }
                if (b.requires_grad()) {
                  double* gb = b.grad_accumulator().data() + n * Cb * HW;
                  for (std::size_t i = 0; i < Cb * HW; ++i) gb[i] += g[Ca * HW + i];
                }
              }
            });
  return out;
}

Tensor crop(const Tensor& input, std::size_t top, std::size_t left, std::size_t height,
            std::size_t width) {
  require_rank4("crop", input);
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (top + height > H) {
    throw DimensionError("crop", "height",
                         "window [" + std::to_string(top) + ", " + std::to_string(top + height) +
                             ") exceeds " + std::to_string(H));
  }
  if (left + width > W) {
    throw DimensionError("crop", "width",
                         "window [" + std::to_string(left) + ", " + std::to_string(left + width) +
                             ") exceeds " + std::to_string(W));
  }
  Tensor out(Shape{N, C, height, width});
  const double* x = input.data().data();
  double* y = out.mutable_data().data();
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    for (std::size_t r = 0; r < height; ++r) {
      std::copy_n(x + plane * H * W + (top + r) * W + left, width,
                  y + plane * height * width + r * width);
    }
  }
  record_op("crop", {input}, out,
            [input, top, left, height, width, N, C, H, W](std::span<const double> gout) {
              double* gx = input.grad_accumulator().data();
              for (std::size_t plane = 0; plane < N * C; ++plane) {
                for (std::size_t r = 0; r < height; ++r) {
                  const double* src = gout.data() + plane * height * width + r * width;
                  double* dst = gx + plane * H * W + (top + r) * W + left;
                  for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
                }
              }
            });
  return out;
}

Tensor pad(const Tensor& input, const Padding2d& padding, PadMode mode) {
  require_rank4("pad", input);
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (mode == PadMode::replicate && (H == 0 || W == 0)) {
    throw DimensionError("pad", H == 0 ? "height" : "width", "replicate padding of empty extent");
  }
  const std::size_t Ho = H + padding.top + padding.bottom;
  const std::size_t Wo = W + padding.left + padding.right;
  std::vector<std::ptrdiff_t> rows(Ho), cols(Wo);
  for (std::size_t y = 0; y < Ho; ++y) {
    rows[y] = source_index(static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(padding.top),
                           static_cast<std::ptrdiff_t>(H), mode);
  }
  for (std::size_t x = 0; x < Wo; ++x) {
    cols[x] = source_index(static_cast<std::ptrdiff_t>(x) - static_cast<std::ptrdiff_t>(padding.left),
                           static_cast<std::ptrdiff_t>(W), mode);
  }
  Tensor out(Shape{N, C, Ho, Wo});
  const double* x = input.data().data();
  double* y = out.mutable_data().data();
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    for (std::size_t r = 0; r < Ho; ++r) {
      for (std::size_t c = 0; c < Wo; ++c) {
        y[plane * Ho * Wo + r * Wo + c] =
            (rows[r] < 0 || cols[c] < 0)
                ? 0.0
                : x[plane * H * W + static_cast<std::size_t>(rows[r]) * W +
                    static_cast<std::size_t>(cols[c])];
      }
    }
  }
  record_op("pad", {input}, out,
            [input, rows, cols, N, C, H, W](std::span<const double> gout) {
              double* gx = input.grad_accumulator().data();
              const std::size_t Ho = rows.size(), Wo = cols.size();
              for (std::size_t plane = 0; plane < N * C; ++plane) {
                for (std::size_t r = 0; r < Ho; ++r) {
                  if (rows[r] < 0) continue;
                  for (std::size_t c = 0; c < Wo; ++c) {
                    if (cols[c] < 0) continue;
                    gx[plane * H * W + static_cast<std::size_t>(rows[r]) * W +
                       static_cast<std::size_t>(cols[c])] += gout[plane * Ho * Wo + r * Wo + c];
                  }
                }
              }
            });
  return out;
}

Tensor reshape(const Tensor& input, Shape shape) {
  if (shape_numel(shape) != input.numel()) {
    throw DimensionError("reshape", "numel",
                         shape_string(input.shape()) + " -> " + shape_string(shape));
  }
  Tensor out(std::move(shape), input.to_vector());
  record_op("reshape", {input}, out, [input](std::span<const double> gout) {
    auto gx = input.grad_accumulator();
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i];
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(Shape(a.shape()));
  const auto xa = a.data(), xb = b.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] + xb[i];
  record_op("add", {a, b}, out, [a, b](std::span<const double> gout) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto g = t->grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out(Shape(a.shape()));
  const auto xa = a.data(), xb = b.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] - xb[i];
  record_op("sub", {a, b}, out, [a, b](std::span<const double> gout) {
    if (a.requires_grad()) {
      auto g = a.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gout[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(Shape(a.shape()));
  const auto xa = a.data(), xb = b.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] * xb[i];
  record_op("mul", {a, b}, out, [a, b](std::span<const double> gout) {
    const auto xa = a.data(), xb = b.data();
    if (a.requires_grad()) {
      auto g = a.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * xb[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * xa[i];
    }
  });
  return out;
}

Tensor square(const Tensor& x) {
  Tensor out(Shape(x.shape()));
  const auto v = x.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = v[i] * v[i];
  record_op("square", {x}, out, [x](std::span<const double> gout) {
    const auto v = x.data();
    auto g = x.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * v[i] * gout[i];
  });
  return out;
}

Tensor sqrt_eps(const Tensor& x, double eps) {
  Tensor out(Shape(x.shape()));
  const auto v = x.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::sqrt(v[i] + eps);
  record_op("sqrt_eps", {x}, out, [x, root = out.to_vector()](std::span<const double> gout) {
    auto g = x.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * 0.5 / root[i];
  });
  return out;
}

Tensor scalar_mul(const Tensor& x, double s) {
  Tensor out(Shape(x.shape()));
  const auto v = x.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = s * v[i];
  record_op("scalar_mul", {x}, out, [x, s](std::span<const double> gout) {
    auto g = x.grad_accumulator();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * gout[i];
  });
  return out;
}

Tensor mean_all(const Tensor& x) {
  const auto v = x.data();
  if (v.empty()) throw DimensionError("mean_all", "numel", "mean of an empty tensor");
  double sum = 0.0;
  for (double e : v) sum += e;
  const double n = static_cast<double>(v.size());
  Tensor out = Tensor::scalar(sum / n);
  record_op("mean_all", {x}, out, [x, n](std::span<const double> gout) {
    auto g = x.grad_accumulator();
    const double share = gout[0] / n;
    for (double& e : g) e += share;
  });
  return out;
}

}  // namespace unetsr::ops
