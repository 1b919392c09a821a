#include "unetsr/resample.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "unetsr/error.hpp"

namespace unetsr {

double cubic_kernel(double t, double a) {
  t = std::abs(t);
  if (t < 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
  return 0.0;
}

std::vector<ResampleTaps> resample_taps(std::size_t in, std::size_t out, double a) {
  if (in == 0 || out == 0) throw ContractError("resample: extents must be >= 1");
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double stretch = std::max(scale, 1.0);
  const double support = 2.0 * stretch;
  const auto last = static_cast<long>(in) - 1;
  std::vector<ResampleTaps> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double centre = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const auto first = static_cast<long>(std::ceil(centre - support));
    const auto stop = static_cast<long>(std::floor(centre + support));
    auto& t = taps[o];
    double total = 0.0;
    for (long i = first; i <= stop; ++i) {
      const double w = cubic_kernel((static_cast<double>(i) - centre) / stretch, a);
      if (w == 0.0) continue;
      t.index.push_back(static_cast<std::size_t>(std::clamp(i, 0L, last)));
      t.weight.push_back(w);
      total += w;
    }
    for (auto& w : t.weight) w /= total;
  }
  return taps;
}

namespace {

// Resamples one H x W plane: rows first, then columns.
void resample_plane(const double* src, std::size_t h, std::size_t w, double* dst,
                    const std::vector<ResampleTaps>& row_taps,
                    const std::vector<ResampleTaps>& col_taps, std::vector<double>& scratch) {
  const std::size_t out_w = col_taps.size();
  const std::size_t out_h = row_taps.size();
  scratch.assign(h * out_w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    const double* in_row = src + y * w;
    double* mid_row = scratch.data() + y * out_w;
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto& t = col_taps[x];
      double acc = 0.0;
      for (std::size_t k = 0; k < t.index.size(); ++k) acc += t.weight[k] * in_row[t.index[k]];
      mid_row[x] = acc;
    }
  }
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto& t = row_taps[y];
    double* out_row = dst + y * out_w;
    for (std::size_t x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < t.index.size(); ++k) {
        acc += t.weight[k] * scratch[t.index[k] * out_w + x];
      }
      out_row[x] = acc;
    }
  }
}

}  // namespace

Tensor bicubic_resize(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 4) {
    throw DimensionError("bicubic_resize", "rank",
                         "expected N x C x H x W, got " + shape_string(image.shape()));
  }
  if (out_h == 0 || out_w == 0) {
    throw ContractError("bicubic_resize: target extent must be >= 1, got " +
                        std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const std::size_t planes = image.dim(0) * image.dim(1);
  const std::size_t h = image.dim(2), w = image.dim(3);
  const auto row_taps = resample_taps(h, out_h);
  const auto col_taps = resample_taps(w, out_w);
  Tensor out(Shape{image.dim(0), image.dim(1), out_h, out_w});
  const double* src = image.data().data();
  double* dst = out.mutable_data().data();
  std::vector<double> scratch;
  for (std::size_t p = 0; p < planes; ++p) {
    resample_plane(src + p * h * w, h, w, dst + p * out_h * out_w, row_taps, col_taps, scratch);
  }
  return out;
}

ImageBuf bicubic_resize(const ImageBuf& image, std::size_t out_h, std::size_t out_w) {
  const Tensor resized = bicubic_resize(to_tensor(image), out_h, out_w);
  ImageBuf out(out_h, out_w);
  out.pixels = resized.to_vector();
  out.source_path = image.source_path;
  return out;
}

}  // namespace unetsr
