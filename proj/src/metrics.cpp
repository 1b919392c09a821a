#include "unetsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "unetsr/error.hpp"
#include "unetsr/image.hpp"
#include "unetsr/parallel.hpp"

namespace unetsr {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(op, "shape", shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json json_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace

double mean_squared_error(const Tensor& a, const Tensor& b) {
  require_same_shape("mean_squared_error", a, b);
  std::vector<double> sq(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = (x[i] - y[i]) * (x[i] - y[i]);
  return pairwise_sum(sq) / static_cast<double>(sq.size());
}

double psnr(const Tensor& y, const Tensor& yhat) {
  require_same_shape("psnr", y, yhat);
  const double mse = mean_squared_error(y, yhat);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

std::vector<double> ssim_weights(const SsimWindow& window) {
  const std::size_t n = window.size;
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * window.sigma * window.sigma));
  }
  std::vector<double> w(n * n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) total += w[i * n + j] = g[i] * g[j];
  for (auto& v : w) v /= total;
  return w;
}

double ssim(const Tensor& y, const Tensor& yhat, const SsimWindow& window) {
  require_same_shape("ssim", y, yhat);
  if (y.rank() != 4) throw DimensionError("ssim", "rank", "expected N x C x H x W");
  if (window.size == 0 || !(window.sigma > 0.0)) throw ContractError("ssim: invalid window");
  const std::size_t n = window.size;
  const std::size_t H = y.dim(2), W = y.dim(3);
  if (H < n || W < n) {
    throw ContractError("ssim: image " + std::to_string(H) + "x" + std::to_string(W) +
                        " is smaller than the " + std::to_string(n) + "x" + std::to_string(n) +
                        " window");
  }
  const auto w = ssim_weights(window);
  const double c1 = (window.k1 * window.peak) * (window.k1 * window.peak);
  const double c2 = (window.k2 * window.peak) * (window.k2 * window.peak);
  const std::size_t planes = y.dim(0) * y.dim(1);
  const std::size_t oh = H - n + 1, ow = W - n + 1;
  std::vector<double> values(planes * oh * ow);
  const double* ya = y.data().data();
  const double* yb = yhat.data().data();

  parallel_for(planes * oh, 1, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t row = lo; row < hi; ++row) {
      const std::size_t p = row / oh, i = row % oh;
      const double* a = ya + p * H * W;
      const double* b = yb + p * H * W;
      for (std::size_t j = 0; j < ow; ++j) {
        double ma = 0.0, mb = 0.0;
        for (std::size_t u = 0; u < n; ++u)
          for (std::size_t v = 0; v < n; ++v) {
            const std::size_t at = (i + u) * W + j + v;
            ma += w[u * n + v] * a[at];
            mb += w[u * n + v] * b[at];
          }
        double va = 0.0, vb = 0.0, cov = 0.0;
        for (std::size_t u = 0; u < n; ++u)
          for (std::size_t v = 0; v < n; ++v) {
            const std::size_t at = (i + u) * W + j + v;
            const double da = a[at] - ma, db = b[at] - mb;
            va += w[u * n + v] * (da * da);
            vb += w[u * n + v] * (db * db);
            cov += w[u * n + v] * (da * db);
          }
        const double structure =
            window.form == SsimForm::covariance ? cov : std::sqrt(va) * std::sqrt(vb);
        values[row * ow + j] = ((2.0 * ma * mb + c1) * (2.0 * structure + c2)) /
                               ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    }
  });
  return pairwise_sum(values) / static_cast<double>(values.size());
}

Tensor to_peak_scale(const Tensor& image) {
  Tensor out(image.shape());
  const auto src = image.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::clamp(src[i], 0.0, 1.0) * 255.0;
  return out;
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

MetricReport summarize(std::vector<ImageMetrics> rows) {
  MetricReport report;
  report.rows = std::move(rows);
  if (report.rows.empty()) return report;
  std::vector<double> p, s;
  for (const auto& r : report.rows) {
    p.push_back(r.psnr_db);
    s.push_back(r.ssim);
  }
  report.mean_psnr_db = pairwise_sum(p) / static_cast<double>(p.size());
  report.mean_ssim = pairwise_sum(s) / static_cast<double>(s.size());
  return report;
}

std::string report_csv(const MetricReport& report) {
  std::string out = "path,scale,psnr_db,ssim\n";
  for (const auto& r : report.rows) {
    std::string path = r.path;
    if (path.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char c : path) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
      path = quoted + "\"";
    }
    out += path + "," + std::to_string(r.scale) + "," + format_number(r.psnr_db) + "," +
           format_number(r.ssim) + "\n";
  }
  return out;
}

std::string report_json(const MetricReport& report) {
  const nlohmann::json j = {{"images", report.rows.size()},
                            {"mean_psnr_db", json_number(report.mean_psnr_db)},
                            {"mean_ssim", json_number(report.mean_ssim)}};
  return j.dump(2) + "\n";
}

MetricReport evaluate_pairs(const PairManifest& pairs, const Predictor& predict,
                            const SsimWindow& window) {
  std::vector<ImageMetrics> rows;
  for (const auto& entry : pairs.entries) {
    const Tensor lr = to_tensor(decode_image(entry.lr));
    const Tensor hr = to_tensor(decode_image(entry.hr));
    Tensor pred;
    {
      NoGradScope no_grad;
      pred = predict(lr, entry);
    }
    if (pred.shape() != hr.shape()) {
      throw DimensionError("evaluate", "shape",
                           entry.lr.string() + ": prediction " + shape_string(pred.shape()) +
                               " vs ground truth " + shape_string(hr.shape()));
    }
    const Tensor y = to_peak_scale(hr), yhat = to_peak_scale(pred);
    rows.push_back({entry.hr.generic_string(), entry.scale, psnr(y, yhat), ssim(y, yhat, window)});
  }
  return summarize(std::move(rows));
}

}  // namespace unetsr
