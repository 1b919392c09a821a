#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "unetsr/pairs.hpp"
#include "unetsr/tensor.hpp"

namespace unetsr {

/// Mean squared error of two equally shaped tensors (no tape).
double mean_squared_error(const Tensor& a, const Tensor& b);

/// 10 log10(255^2 / MSE) for [0, 255]-scaled tensors; +infinity when the
/// inputs are identical.
double psnr(const Tensor& y, const Tensor& yhat);

enum class SsimForm {
  /// 2 sigma_xy in the structure term.
  covariance,
  /// 2 sigma_x sigma_y in the structure term; ignores correlation.
  deviation_product,
};

struct SsimWindow {
  std::size_t size = 11;
  double sigma = 1.5;
  SsimForm form = SsimForm::covariance;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 255.0;
};

/// Gaussian weights of `window`, normalised to sum 1, row-major.
std::vector<double> ssim_weights(const SsimWindow& window);

/// Mean SSIM over every window position fully inside the image and every
/// (image, channel) plane of two N x C x H x W tensors on the `peak` scale.
/// Throws ContractError when H or W is smaller than the window.
double ssim(const Tensor& y, const Tensor& yhat, const SsimWindow& window = {});

/// Clamps a [0, 1]-range prediction and rescales it to [0, 255] (no rounding).
Tensor to_peak_scale(const Tensor& image);

/// Sum with pairwise splitting; the result does not depend on thread count.
double pairwise_sum(std::span<const double> values);

struct ImageMetrics {
  std::string path;
  int scale = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<ImageMetrics> rows;
  /// +infinity if any row is +infinity.
  double mean_psnr_db = 0.0;
  double mean_ssim = 0.0;
};

/// Fills the dataset means from `rows`.
MetricReport summarize(std::vector<ImageMetrics> rows);

/// "path,scale,psnr_db,ssim" then one row per image; infinite PSNR as "inf".
std::string report_csv(const MetricReport& report);
/// {"images": n, "mean_psnr_db": x | "inf", "mean_ssim": y}
std::string report_json(const MetricReport& report);

/// Super-resolves `lr` (1 x 3 x h x w, [0, 1]) for the given entry.
using Predictor = std::function<Tensor(const Tensor& lr, const PairEntry& entry)>;

/// Decodes every pair, runs `predict` and scores the clamped result against
/// the HR image on the [0, 255] scale.
MetricReport evaluate_pairs(const PairManifest& pairs, const Predictor& predict,
                            const SsimWindow& window = {});

}  // namespace unetsr
