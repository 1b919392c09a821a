#include "unetsr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "unetsr/error.hpp"

namespace unetsr {

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& f,
                                   const std::vector<NamedTensor>& wrt, double step,
                                   double tolerance) {
  std::vector<bool> saved_flags;
  for (const auto& item : wrt) {
    saved_flags.push_back(item.tensor.requires_grad());
    Tensor t = item.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    GradTape tape;
    const Tensor loss = f();
    if (loss.numel() != 1) throw ContractError("finite_diff_check: f must be scalar-valued");
    tape.backward(loss);
  }
  for (const auto& item : wrt) {
    const auto g = item.tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(item.tensor.numel(), 0.0);
  }

  FiniteDiffReport report;
  NoGradScope no_grad;
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    Tensor x = wrt[t].tensor;
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double up = f().item();
      values[i] = original - step;
      const double down = f().item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[t][i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++report.checked;
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      if (report.worst.empty() || rel_err > report.max_rel_err) {
        report.max_rel_err = rel_err;
        report.worst = wrt[t].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  report.pass = report.max_rel_err <= tolerance;

  for (std::size_t t = 0; t < wrt.size(); ++t) {
    Tensor x = wrt[t].tensor;
    x.zero_grad();
    x.set_requires_grad(saved_flags[t]);
  }
  return report;
}

FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                   double step, double tolerance) {
  Tensor local = x.clone();
  return finite_diff_check([&] { return f(local); }, {{"x", local}}, step, tolerance);
}

}  // namespace unetsr
