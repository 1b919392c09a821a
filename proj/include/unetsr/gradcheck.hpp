#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "unetsr/tensor.hpp"

namespace unetsr {

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
  /// "<tensor>[<flat index>]" of the worst element.
  std::string worst;
  bool pass = true;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Compares autograd gradients of the scalar `f()` with respect to every
/// element of `wrt` against central differences (f(x+h) - f(x-h)) / 2h.
/// Relative error uses a max(|a|, |b|, 1e-8) denominator. The tensors in
/// `wrt` are perturbed in place and restored; their gradient buffers are
/// cleared on return.
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& f,
                                   const std::vector<NamedTensor>& wrt, double step,
                                   double tolerance);

/// Single-input form: checks d f(x) / dx on a private copy of `x`.
FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                   double step, double tolerance);

}  // namespace unetsr
