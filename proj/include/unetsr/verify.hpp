#pragma once

#include <string>
#include <vector>

#include "unetsr/gradcheck.hpp"

namespace unetsr {

struct GradcheckCase {
  std::string suite;
  std::string name;
  double tolerance = 0.0;
  FiniteDiffReport report;
};

/// Names of the op-level, loss-level and model-level suites.
const std::vector<std::string>& gradcheck_suites();

/// Autograd vs central differences (h = 1e-5) for every differentiable op
/// ("ops"), the losses ("loss") and a depth-2, x2 model under MixGE on an
/// 8 x 8 input ("model"). `suite` is one of those or "all". Throws
/// ConfigError on an unknown suite.
std::vector<GradcheckCase> run_gradcheck(const std::string& suite);

}  // namespace unetsr
