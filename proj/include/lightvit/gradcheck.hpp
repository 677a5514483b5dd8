#pragma once

#include <string>
#include <vector>

#include "lightvit/config.hpp"

namespace lightvit {

struct GradCheckRow {
  std::string group;
  double max_rel_err = 0.0;
};

struct GradCheckResult {
  std::vector<GradCheckRow> rows;
  double max_rel_err = 0.0;
};

// |a - f| relative to max(|a|, |f|), floored so near-zero gradients are
// compared absolutely at 1e-8 effective precision.
double grad_rel_err(double analytic, double numeric);

// Checks the taped backward of a 64-bit model against central finite
// differences (step h) for every parameter element, grouped per parameter.
GradCheckResult gradcheck_model(const ModelConfig& cfg, uint64_t seed, double step = 1e-5,
                                int64_t resolution = 32);

}  // namespace lightvit
