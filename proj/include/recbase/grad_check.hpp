#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "recbase/tensor.hpp"

namespace recbase::nn {

struct GradCheckTarget {
  std::string name;
  std::span<double> values;          // perturbed in place, restored afterwards
  std::span<const double> analytic;  // gradient computed by the backward pass
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  size_t checked = 0;
  std::string worst;  // "<target>[<index>]"
  bool passed = true;
};

/// Central finite-difference check: (f(x+h) - f(x-h)) / 2h against the
/// analytic gradient. Relative error is |a - n| / max(|a|, |n|, abs_floor).
/// `loss` must evaluate to a single element; anything else is a shape error.
GradCheckReport grad_check(const std::function<Tensor()>& loss,
                           std::span<const GradCheckTarget> targets, double h = 1e-4,
                           double tolerance = 1e-3, double abs_floor = 1e-4);

}  // namespace recbase::nn
