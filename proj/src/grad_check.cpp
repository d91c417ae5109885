#include "recbase/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "recbase/error.hpp"

namespace recbase::nn {
namespace {

double scalar_of(const Tensor& t) {
  if (t.size() != 1) throw ShapeError("grad_check: loss must be scalar", t.shape(), {1});
  return t[0];
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& loss, std::span<const GradCheckTarget> targets,
                           double h, double tolerance, double abs_floor) {
  GradCheckReport report;
  scalar_of(loss());
  for (const auto& target : targets) {
    if (target.values.size() != target.analytic.size()) {
      throw ShapeError("grad_check '" + target.name + "'", {target.values.size()}, {target.analytic.size()});
    }
    for (size_t i = 0; i < target.values.size(); ++i) {
      const double orig = target.values[i];
      target.values[i] = orig + h;
      const double up = scalar_of(loss());
      target.values[i] = orig - h;
      const double down = scalar_of(loss());
      target.values[i] = orig;

      const double numeric = (up - down) / (2.0 * h);
      const double analytic = target.analytic[i];
      const double abs_err = std::abs(numeric - analytic);
      const double rel_err = abs_err / std::max({std::abs(numeric), std::abs(analytic), abs_floor});
      ++report.checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error) {
        report.max_rel_error = rel_err;
        report.worst = target.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace recbase::nn
