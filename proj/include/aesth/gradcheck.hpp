#pragma once

#include <cmath>
#include <vector>

#include "aesth/tensor.hpp"

namespace aesth {

struct GradcheckOptions {
  double step = 1e-5;
  /// Lower bound on the relative-error denominator, so coordinates whose true
  /// derivative is ~0 are judged by absolute error instead.
  double denom_floor = 1e-8;
  /// Coordinates to probe; empty means all of them.
  std::vector<Index> coordinates;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  Index worst_coordinate = -1;
  Index checked = 0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares the analytic gradient of a scalar function against central
/// differences (f(x+h e_i) - f(x-h e_i)) / 2h.
///
/// `f(x, grad)` returns f(x) and, when `grad` is non-null, writes df/dx into it.
template <typename Scalar, typename Fn>
GradcheckReport gradcheck(Fn&& f, const Tensor<Scalar>& x, const GradcheckOptions& opt = {}) {
  if (!(opt.step > 0)) throw UsageError("gradcheck: step must be positive");
  Tensor<Scalar> analytic = Tensor<Scalar>::zeros_like(x);
  const Scalar f0 = f(x, &analytic);
  if (!std::isfinite(static_cast<double>(f0))) throw NumericError("gradcheck: f(x) is not finite");
  require_same_shape(x, analytic, "gradcheck");

  std::vector<Index> coords = opt.coordinates;
  if (coords.empty()) {
    coords.resize(static_cast<std::size_t>(x.size()));
    for (Index i = 0; i < x.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
  }

  GradcheckReport report;
  Tensor<Scalar> probe = x;
  const Scalar h = static_cast<Scalar>(opt.step);
  for (Index i : coords) {
    const Scalar orig = probe.values()[i];
    probe.values()[i] = orig + h;
    const Scalar fp = f(probe, nullptr);
    probe.values()[i] = orig - h;
    const Scalar fm = f(probe, nullptr);
    probe.values()[i] = orig;
    if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
      throw NumericError("gradcheck: non-finite f at coordinate " + std::to_string(i));
    const double numeric = static_cast<double>(fp - fm) / (2.0 * opt.step);
    const double a = static_cast<double>(analytic.values()[i]);
    const double rel = relative_error(a, numeric, opt.denom_floor);
    report.max_abs_error = std::max(report.max_abs_error, std::abs(a - numeric));
    if (report.worst_coordinate < 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coordinate = i;
    }
    ++report.checked;
  }
  return report;
}

}  // namespace aesth
