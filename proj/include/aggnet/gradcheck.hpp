#pragma once

#include <cmath>
#include <cstddef>
#include <functional>

#include "aggnet/errors.hpp"
#include "aggnet/tensor.hpp"

namespace aggnet {

struct GradCheckResult {
  bool ok = false;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
};

// Central-finite-difference check of an analytic gradient.
//
// For every coordinate i the numeric derivative (f(x+eps*e_i)-f(x-eps*e_i))/(2*eps)
// is compared against analytic_grad[i]; the relative error is
// |numeric - g_i| / max(1, |g_i|) and the check passes iff the maximum over
// coordinates is <= tol. Every backward pass in the repo is validated against
// this routine.
inline GradCheckResult grad_check(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, const Tensor& analytic_grad, double eps,
                                  double tol) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ConfigError("grad_check eps must be in (0, 1e-2]");
  if (!x.same_shape(analytic_grad)) throw DimensionError("grad_check shape mismatch");

  GradCheckResult res;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: non-finite objective evaluation");
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double g = analytic_grad[i];
    const double rel = std::abs(numeric - g) / std::max(1.0, std::abs(g));
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = i;
    }
  }
  res.ok = res.max_rel_err <= tol;
  return res;
}

}  // namespace aggnet
