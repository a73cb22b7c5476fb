#pragma once

#include <functional>
#include <vector>

#include "isdet/tensor.hpp"

namespace isdet {

/// Outcome of comparing reverse-mode gradients against the central-difference
/// oracle. pass holds iff max_rel_err <= tol or max_abs_err <= abs_floor.
struct GradReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/// Central-difference gradient of a scalar-valued function at x:
/// g_i = (f(x + h·e_i) - f(x - h·e_i)) / 2h. The step-size choice is the
/// caller's responsibility.
Tensor fd_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                   double h = 1e-5);

/// Checks reverse-mode gradients of `forward` with respect to each tensor in
/// `wrt` against the central-difference oracle. `forward` must rebuild the
/// computation from the current values of the `wrt` tensors on every call;
/// coordinates are perturbed in place and restored. Relative error uses
/// |a-b| / max(|a|, |b|, floor) with floor = 1e-8.
GradReport gradcheck(const std::function<Tensor()>& forward, const std::vector<Tensor>& wrt,
                     double tol = 1e-4, double h = 1e-5);

}  // namespace isdet
