#include "isdet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace isdet {

namespace {
constexpr double kRelFloor = 1e-8;  // keeps the metric sane near zero gradients
}

Tensor fd_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  if (h <= 0) throw std::invalid_argument("fd_gradient: step must be positive");
  Tensor probe = x.detach();
  auto vals = probe.values_mut();
  std::vector<double> grad(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) {
    double saved = vals[i];
    vals[i] = saved + h;
    double up = f(probe).scalar();
    vals[i] = saved - h;
    double down = f(probe).scalar();
    vals[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(grad));
}

GradReport gradcheck(const std::function<Tensor()>& forward, const std::vector<Tensor>& wrt,
                     double tol, double h) {
  for (const Tensor& t : wrt) {
    if (!t.defined() || !t.requires_grad()) {
      throw std::invalid_argument("gradcheck: every wrt tensor must be gradient-tracked");
    }
  }

  std::vector<Tensor> params = wrt;
  for (Tensor& t : params) t.clear_grad();
  Tensor loss = forward();
  backward(loss);

  GradReport report;
  report.tol = tol;
  for (Tensor& t : params) {
    Tensor analytic = t.grad();
    auto vals = t.values_mut();
    auto an = analytic.values();
    for (size_t i = 0; i < vals.size(); ++i) {
      double saved = vals[i];
      vals[i] = saved + h;
      double up = forward().scalar();
      vals[i] = saved - h;
      double down = forward().scalar();
      vals[i] = saved;
      double fd = (up - down) / (2.0 * h);
      double abs_err = std::abs(an[i] - fd);
      double rel_err = abs_err / std::max({std::abs(an[i]), std::abs(fd), kRelFloor});
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, rel_err);
    }
  }
  report.pass = report.max_rel_err <= tol || report.max_abs_err <= kRelFloor;
  return report;
}

}  // namespace isdet
