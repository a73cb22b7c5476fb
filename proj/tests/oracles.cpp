#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace isdet::test {

std::vector<double> naive_conv2d(const std::vector<double>& x, int64_t b, int64_t cin, int64_t h,
                                 int64_t w, const std::vector<double>& weight, int64_t cout,
                                 int64_t k, int64_t stride, int64_t pad,
                                 const std::vector<double>* bias, int64_t* mac_census) {
  int64_t oh = (h + 2 * pad - k) / stride + 1;
  int64_t ow = (w + 2 * pad - k) / stride + 1;
  std::vector<double> y(static_cast<size_t>(b * cout * oh * ow), 0.0);
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          double acc = bias ? (*bias)[static_cast<size_t>(co)] : 0.0;
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t kh = 0; kh < k; ++kh)
              for (int64_t kw = 0; kw < k; ++kw) {
                int64_t ih = i * stride - pad + kh;
                int64_t iw = j * stride - pad + kw;
                if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
                acc += x[static_cast<size_t>(((bi * cin + ci) * h + ih) * w + iw)] *
                       weight[static_cast<size_t>(((co * cin + ci) * k + kh) * k + kw)];
                if (mac_census) ++*mac_census;
              }
          y[static_cast<size_t>(((bi * cout + co) * oh + i) * ow + j)] = acc;
        }
  return y;
}

Tensor index_map_reconstruct(const Tensor& x, int64_t patch) {
  int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t lh = (h + patch - 1) / patch;
  int64_t lw = (w + patch - 1) / patch;
  int64_t l = lh * lw;
  int64_t k2 = patch * patch;
  std::vector<double> out(static_cast<size_t>(b * k2 * c * l), 0.0);
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t ih = 0; ih < h; ++ih)
        for (int64_t iw = 0; iw < w; ++iw) {
          int64_t p = (ih % patch) * patch + iw % patch;
          int64_t slot = (ih / patch) * lw + iw / patch;
          out[static_cast<size_t>(((bi * k2 + p) * c + ci) * l + slot)] =
              x.at({bi, ci, ih, iw});
        }
  return Tensor({b, k2, c, l}, std::move(out));
}

std::vector<double> slice_attention(const std::vector<double>& q, const std::vector<double>& k,
                                    const std::vector<double>& v, int64_t c, int64_t l) {
  double inv_sqrt_l = 1.0 / std::sqrt(static_cast<double>(l));
  std::vector<double> scores(static_cast<size_t>(c * c), 0.0);
  for (int64_t i = 0; i < c; ++i)
    for (int64_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int64_t t = 0; t < l; ++t) {
        acc += (q[static_cast<size_t>(i * l + t)] * inv_sqrt_l) * k[static_cast<size_t>(j * l + t)];
      }
      scores[static_cast<size_t>(i * c + j)] = acc;
    }
  std::vector<double> weights(scores.size());
  for (int64_t i = 0; i < c; ++i) {
    double mx = scores[static_cast<size_t>(i * c)];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, scores[static_cast<size_t>(i * c + j)]);
    double denom = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      double e = std::exp(scores[static_cast<size_t>(i * c + j)] - mx);
      weights[static_cast<size_t>(i * c + j)] = e;
      denom += e;
    }
    for (int64_t j = 0; j < c; ++j) weights[static_cast<size_t>(i * c + j)] /= denom;
  }
  std::vector<double> out(static_cast<size_t>(c * l), 0.0);
  for (int64_t i = 0; i < c; ++i)
    for (int64_t t = 0; t < l; ++t) {
      double acc = 0.0;
      for (int64_t j = 0; j < c; ++j) {
        acc += weights[static_cast<size_t>(i * c + j)] * v[static_cast<size_t>(j * l + t)];
      }
      out[static_cast<size_t>(i * l + t)] = acc;
    }
  return out;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  auto av = a.values();
  auto bv = b.values();
  double m = 0.0;
  for (size_t i = 0; i < av.size(); ++i) m = std::max(m, std::abs(av[i] - bv[i]));
  return m;
}

double max_rel_diff(const Tensor& a, const Tensor& b, double floor) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_rel_diff: shape mismatch");
  auto av = a.values();
  auto bv = b.values();
  double m = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    double denom = std::max({std::abs(av[i]), std::abs(bv[i]), floor});
    m = std::max(m, std::abs(av[i] - bv[i]) / denom);
  }
  return m;
}

}  // namespace isdet::test
