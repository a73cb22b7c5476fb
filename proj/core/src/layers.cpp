#include "isdet/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace isdet {

namespace {

struct ConvDims {
  int64_t b, cin, h, w, cout, k, stride, pad, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& weight, const Tensor& bias,
                   const ConvSpec& spec) {
  if (x.ndim() != 4) throw std::invalid_argument("conv2d: input must be B×C×H×W");
  if (weight.ndim() != 4) throw std::invalid_argument("conv2d: weight must be Cout×Cin×k×k");
  ConvDims d{};
  d.b = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = weight.dim(0);
  d.k = weight.dim(2);
  d.stride = spec.stride;
  d.pad = spec.padding;
  if (weight.dim(1) != d.cin || weight.dim(3) != d.k || d.cin != spec.in_channels ||
      d.cout != spec.out_channels || d.k != spec.kernel) {
    throw std::invalid_argument("conv2d: weight shape " + shape_str(weight.shape()) +
                                " inconsistent with spec/input " + shape_str(x.shape()));
  }
  if (bias.defined() != spec.bias || (bias.defined() && bias.numel() != d.cout)) {
    throw std::invalid_argument("conv2d: bias inconsistent with spec");
  }
  if (d.stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
  int64_t num_h = d.h + 2 * d.pad - d.k;
  int64_t num_w = d.w + 2 * d.pad - d.k;
  if (num_h < 0 || num_w < 0 || num_h % d.stride != 0 || num_w % d.stride != 0) {
    throw std::invalid_argument("conv2d: non-integral output extent for input " +
                                shape_str(x.shape()));
  }
  d.oh = num_h / d.stride + 1;
  d.ow = num_w / d.stride + 1;
  return d;
}

template <typename S>
void conv_forward_kernel(const double* x, const double* w, const double* bias, double* y,
                         const ConvDims& d) {
  for (int64_t b = 0; b < d.b; ++b) {
    for (int64_t co = 0; co < d.cout; ++co) {
      const double* wbase = w + co * d.cin * d.k * d.k;
      double* ybase = y + (b * d.cout + co) * d.oh * d.ow;
      for (int64_t oh = 0; oh < d.oh; ++oh) {
        for (int64_t ow = 0; ow < d.ow; ++ow) {
          S acc = bias ? static_cast<S>(bias[co]) : S(0);
          for (int64_t ci = 0; ci < d.cin; ++ci) {
            const double* xc = x + (b * d.cin + ci) * d.h * d.w;
            const double* wc = wbase + ci * d.k * d.k;
            for (int64_t kh = 0; kh < d.k; ++kh) {
              int64_t ih = oh * d.stride - d.pad + kh;
              if (ih < 0 || ih >= d.h) continue;
              for (int64_t kw = 0; kw < d.k; ++kw) {
                int64_t iw = ow * d.stride - d.pad + kw;
                if (iw < 0 || iw >= d.w) continue;
                acc += static_cast<S>(xc[ih * d.w + iw]) * static_cast<S>(wc[kh * d.k + kw]);
              }
            }
          }
          ybase[oh * d.ow + ow] = static_cast<double>(acc);
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
  ConvDims d = conv_dims(x, weight, bias, spec);
  std::vector<double> out(static_cast<size_t>(d.b * d.cout * d.oh * d.ow));
  const double* bias_ptr = bias.defined() ? bias.values().data() : nullptr;
  if (x.dtype() == DType::f32 && weight.dtype() == DType::f32) {
    conv_forward_kernel<float>(x.values().data(), weight.values().data(), bias_ptr, out.data(), d);
  } else {
    conv_forward_kernel<double>(x.values().data(), weight.values().data(), bias_ptr, out.data(),
                                d);
  }
  Shape out_shape{d.b, d.cout, d.oh, d.ow};
  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  DType dt = promote(x, weight);

  return make_op(std::move(out_shape), std::move(out), dt, std::move(parents),
                 [d](BackwardContext& ctx) {
                   const double* g = ctx.out_grad().data();
                   const double* xv = ctx.parent_values(0).data();
                   const double* wv = ctx.parent_values(1).data();
                   bool need_dx = ctx.parent_needs_grad(0);
                   bool need_dw = ctx.parent_needs_grad(1);
                   bool has_bias = ctx.num_parents() == 3;
                   bool need_db = has_bias && ctx.parent_needs_grad(2);
                   double* dx = need_dx ? ctx.parent_grad(0).data() : nullptr;
                   double* dw = need_dw ? ctx.parent_grad(1).data() : nullptr;
                   double* db = need_db ? ctx.parent_grad(2).data() : nullptr;
                   for (int64_t b = 0; b < d.b; ++b) {
                     for (int64_t co = 0; co < d.cout; ++co) {
                       const double* gbase = g + (b * d.cout + co) * d.oh * d.ow;
                       for (int64_t oh = 0; oh < d.oh; ++oh) {
                         for (int64_t ow = 0; ow < d.ow; ++ow) {
                           double gv = gbase[oh * d.ow + ow];
                           if (gv == 0.0) continue;
                           if (db) db[co] += gv;
                           for (int64_t ci = 0; ci < d.cin; ++ci) {
                             int64_t xoff = (b * d.cin + ci) * d.h * d.w;
                             int64_t woff = (co * d.cin + ci) * d.k * d.k;
                             for (int64_t kh = 0; kh < d.k; ++kh) {
                               int64_t ih = oh * d.stride - d.pad + kh;
                               if (ih < 0 || ih >= d.h) continue;
                               for (int64_t kw = 0; kw < d.k; ++kw) {
                                 int64_t iw = ow * d.stride - d.pad + kw;
                                 if (iw < 0 || iw >= d.w) continue;
                                 if (dw) dw[woff + kh * d.k + kw] += gv * xv[xoff + ih * d.w + iw];
                                 if (dx) dx[xoff + ih * d.w + iw] += gv * wv[woff + kh * d.k + kw];
                               }
                             }
                           }
                         }
                       }
                     }
                   }
                 });
}

namespace {

void check_norm_input(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const char* name) {
  if (x.ndim() != 4) throw std::invalid_argument(std::string(name) + ": input must be B×C×H×W");
  int64_t c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw std::invalid_argument(std::string(name) + ": affine parameters must have C elements");
  }
}

// Shared normalization backward: groups of `m` contiguous elements were
// normalized together; `group_channel(gi)` maps group index -> channel.
struct NormBack {
  double eps;
  int64_t groups, m, channels;
  bool per_sample;  // instance norm: group index = b*C + c

  void operator()(BackwardContext& ctx) const {
    const double* g = ctx.out_grad().data();
    const double* xv = ctx.parent_values(0).data();
    const double* gam = ctx.parent_values(1).data();
    bool need_dx = ctx.parent_needs_grad(0);
    bool need_dgam = ctx.parent_needs_grad(1);
    bool need_dbeta = ctx.parent_needs_grad(2);
    double* dx = need_dx ? ctx.parent_grad(0).data() : nullptr;
    double* dgam = need_dgam ? ctx.parent_grad(1).data() : nullptr;
    double* dbeta = need_dbeta ? ctx.parent_grad(2).data() : nullptr;

    // Instance norm groups are contiguous (b,c) blocks. Batch norm groups are
    // strided per channel; handle both through an index lambda.
    int64_t spatial = m_spatial();
    for (int64_t gi = 0; gi < groups; ++gi) {
      int64_t c = per_sample ? gi % channels : gi;
      double mean = 0.0, var = 0.0;
      for_each(gi, spatial, [&](int64_t off) { mean += xv[off]; });
      mean /= static_cast<double>(m);
      for_each(gi, spatial, [&](int64_t off) {
        double dev = xv[off] - mean;
        var += dev * dev;
      });
      var /= static_cast<double>(m);
      double inv_std = 1.0 / std::sqrt(var + eps);

      double sum_g = 0.0, sum_gx = 0.0;
      for_each(gi, spatial, [&](int64_t off) {
        double xhat = (xv[off] - mean) * inv_std;
        sum_g += g[off];
        sum_gx += g[off] * xhat;
      });
      if (dgam || dbeta) {
        if (dbeta) dbeta[c] += sum_g;
        if (dgam) dgam[c] += sum_gx;
      }
      if (dx) {
        double mg = sum_g / static_cast<double>(m);
        double mgx = sum_gx / static_cast<double>(m);
        double k = gam[c] * inv_std;
        for_each(gi, spatial, [&](int64_t off) {
          double xhat = (xv[off] - mean) * inv_std;
          dx[off] += k * (g[off] - mg - xhat * mgx);
        });
      }
    }
  }

  int64_t batch = 0, height = 0, width = 0;

  int64_t m_spatial() const { return height * width; }

  template <typename F>
  void for_each(int64_t gi, int64_t spatial, F f) const {
    if (per_sample) {
      int64_t base = gi * spatial;
      for (int64_t i = 0; i < spatial; ++i) f(base + i);
    } else {
      for (int64_t b = 0; b < batch; ++b) {
        int64_t base = (b * channels + gi) * spatial;
        for (int64_t i = 0; i < spatial; ++i) f(base + i);
      }
    }
  }
};

}  // namespace

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_norm_input(x, gamma, beta, "instance_norm");
  int64_t b = x.dim(0), c = x.dim(1), spatial = x.dim(2) * x.dim(3);
  auto xv = x.values();
  auto gam = gamma.values();
  auto bet = beta.values();
  std::vector<double> out(xv.size());
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* xc = xv.data() + (bi * c + ci) * spatial;
      double* yc = out.data() + (bi * c + ci) * spatial;
      double mean = 0.0;
      for (int64_t i = 0; i < spatial; ++i) mean += xc[i];
      mean /= static_cast<double>(spatial);
      double var = 0.0;
      for (int64_t i = 0; i < spatial; ++i) {
        double dev = xc[i] - mean;
        var += dev * dev;
      }
      var /= static_cast<double>(spatial);
      double inv_std = 1.0 / std::sqrt(var + eps);
      for (int64_t i = 0; i < spatial; ++i) {
        yc[i] = gam[ci] * ((xc[i] - mean) * inv_std) + bet[ci];
      }
    }
  }
  NormBack back{eps, b * c, spatial, c, true};
  back.batch = b;
  back.height = x.dim(2);
  back.width = x.dim(3);
  return make_op(x.shape(), std::move(out), x.dtype(), {x, gamma, beta}, back);
}

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>* batch_mean_out, std::vector<double>* batch_var_out) {
  check_norm_input(x, gamma, beta, "batch_norm");
  int64_t b = x.dim(0), c = x.dim(1), spatial = x.dim(2) * x.dim(3);
  int64_t m = b * spatial;
  if (m < 2) {
    throw std::invalid_argument("batch_norm: train mode needs at least 2 statistics samples");
  }
  auto xv = x.values();
  auto gam = gamma.values();
  auto bet = beta.values();
  std::vector<double> out(xv.size());
  std::vector<double> means(static_cast<size_t>(c)), vars(static_cast<size_t>(c));
  for (int64_t ci = 0; ci < c; ++ci) {
    double mean = 0.0;
    for (int64_t bi = 0; bi < b; ++bi) {
      const double* xc = xv.data() + (bi * c + ci) * spatial;
      for (int64_t i = 0; i < spatial; ++i) mean += xc[i];
    }
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (int64_t bi = 0; bi < b; ++bi) {
      const double* xc = xv.data() + (bi * c + ci) * spatial;
      for (int64_t i = 0; i < spatial; ++i) {
        double dev = xc[i] - mean;
        var += dev * dev;
      }
    }
    var /= static_cast<double>(m);
    means[static_cast<size_t>(ci)] = mean;
    vars[static_cast<size_t>(ci)] = var;
    double inv_std = 1.0 / std::sqrt(var + eps);
    for (int64_t bi = 0; bi < b; ++bi) {
      const double* xc = xv.data() + (bi * c + ci) * spatial;
      double* yc = out.data() + (bi * c + ci) * spatial;
      for (int64_t i = 0; i < spatial; ++i) {
        yc[i] = gam[ci] * ((xc[i] - mean) * inv_std) + bet[ci];
      }
    }
  }
  if (batch_mean_out) *batch_mean_out = means;
  if (batch_var_out) *batch_var_out = vars;
  NormBack back{eps, c, m, c, false};
  back.batch = b;
  back.height = x.dim(2);
  back.width = x.dim(3);
  return make_op(x.shape(), std::move(out), x.dtype(), {x, gamma, beta}, back);
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const std::vector<double>& running_mean,
                       const std::vector<double>& running_var, double eps) {
  check_norm_input(x, gamma, beta, "batch_norm");
  int64_t b = x.dim(0), c = x.dim(1), spatial = x.dim(2) * x.dim(3);
  if (static_cast<int64_t>(running_mean.size()) != c ||
      static_cast<int64_t>(running_var.size()) != c) {
    throw std::invalid_argument("batch_norm: running statistics must have C elements");
  }
  auto xv = x.values();
  auto gam = gamma.values();
  auto bet = beta.values();
  std::vector<double> out(xv.size());
  std::vector<double> inv_std(static_cast<size_t>(c));
  for (int64_t ci = 0; ci < c; ++ci) {
    inv_std[static_cast<size_t>(ci)] = 1.0 / std::sqrt(running_var[static_cast<size_t>(ci)] + eps);
  }
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* xc = xv.data() + (bi * c + ci) * spatial;
      double* yc = out.data() + (bi * c + ci) * spatial;
      double mu = running_mean[static_cast<size_t>(ci)];
      double is = inv_std[static_cast<size_t>(ci)];
      for (int64_t i = 0; i < spatial; ++i) yc[i] = gam[ci] * ((xc[i] - mu) * is) + bet[ci];
    }
  }
  return make_op(x.shape(), std::move(out), x.dtype(), {x, gamma, beta},
                 [b, c, spatial, running_mean, inv_std](BackwardContext& ctx) {
                   const double* g = ctx.out_grad().data();
                   const double* xv = ctx.parent_values(0).data();
                   const double* gam = ctx.parent_values(1).data();
                   double* dx = ctx.parent_needs_grad(0) ? ctx.parent_grad(0).data() : nullptr;
                   double* dgam = ctx.parent_needs_grad(1) ? ctx.parent_grad(1).data() : nullptr;
                   double* dbeta = ctx.parent_needs_grad(2) ? ctx.parent_grad(2).data() : nullptr;
                   for (int64_t bi = 0; bi < b; ++bi) {
                     for (int64_t ci = 0; ci < c; ++ci) {
                       int64_t base = (bi * c + ci) * spatial;
                       double is = inv_std[static_cast<size_t>(ci)];
                       double mu = running_mean[static_cast<size_t>(ci)];
                       for (int64_t i = 0; i < spatial; ++i) {
                         double gv = g[base + i];
                         if (dx) dx[base + i] += gv * gam[ci] * is;
                         if (dgam) dgam[ci] += gv * (xv[base + i] - mu) * is;
                         if (dbeta) dbeta[ci] += gv;
                       }
                     }
                   }
                 });
}

namespace {

template <typename S>
void silu_kernel(std::span<const double> x, std::span<double> y) {
  for (size_t i = 0; i < y.size(); ++i) {
    S v = static_cast<S>(x[i]);
    S sig = S(1) / (S(1) + std::exp(-v));
    y[i] = static_cast<double>(v * sig);
  }
}

}  // namespace

Tensor silu(const Tensor& x) {
  std::vector<double> out(static_cast<size_t>(x.numel()));
  if (x.dtype() == DType::f32) {
    silu_kernel<float>(x.values(), out);
  } else {
    silu_kernel<double>(x.values(), out);
  }
  return make_op(x.shape(), std::move(out), x.dtype(), {x}, [](BackwardContext& ctx) {
    if (!ctx.parent_needs_grad(0)) return;
    auto g = ctx.out_grad();
    auto xv = ctx.parent_values(0);
    auto pg = ctx.parent_grad(0);
    for (size_t i = 0; i < g.size(); ++i) {
      double sig = 1.0 / (1.0 + std::exp(-xv[i]));
      pg[i] += g[i] * sig * (1.0 + xv[i] * (1.0 - sig));
    }
  });
}

namespace {

template <typename S>
void softmax_kernel(std::span<const double> x, std::span<double> y, int64_t rows, int64_t cols) {
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    S mx = static_cast<S>(xr[0]);
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, static_cast<S>(xr[j]));
    S denom = S(0);
    for (int64_t j = 0; j < cols; ++j) {
      S e = std::exp(static_cast<S>(xr[j]) - mx);
      yr[j] = static_cast<double>(e);
      denom += e;
    }
    for (int64_t j = 0; j < cols; ++j) {
      yr[j] = static_cast<double>(static_cast<S>(yr[j]) / denom);
    }
  }
}

}  // namespace

Tensor softmax_last(const Tensor& x) {
  if (x.ndim() < 1) throw std::invalid_argument("softmax: rank must be >= 1");
  int64_t cols = x.dim(x.ndim() - 1);
  int64_t rows = x.numel() / cols;
  std::vector<double> out(static_cast<size_t>(x.numel()));
  if (x.dtype() == DType::f32) {
    softmax_kernel<float>(x.values(), out, rows, cols);
  } else {
    softmax_kernel<double>(x.values(), out, rows, cols);
  }
  return make_op(x.shape(), std::move(out), x.dtype(), {x},
                 [rows, cols](BackwardContext& ctx) {
                   if (!ctx.parent_needs_grad(0)) return;
                   auto g = ctx.out_grad();
                   auto y = ctx.out_values();
                   auto pg = ctx.parent_grad(0);
                   for (int64_t r = 0; r < rows; ++r) {
                     const double* gr = g.data() + r * cols;
                     const double* yr = y.data() + r * cols;
                     double* pr = pg.data() + r * cols;
                     double dot = 0.0;
                     for (int64_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
                     for (int64_t j = 0; j < cols; ++j) pr[j] += yr[j] * (gr[j] - dot);
                   }
                 });
}

// --- stateful wrappers ------------------------------------------------------

Tensor conv_weight_init(int64_t cout, int64_t cin, int64_t kernel, std::mt19937_64& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(cin * kernel * kernel));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(static_cast<size_t>(cout * cin * kernel * kernel));
  for (double& v : w) v = dist(rng);
  return Tensor({cout, cin, kernel, kernel}, std::move(w));
}

Tensor conv_bias_init(int64_t cout, int64_t cin, int64_t kernel, std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(cin * kernel * kernel));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> b(static_cast<size_t>(cout));
  for (double& v : b) v = dist(rng);
  return Tensor({cout}, std::move(b));
}

Conv2d::Conv2d(ConvSpec s, std::mt19937_64& rng) : spec(s) {
  if (spec.kernel < 1 || spec.kernel % 2 == 0) {
    throw std::invalid_argument("Conv2d: kernel must be a positive odd size");
  }
  weight = conv_weight_init(spec.out_channels, spec.in_channels, spec.kernel, rng);
  weight.set_requires_grad(true);
  if (spec.bias) {
    bias = conv_bias_init(spec.out_channels, spec.in_channels, spec.kernel, rng);
    bias.set_requires_grad(true);
  }
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight, bias, spec); }

std::vector<Tensor> Conv2d::parameters() const {
  std::vector<Tensor> ps{weight};
  if (bias.defined()) ps.push_back(bias);
  return ps;
}

InstanceNorm::InstanceNorm(int64_t c, double e) : channels(c), eps(e) {
  gamma = Tensor::full({c}, 1.0);
  beta = Tensor::zeros({c});
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

Tensor InstanceNorm::forward(const Tensor& x) const { return instance_norm(x, gamma, beta, eps); }

std::vector<Tensor> InstanceNorm::parameters() const { return {gamma, beta}; }

BatchNorm::BatchNorm(int64_t c, double e, double mom) : channels(c), eps(e), momentum(mom) {
  gamma = Tensor::full({c}, 1.0);
  beta = Tensor::zeros({c});
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
  running_mean.assign(static_cast<size_t>(c), 0.0);
  running_var.assign(static_cast<size_t>(c), 1.0);
}

Tensor BatchNorm::forward(const Tensor& x) {
  if (mode == Mode::eval) {
    return batch_norm_eval(x, gamma, beta, running_mean, running_var, eps);
  }
  std::vector<double> mean, var;
  Tensor y = batch_norm_train(x, gamma, beta, eps, &mean, &var);
  for (size_t i = 0; i < running_mean.size(); ++i) {
    running_mean[i] = (1.0 - momentum) * running_mean[i] + momentum * mean[i];
    running_var[i] = (1.0 - momentum) * running_var[i] + momentum * var[i];
  }
  return y;
}

std::vector<Tensor> BatchNorm::parameters() const { return {gamma, beta}; }

ConvNormAct::ConvNormAct(int64_t cin, int64_t cout, int64_t kernel, int64_t stride, NormKind kind,
                         std::mt19937_64& rng)
    : conv(ConvSpec::same(cin, cout, kernel, stride, /*bias=*/false), rng),
      norm(kind == NormKind::batch ? std::variant<BatchNorm, InstanceNorm>(BatchNorm(cout))
                                   : std::variant<BatchNorm, InstanceNorm>(InstanceNorm(cout))) {}

Tensor ConvNormAct::forward(const Tensor& x) {
  Tensor y = conv.forward(x);
  if (auto* bn = std::get_if<BatchNorm>(&norm)) {
    y = bn->forward(y);
  } else {
    y = std::get<InstanceNorm>(norm).forward(y);
  }
  return silu(y);
}

std::vector<Tensor> ConvNormAct::parameters() const {
  std::vector<Tensor> ps = conv.parameters();
  std::vector<Tensor> ns = std::visit([](const auto& n) { return n.parameters(); }, norm);
  ps.insert(ps.end(), ns.begin(), ns.end());
  return ps;
}

void ConvNormAct::set_mode(Mode mode) {
  if (auto* bn = std::get_if<BatchNorm>(&norm)) bn->mode = mode;
}

}  // namespace isdet
