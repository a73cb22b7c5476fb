#include "isdet/patch.hpp"

#include <cmath>
#include <stdexcept>

#include "isdet/layers.hpp"

namespace isdet {

PatchGrid PatchGrid::from(int64_t h, int64_t w, int64_t patch) {
  if (patch < 1) throw std::invalid_argument("patch side must be >= 1");
  if (h < 1 || w < 1) throw std::invalid_argument("spatial extents must be >= 1");
  PatchGrid g;
  g.patch = patch;
  g.lh = (h + patch - 1) / patch;
  g.lw = (w + patch - 1) / patch;
  g.h_pad = g.lh * patch;
  g.w_pad = g.lw * patch;
  return g;
}

namespace {

struct UnfoldDims {
  int64_t b, c, h, w;
  PatchGrid grid;
};

UnfoldDims unfold_dims(const Tensor& x, int64_t patch) {
  if (x.ndim() != 4) throw std::invalid_argument("unfold: input must be B×C×H×W");
  UnfoldDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), PatchGrid::from(x.dim(2), x.dim(3), patch)};
  return d;
}

}  // namespace

Tensor unfold_patches(const Tensor& x, int64_t patch) {
  UnfoldDims d = unfold_dims(x, patch);
  int64_t k2 = patch * patch;
  int64_t l = d.grid.patch_count();
  Shape out_shape{d.b, d.c * k2, l};
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)), 0.0);
  auto xv = x.values();
  for (int64_t b = 0; b < d.b; ++b) {
    for (int64_t c = 0; c < d.c; ++c) {
      const double* xc = xv.data() + (b * d.c + c) * d.h * d.w;
      for (int64_t p = 0; p < k2; ++p) {
        int64_t ph = p / patch, pw = p % patch;
        double* row = out.data() + ((b * d.c + c) * k2 + p) * l;
        for (int64_t lh = 0; lh < d.grid.lh; ++lh) {
          int64_t ih = lh * patch + ph;
          if (ih >= d.h) continue;  // zero padding
          for (int64_t lw = 0; lw < d.grid.lw; ++lw) {
            int64_t iw = lw * patch + pw;
            if (iw >= d.w) continue;
            row[lh * d.grid.lw + lw] = xc[ih * d.w + iw];
          }
        }
      }
    }
  }
  return make_op(std::move(out_shape), std::move(out), x.dtype(), {x},
                 [d, patch, k2, l](BackwardContext& ctx) {
                   if (!ctx.parent_needs_grad(0)) return;
                   auto g = ctx.out_grad();
                   auto pg = ctx.parent_grad(0);
                   // Non-overlapping stride: each input pixel has exactly one slot.
                   for (int64_t b = 0; b < d.b; ++b) {
                     for (int64_t c = 0; c < d.c; ++c) {
                       for (int64_t ih = 0; ih < d.h; ++ih) {
                         for (int64_t iw = 0; iw < d.w; ++iw) {
                           int64_t p = (ih % patch) * patch + (iw % patch);
                           int64_t slot = (ih / patch) * d.grid.lw + (iw / patch);
                           pg[((b * d.c + c) * d.h + ih) * d.w + iw] +=
                               g[((b * d.c + c) * k2 + p) * l + slot];
                         }
                       }
                     }
                   }
                 });
}

Tensor fold_patches(const Tensor& y, int64_t patch, int64_t h, int64_t w) {
  if (y.ndim() != 3) throw std::invalid_argument("fold: input must be B×(C·K²)×L");
  PatchGrid grid = PatchGrid::from(h, w, patch);
  int64_t k2 = patch * patch;
  int64_t b = y.dim(0);
  if (y.dim(1) % k2 != 0) {
    throw std::invalid_argument("fold: channel axis " + std::to_string(y.dim(1)) +
                                " is not a multiple of K² = " + std::to_string(k2));
  }
  int64_t c = y.dim(1) / k2;
  if (y.dim(2) != grid.patch_count()) {
    throw std::invalid_argument("fold: patch count " + std::to_string(y.dim(2)) +
                                " inconsistent with H×W = " + std::to_string(h) + "x" +
                                std::to_string(w) + ", K = " + std::to_string(patch));
  }
  int64_t l = grid.patch_count();
  Shape out_shape{b, c, h, w};
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  auto yv = y.values();
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double* xc = out.data() + (bi * c + ci) * h * w;
      for (int64_t ih = 0; ih < h; ++ih) {
        for (int64_t iw = 0; iw < w; ++iw) {
          int64_t p = (ih % patch) * patch + (iw % patch);
          int64_t slot = (ih / patch) * grid.lw + (iw / patch);
          xc[ih * w + iw] = yv[((bi * c + ci) * k2 + p) * l + slot];
        }
      }
    }
  }
  return make_op(std::move(out_shape), std::move(out), y.dtype(), {y},
                 [b, c, h, w, patch, k2, l, grid](BackwardContext& ctx) {
                   if (!ctx.parent_needs_grad(0)) return;
                   auto g = ctx.out_grad();
                   auto pg = ctx.parent_grad(0);
                   for (int64_t bi = 0; bi < b; ++bi) {
                     for (int64_t ci = 0; ci < c; ++ci) {
                       for (int64_t ih = 0; ih < h; ++ih) {
                         for (int64_t iw = 0; iw < w; ++iw) {
                           int64_t p = (ih % patch) * patch + (iw % patch);
                           int64_t slot = (ih / patch) * grid.lw + (iw / patch);
                           pg[((bi * c + ci) * k2 + p) * l + slot] +=
                               g[((bi * c + ci) * h + ih) * w + iw];
                         }
                       }
                     }
                   }
                 });
}

Tensor reconstruct(const Tensor& x, int64_t patch, ShapeTrace* trace) {
  int64_t b = x.dim(0), c = x.dim(1);
  int64_t k2 = patch * patch;
  Tensor unfolded = unfold_patches(x, patch);
  if (trace) trace->add("unfold", unfolded.shape());
  int64_t l = unfolded.dim(2);
  Tensor split = reshape(unfolded, {b, c, k2, l});
  if (trace) trace->add("reshape", split.shape());
  Tensor out = permute(split, {0, 2, 1, 3});
  if (trace) trace->add("permute", out.shape());
  return out;
}

Tensor reassemble(const Tensor& y, int64_t patch, int64_t h, int64_t w, ShapeTrace* trace) {
  if (y.ndim() != 4) throw std::invalid_argument("reassemble: input must be B×K²×C×L");
  int64_t k2 = patch * patch;
  if (y.dim(1) != k2) {
    throw std::invalid_argument("reassemble: axis 1 must equal K² = " + std::to_string(k2));
  }
  int64_t b = y.dim(0), c = y.dim(2), l = y.dim(3);
  PatchGrid grid = PatchGrid::from(h, w, patch);
  if (l != grid.patch_count()) {
    throw std::invalid_argument("reassemble: patch count " + std::to_string(l) +
                                " inconsistent with target extent " + std::to_string(h) + "x" +
                                std::to_string(w));
  }
  Tensor back = permute(y, {0, 2, 1, 3});
  if (trace) trace->add("permute", back.shape());
  Tensor flat = reshape(back, {b, c * k2, l});
  if (trace) trace->add("reshape", flat.shape());
  Tensor out = fold_patches(flat, patch, h, w);
  if (trace) trace->add("fold", out.shape());
  return out;
}

Tensor space_to_depth(const Tensor& x, int64_t block) {
  if (x.ndim() != 4) throw std::invalid_argument("space_to_depth: input must be B×C×H×W");
  PatchGrid grid = PatchGrid::from(x.dim(2), x.dim(3), block);
  Tensor unfolded = unfold_patches(x, block);
  return reshape(unfolded, {x.dim(0), x.dim(1) * block * block, grid.lh, grid.lw});
}

Qkv split_qkv(const Tensor& x) {
  if (x.ndim() != 4) throw std::invalid_argument("split_qkv: input must be B×K²×C×L");
  int64_t c = x.dim(2);
  if (c % 3 != 0) {
    throw std::invalid_argument("split_qkv: channel axis " + std::to_string(c) +
                                " is not divisible by 3");
  }
  int64_t third = c / 3;
  return Qkv{narrow(x, 2, 0, third), narrow(x, 2, third, third), narrow(x, 2, 2 * third, third)};
}

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.ndim() != 4) throw std::invalid_argument("fcgsa: operands must be B×K²×C×L");
  if (q.shape() != k.shape() || (v.defined() && q.shape() != v.shape())) {
    throw std::invalid_argument("fcgsa: Q/K/V shapes differ: " + shape_str(q.shape()) + ", " +
                                shape_str(k.shape()) +
                              (v.defined() ? ", " + shape_str(v.shape()) : std::string()));
  }
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  check_qkv(q, k, Tensor());
  int64_t l = q.dim(3);
  // Q is divided by √L before the product with Kᵀ.
  Tensor q_scaled = scale(q, 1.0 / std::sqrt(static_cast<double>(l)));
  Tensor scores = matmul(q_scaled, permute(k, {0, 1, 3, 2}));
  return softmax_last(scores);
}

Tensor fcgsa(const Tensor& q, const Tensor& k, const Tensor& v, ShapeTrace* trace) {
  check_qkv(q, k, v);
  Tensor weights = attention_weights(q, k);
  if (trace) trace->add("weights", weights.shape());
  Tensor out = matmul(weights, v);
  if (trace) trace->add("attended", out.shape());
  return out;
}

}  // namespace isdet
