#pragma once

#include "isdet/tensor.hpp"
#include "isdet/trace.hpp"

namespace isdet {

/// Patch tiling of a (possibly padded) H×W map: inputs not divisible by the
/// patch side are zero-padded on the bottom/right, so the patch count is
/// L = ceil(H/K)·ceil(W/K).
struct PatchGrid {
  int64_t patch = 4;  // K
  int64_t h_pad = 0, w_pad = 0;
  int64_t lh = 0, lw = 0;

  int64_t patch_count() const { return lh * lw; }
  static PatchGrid from(int64_t h, int64_t w, int64_t patch);
};

/// im2col with kernel = stride = K and bottom/right zero padding:
/// B×C×H×W -> B×(C·K²)×L. Row index c·K² + p where p = ph·K + pw.
Tensor unfold_patches(const Tensor& x, int64_t patch);

/// Exact inverse of unfold_patches restricted to the unpadded H×W region.
Tensor fold_patches(const Tensor& y, int64_t patch, int64_t h, int64_t w);

/// Patch-channel reconstructor: unfold -> reshape B×C×K²×L -> permute to
/// B×K²×C×L so attention runs over the full channel axis per patch pixel.
Tensor reconstruct(const Tensor& x, int64_t patch, ShapeTrace* trace = nullptr);

/// Patch-channel reassembler: permute -> reshape B×(C·K²)×L -> fold; the
/// inverse of reconstruct on the original region.
Tensor reassemble(const Tensor& y, int64_t patch, int64_t h, int64_t w,
                  ShapeTrace* trace = nullptr);

/// Pixel-unshuffle built on unfold_patches: B×C×H×W -> B×(C·K²)×(H/K)×(W/K),
/// zero-padding non-divisible extents like the reconstructor does.
Tensor space_to_depth(const Tensor& x, int64_t block);

struct Qkv {
  Tensor q, k, v;
};

/// Splits the channel axis of B×K²×3c₂×L into contiguous thirds (Q, K, V).
Qkv split_qkv(const Tensor& x);

/// Softmax((Q/√L)·Kᵀ) per (batch, patch-pixel) slice; rows are output
/// channels attending over input channels.
Tensor attention_weights(const Tensor& q, const Tensor& k);

/// Full-channel global self-attention: F = Softmax((Q/√L)Kᵀ)V with Q divided
/// by √L before the product.
Tensor fcgsa(const Tensor& q, const Tensor& k, const Tensor& v, ShapeTrace* trace = nullptr);

}  // namespace isdet
