#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "isdet/head.hpp"
#include "isdet/isb.hpp"
#include "isdet/tensor.hpp"

namespace isdet {

/// One rendered grid-detection sample: colored axis-aligned rectangles on a
/// noisy background, with targets on a stride-aligned cell grid.
struct ToySample {
  Tensor image;       // 3×S×S
  Tensor cls_target;  // classes×g×g one-hot at occupied cells, zero elsewhere
  Tensor box_target;  // 4×g×g: center offsets within the cell and w/h fractions
  Tensor pos_mask;    // 1×g×g occupancy
};

struct ToyDataset {
  std::vector<ToySample> samples;
  int64_t image_size = 0;
  int64_t classes = 0;
  int64_t stride = 0;
  int64_t grid = 0;
};

/// Deterministic for a fixed seed. Throws if a collision-free rectangle
/// placement cannot be found within bounded retries.
ToyDataset gen_synthetic(int64_t n, int64_t image_size, int64_t classes, uint64_t seed,
                         int64_t stride = 4);

/// Elementwise binary cross-entropy from logits (numerically stable form).
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

/// Elementwise absolute difference.
Tensor l1_elem(const Tensor& pred, const Tensor& target);

/// Mean BCE over all class logits plus mean L1 over box channels at positive
/// cells. Strictly positive unless predictions are exact.
Tensor toy_loss(const HeadOutput& pred, const Tensor& cls_target, const Tensor& box_target,
                const Tensor& pos_mask);

struct ToyModelConfig {
  int64_t image_size = 32;
  int64_t classes = 2;
  int64_t width = 16;  // trunk channels feeding the head
  int64_t ratio = 8;
  int64_t patch = 4;
  bool use_isb = false;
  bool use_isadh = false;
  uint64_t seed = 0;
};

/// Stride-4 space-to-depth stem followed by two 3×3 convs, one bottleneck
/// block (baseline or ISB), and a single-level detection head (baseline or
/// ISADH) on the stride-4 grid.
class ToyModel {
 public:
  explicit ToyModel(ToyModelConfig cfg);
  HeadOutput forward(const Tensor& images);
  std::vector<Tensor> parameters() const;
  void set_mode(Mode mode);

  ToyModelConfig cfg;
  std::mt19937_64 rng;  // parameter-init stream; members consume it in order
  ConvNormAct stem1, stem2;
  std::optional<Bottleneck> block_plain;
  std::optional<IsbBottleneck> block_isb;
  DetectHead head;
};

struct TrainConfig {
  int64_t steps = 300;
  double lr = 0.1;
  double momentum = 0.9;
  int64_t batch = 8;
  uint64_t seed = 0;
};

/// Plain SGD with momentum over all model parameters. Deterministic for a
/// fixed seed; throws (with the step index) on a non-finite loss.
std::vector<double> train(ToyModel& model, const ToyDataset& data, const TrainConfig& cfg);

/// Stacks per-sample tensors (e.g. 3×S×S images) into one batch tensor.
Tensor stack_batch(const std::vector<const Tensor*>& parts);

}  // namespace isdet
