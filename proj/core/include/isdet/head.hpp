#pragma once

#include <optional>
#include <random>
#include <vector>

#include "isdet/layers.hpp"
#include "isdet/tensor.hpp"
#include "isdet/trace.hpp"

namespace isdet {

/// Decoupled-head configuration. Hidden widths default to the YOLOv8 rule
/// over the first level's channels; set c2/c3 explicitly to override.
struct HeadConfig {
  std::vector<int64_t> level_channels{256, 512, 512};
  int64_t nc = 80;
  int64_t reg_max = 16;
  int64_t c2 = 0;  // box-branch hidden width; 0 derives the default
  int64_t c3 = 0;  // classification-branch hidden width; 0 derives the default
  std::vector<int64_t> strides{8, 16, 32};

  int64_t box_width() const;  // C2 = max(16, cin0/4, 4·reg_max)
  int64_t cls_width() const;  // C3 = max(cin0, min(nc, 100))
  int64_t box_out() const { return 4 * reg_max; }
  void validate() const;
};

struct HeadOutput {
  std::vector<Tensor> cls;  // per level, B×nc×Hl×Wl
  std::vector<Tensor> box;  // per level, B×4·reg_max×Hl×Wl
};

enum class HeadVariant { baseline, isadh };

/// Baseline decoupled head (two 3×3 hidden convs per branch) or the
/// instance-specific asymmetric variant: 1×1 hidden convs on the box branch
/// and a parallel Conv1×1-IN-SiLU instance path per branch, added onto the
/// second hidden feature before the final predictor.
class DetectHead {
 public:
  DetectHead(HeadConfig cfg, HeadVariant variant, std::mt19937_64& rng);
  HeadOutput forward(const std::vector<Tensor>& features, ShapeTrace* trace = nullptr);
  std::vector<Tensor> parameters() const;
  void set_mode(Mode mode);

  struct LevelBlocks {
    ConvNormAct cls1, cls2;
    Conv2d cls_pred;
    ConvNormAct box1, box2;
    Conv2d box_pred;
    std::optional<ConvNormAct> cls_inst, box_inst;
  };

  HeadConfig cfg;
  HeadVariant variant;
  std::vector<LevelBlocks> levels;
};

}  // namespace isdet
