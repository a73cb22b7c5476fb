#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "isdet/head.hpp"
#include "isdet/isb.hpp"
#include "isdet/layers.hpp"

namespace isdet {

/// Compound-scaling preset: depth factor, width factor, channel cap.
struct ScalePreset {
  std::string name;
  double depth;
  double width;
  int64_t max_channels;
};

const std::array<ScalePreset, 5>& scale_presets();
const ScalePreset& preset_by_name(std::string_view name);  // n/s/m/l/x

/// Cost-counting convention carried by every report. FLOPs are counted as
/// flop_factor per multiply-add of conv/matmul kernels; normalization,
/// activation, and bias costs are excluded. softmax_alpha optionally charges
/// alpha FLOPs per attention-score entry (0 keeps attention cost exactly
/// linear in the patch count).
struct Convention {
  int64_t flop_factor = 2;
  double softmax_alpha = 0.0;
  int64_t channel_round = 8;
};

struct CostRow {
  std::string name;
  int64_t params = 0;
  int64_t flops = 0;
};

struct CostReport {
  std::string module;
  int64_t batch = 1;
  int64_t in_h = 0, in_w = 0;
  Convention convention;
  std::vector<CostRow> rows;
  std::vector<std::pair<std::string, std::string>> config;  // resolved-config echo

  int64_t total_params() const;
  int64_t total_flops() const;
};

struct CompareReport {
  CostReport a, b;
  std::vector<CostRow> delta_rows;  // b minus a, aligned by row name
  int64_t delta_params = 0;
  int64_t delta_flops = 0;
};

/// Width scaling with cap: min(max_channels, width·base rounded up to the
/// round_to multiple).
int64_t apply_scale(const ScalePreset& preset, int64_t base_channels, int64_t round_to = 8);

// Closed forms (exact; validated against instantiated-parameter enumeration).
int64_t conv_param_count(int64_t cin, int64_t cout, int64_t kernel, bool bias);
int64_t conv_flop_count(int64_t cin, int64_t cout, int64_t kernel, int64_t out_h, int64_t out_w,
                        int64_t batch, const Convention& conv);
int64_t fcgsa_flop_count(int64_t batch, int64_t patch, int64_t c2, int64_t patch_count,
                         const Convention& conv);
int64_t isb_branch_param_count(const IsbConfig& cfg);
int64_t head_param_closed_form(const HeadConfig& cfg, HeadVariant variant);

int64_t param_element_count(const std::vector<Tensor>& params);

CostReport profile_conv(const ConvSpec& spec, int64_t batch, int64_t h, int64_t w,
                        const Convention& conv);
CostReport profile_attention(int64_t batch, int64_t c2, int64_t patch, int64_t h, int64_t w,
                             const Convention& conv);
CostReport profile_isb_branch(const IsbConfig& cfg, int64_t batch, int64_t h, int64_t w,
                              const Convention& conv);
CostReport profile_bottleneck(const IsbConfig& cfg, bool with_isb, int64_t batch, int64_t h,
                              int64_t w, const Convention& conv);
CostReport profile_head(const HeadConfig& cfg, HeadVariant variant, int64_t batch, int64_t img_h,
                        int64_t img_w, const Convention& conv);

CompareReport compare(const CostReport& a, const CostReport& b);

}  // namespace isdet
