#include "isdet/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace isdet {

const std::array<ScalePreset, 5>& scale_presets() {
  static const std::array<ScalePreset, 5> presets{{
      {"n", 0.33, 0.25, 1024},
      {"s", 0.33, 0.50, 1024},
      {"m", 0.67, 0.75, 768},
      {"l", 1.00, 1.00, 512},
      {"x", 1.00, 1.25, 512},
  }};
  return presets;
}

const ScalePreset& preset_by_name(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const ScalePreset& p : scale_presets()) {
    if (p.name == lower) return p;
  }
  throw std::invalid_argument("unknown scale preset '" + std::string(name) +
                              "' (expected one of n, s, m, l, x)");
}

int64_t CostReport::total_params() const {
  int64_t n = 0;
  for (const CostRow& r : rows) n += r.params;
  return n;
}

int64_t CostReport::total_flops() const {
  int64_t n = 0;
  for (const CostRow& r : rows) n += r.flops;
  return n;
}

int64_t apply_scale(const ScalePreset& preset, int64_t base_channels, int64_t round_to) {
  if (base_channels < 1) throw std::invalid_argument("apply_scale: base channels must be >= 1");
  double scaled = preset.width * static_cast<double>(base_channels);
  int64_t rounded = static_cast<int64_t>(std::ceil(scaled / static_cast<double>(round_to))) *
                    round_to;
  return std::min(preset.max_channels, rounded);
}

int64_t conv_param_count(int64_t cin, int64_t cout, int64_t kernel, bool bias) {
  return kernel * kernel * cin * cout + (bias ? cout : 0);
}

int64_t conv_flop_count(int64_t cin, int64_t cout, int64_t kernel, int64_t out_h, int64_t out_w,
                        int64_t batch, const Convention& conv) {
  return conv.flop_factor * batch * kernel * kernel * cin * cout * out_h * out_w;
}

int64_t fcgsa_flop_count(int64_t batch, int64_t patch, int64_t c2, int64_t patch_count,
                         const Convention& conv) {
  int64_t k2 = patch * patch;
  int64_t matmuls = conv.flop_factor * k2 * 2 * c2 * c2 * patch_count;
  auto softmax = static_cast<int64_t>(conv.softmax_alpha * static_cast<double>(k2 * c2 * c2));
  return batch * (matmuls + softmax);
}

int64_t isb_branch_param_count(const IsbConfig& cfg) {
  cfg.validate();
  int64_t c = cfg.channels, c1 = cfg.c1(), c2 = cfg.c2();
  return c * c1 + 9 * c2 * c + 2 * c1 + 2 * c;
}

int64_t param_element_count(const std::vector<Tensor>& params) {
  int64_t n = 0;
  for (const Tensor& t : params) n += t.numel();
  return n;
}

namespace {

void add_conv_norm_rows(CostReport& report, const std::string& name, int64_t cin, int64_t cout,
                        int64_t kernel, int64_t h, int64_t w) {
  report.rows.push_back({name + ".conv", conv_param_count(cin, cout, kernel, false),
                         conv_flop_count(cin, cout, kernel, h, w, report.batch,
                                         report.convention)});
  report.rows.push_back({name + ".norm", 2 * cout, 0});
}

void add_pred_rows(CostReport& report, const std::string& name, int64_t cin, int64_t cout,
                   int64_t h, int64_t w) {
  report.rows.push_back({name, conv_param_count(cin, cout, 1, true),
                         conv_flop_count(cin, cout, 1, h, w, report.batch, report.convention)});
}

std::pair<int64_t, int64_t> conv_out_hw(const ConvSpec& spec, int64_t h, int64_t w) {
  int64_t num_h = h + 2 * spec.padding - spec.kernel;
  int64_t num_w = w + 2 * spec.padding - spec.kernel;
  if (num_h < 0 || num_w < 0 || num_h % spec.stride != 0 || num_w % spec.stride != 0) {
    throw std::invalid_argument("profile_conv: non-integral output extent");
  }
  return {num_h / spec.stride + 1, num_w / spec.stride + 1};
}

}  // namespace

CostReport profile_conv(const ConvSpec& spec, int64_t batch, int64_t h, int64_t w,
                        const Convention& conv) {
  CostReport report;
  report.module = "conv";
  report.batch = batch;
  report.in_h = h;
  report.in_w = w;
  report.convention = conv;
  auto [oh, ow] = conv_out_hw(spec, h, w);
  report.rows.push_back({"conv", conv_param_count(spec.in_channels, spec.out_channels,
                                                  spec.kernel, spec.bias),
                         conv_flop_count(spec.in_channels, spec.out_channels, spec.kernel, oh, ow,
                                         batch, conv)});
  report.config = {{"cin", std::to_string(spec.in_channels)},
                   {"cout", std::to_string(spec.out_channels)},
                   {"kernel", std::to_string(spec.kernel)},
                   {"stride", std::to_string(spec.stride)}};
  return report;
}

CostReport profile_attention(int64_t batch, int64_t c2, int64_t patch, int64_t h, int64_t w,
                             const Convention& conv) {
  CostReport report;
  report.module = "attention";
  report.batch = batch;
  report.in_h = h;
  report.in_w = w;
  report.convention = conv;
  int64_t lh = (h + patch - 1) / patch;
  int64_t lw = (w + patch - 1) / patch;
  int64_t l = lh * lw;
  int64_t k2 = patch * patch;
  int64_t matmul_flops = conv.flop_factor * batch * k2 * 2 * c2 * c2 * l;
  auto softmax_flops =
      static_cast<int64_t>(conv.softmax_alpha * static_cast<double>(batch * k2 * c2 * c2));
  report.rows.push_back({"fcgsa.matmul", 0, matmul_flops});
  report.rows.push_back({"fcgsa.softmax", 0, softmax_flops});
  report.config = {{"c2", std::to_string(c2)},
                   {"patch", std::to_string(patch)},
                   {"patch_count", std::to_string(l)}};
  return report;
}

CostReport profile_isb_branch(const IsbConfig& cfg, int64_t batch, int64_t h, int64_t w,
                              const Convention& conv) {
  cfg.validate();
  CostReport report;
  report.module = "isb-branch";
  report.batch = batch;
  report.in_h = h;
  report.in_w = w;
  report.convention = conv;
  int64_t lh = (h + cfg.patch - 1) / cfg.patch;
  int64_t lw = (w + cfg.patch - 1) / cfg.patch;
  add_conv_norm_rows(report, "compress", cfg.channels, cfg.c1(), 1, h, w);
  report.rows.push_back(
      {"attention", 0, fcgsa_flop_count(batch, cfg.patch, cfg.c2(), lh * lw, conv)});
  add_conv_norm_rows(report, "expand", cfg.c2(), cfg.channels, 3, h, w);
  report.config = {{"channels", std::to_string(cfg.channels)},
                   {"ratio", std::to_string(cfg.ratio)},
                   {"patch", std::to_string(cfg.patch)}};
  return report;
}

CostReport profile_bottleneck(const IsbConfig& cfg, bool with_isb, int64_t batch, int64_t h,
                              int64_t w, const Convention& conv) {
  CostReport report;
  report.module = with_isb ? "bottleneck.isb" : "bottleneck.baseline";
  report.batch = batch;
  report.in_h = h;
  report.in_w = w;
  report.convention = conv;
  add_conv_norm_rows(report, "cv1", cfg.channels, cfg.channels, 3, h, w);
  add_conv_norm_rows(report, "cv2", cfg.channels, cfg.channels, 3, h, w);
  if (with_isb) {
    CostReport branch = profile_isb_branch(cfg, batch, h, w, conv);
    for (CostRow& row : branch.rows) {
      report.rows.push_back({"isb." + row.name, row.params, row.flops});
    }
  }
  report.config = {{"channels", std::to_string(cfg.channels)},
                   {"ratio", std::to_string(cfg.ratio)},
                   {"patch", std::to_string(cfg.patch)},
                   {"variant", with_isb ? "isb" : "baseline"}};
  return report;
}

CostReport profile_head(const HeadConfig& cfg, HeadVariant variant, int64_t batch, int64_t img_h,
                        int64_t img_w, const Convention& conv) {
  cfg.validate();
  CostReport report;
  report.module = variant == HeadVariant::isadh ? "head.isadh" : "head.baseline";
  report.batch = batch;
  report.in_h = img_h;
  report.in_w = img_w;
  report.convention = conv;
  int64_t w_cls = cfg.cls_width();
  int64_t w_box = cfg.box_width();
  int64_t box_k = variant == HeadVariant::isadh ? 1 : 3;
  for (size_t i = 0; i < cfg.level_channels.size(); ++i) {
    int64_t cin = cfg.level_channels[i];
    int64_t stride = cfg.strides[i];
    int64_t h = img_h / stride, w = img_w / stride;
    std::string tag = "l" + std::to_string(i);
    add_conv_norm_rows(report, tag + ".cls1", cin, w_cls, 3, h, w);
    add_conv_norm_rows(report, tag + ".cls2", w_cls, w_cls, 3, h, w);
    if (variant == HeadVariant::isadh) {
      add_conv_norm_rows(report, tag + ".cls.instance", cin, w_cls, 1, h, w);
    }
    add_pred_rows(report, tag + ".cls.pred", w_cls, cfg.nc, h, w);
    add_conv_norm_rows(report, tag + ".box1", cin, w_box, box_k, h, w);
    add_conv_norm_rows(report, tag + ".box2", w_box, w_box, box_k, h, w);
    if (variant == HeadVariant::isadh) {
      add_conv_norm_rows(report, tag + ".box.instance", cin, w_box, 1, h, w);
    }
    add_pred_rows(report, tag + ".box.pred", w_box, cfg.box_out(), h, w);
  }
  report.config = {{"nc", std::to_string(cfg.nc)},
                   {"reg_max", std::to_string(cfg.reg_max)},
                   {"c2", std::to_string(w_box)},
                   {"c3", std::to_string(w_cls)},
                   {"variant", variant == HeadVariant::isadh ? "isadh" : "baseline"}};
  return report;
}

int64_t head_param_closed_form(const HeadConfig& cfg, HeadVariant variant) {
  cfg.validate();
  int64_t w_cls = cfg.cls_width();
  int64_t w_box = cfg.box_width();
  int64_t box_k = variant == HeadVariant::isadh ? 1 : 3;
  bool instance = variant == HeadVariant::isadh;
  int64_t total = 0;
  for (int64_t cin : cfg.level_channels) {
    total += conv_param_count(cin, w_cls, 3, false) + 2 * w_cls;
    total += conv_param_count(w_cls, w_cls, 3, false) + 2 * w_cls;
    total += conv_param_count(w_cls, cfg.nc, 1, true);
    total += conv_param_count(cin, w_box, box_k, false) + 2 * w_box;
    total += conv_param_count(w_box, w_box, box_k, false) + 2 * w_box;
    total += conv_param_count(w_box, cfg.box_out(), 1, true);
    if (instance) {
      total += conv_param_count(cin, w_cls, 1, false) + 2 * w_cls;
      total += conv_param_count(cin, w_box, 1, false) + 2 * w_box;
    }
  }
  return total;
}

CompareReport compare(const CostReport& a, const CostReport& b) {
  CompareReport out;
  out.a = a;
  out.b = b;
  // Union of row names, keeping a's order first.
  auto find_row = [](const CostReport& r, const std::string& name) -> const CostRow* {
    for (const CostRow& row : r.rows) {
      if (row.name == name) return &row;
    }
    return nullptr;
  };
  for (const CostRow& row : a.rows) {
    const CostRow* other = find_row(b, row.name);
    out.delta_rows.push_back({row.name, (other ? other->params : 0) - row.params,
                              (other ? other->flops : 0) - row.flops});
  }
  for (const CostRow& row : b.rows) {
    if (!find_row(a, row.name)) {
      out.delta_rows.push_back({row.name, row.params, row.flops});
    }
  }
  out.delta_params = b.total_params() - a.total_params();
  out.delta_flops = b.total_flops() - a.total_flops();
  return out;
}

}  // namespace isdet
