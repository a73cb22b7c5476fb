#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include "isdet/gradcheck.hpp"
#include "isdet/head.hpp"
#include "isdet/isb.hpp"
#include "isdet/patch.hpp"
#include "isdet/profiler.hpp"
#include "isdet/report.hpp"
#include "isdet/toytrain.hpp"

namespace {

using namespace isdet;

struct Options {
  std::string module;
  std::string preset;
  std::string size = "32x32";
  bool size_set = false;  // gradcheck defaults to its miniature size otherwise
  std::string format = "rows";
  std::string out;
  std::string plot;
  std::string variant = "baseline";
  int64_t channels = 64;
  int64_t ratio = 8;
  int64_t patch = 4;
  int64_t nc = 80;
  int64_t reg_max = 16;
  int64_t factor = 2;
  double alpha = 0.0;
  uint64_t seed = 0;
  int precision = 64;
  int64_t min_side = 64;
  int64_t max_side = 1024;
  int64_t steps = 300;
  double lr = 0.05;
  double momentum = 0.9;
  int64_t batch = 8;
  int64_t samples = 64;
  int64_t image_size = 32;
  int64_t classes = 2;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::pair<int64_t, int64_t> parse_size(const std::string& text) {
  auto sep = text.find_first_of("xX");
  try {
    if (sep == std::string::npos) {
      int64_t side = std::stoll(text);
      return {side, side};
    }
    return {std::stoll(text.substr(0, sep)), std::stoll(text.substr(sep + 1))};
  } catch (const std::exception&) {
    throw UsageError("cannot parse --size '" + text + "' (expected HxW)");
  }
}

ReportFormat parse_format(const std::string& text) {
  if (text == "rows") return ReportFormat::rows;
  if (text == "records") return ReportFormat::records;
  throw UsageError("unknown --format '" + text + "' (expected rows or records)");
}

DType parse_precision(int precision) {
  if (precision == 32) return DType::f32;
  if (precision == 64) return DType::f64;
  throw UsageError("--precision must be 32 or 64");
}

void emit(const Options& opt, const std::string& text) {
  if (opt.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream file(opt.out);
  if (!file) throw std::runtime_error("cannot open output path " + opt.out);
  file << text;
}

void emit_plot(const Options& opt, const std::vector<double>& ys, const std::string& title) {
  if (opt.plot.empty()) return;
  std::ofstream file(opt.plot);
  if (!file) throw std::runtime_error("cannot open plot path " + opt.plot);
  file << render_line_svg(ys, title);
}

Tensor random_input(Shape shape, uint64_t seed, DType dtype) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), dtype);
}

ConfigEcho base_config(const Options& opt) {
  ConfigEcho config;
  config.emplace_back("module", opt.module);
  if (!opt.preset.empty()) config.emplace_back("preset", opt.preset);
  config.emplace_back("channels", std::to_string(opt.channels));
  config.emplace_back("ratio", std::to_string(opt.ratio));
  config.emplace_back("patch", std::to_string(opt.patch));
  config.emplace_back("size", opt.size);
  config.emplace_back("seed", std::to_string(opt.seed));
  config.emplace_back("precision", std::to_string(opt.precision));
  return config;
}

HeadConfig head_config(const Options& opt) {
  HeadConfig cfg;
  cfg.nc = opt.nc;
  cfg.reg_max = opt.reg_max;
  if (!opt.preset.empty()) {
    const ScalePreset& p = preset_by_name(opt.preset);
    cfg.level_channels = {apply_scale(p, 256), apply_scale(p, 512), apply_scale(p, 512)};
  }
  return cfg;
}

Convention convention(const Options& opt) {
  Convention conv;
  conv.flop_factor = opt.factor;
  conv.softmax_alpha = opt.alpha;
  return conv;
}

int cmd_shapes(const Options& opt) {
  auto [h, w] = parse_size(opt.size);
  DType dtype = parse_precision(opt.precision);
  ShapeTrace trace;
  std::mt19937_64 rng(opt.seed);
  if (opt.module == "isb") {
    IsbBottleneck block(IsbConfig{opt.channels, opt.ratio, opt.patch}, true, rng);
    Tensor x = random_input({1, opt.channels, h, w}, opt.seed, dtype);
    trace.add("input", x.shape());
    block.forward(x, &trace);
  } else if (opt.module == "bottleneck") {
    Bottleneck block(opt.channels, true, rng);
    Tensor x = random_input({1, opt.channels, h, w}, opt.seed, dtype);
    trace.add("input", x.shape());
    Tensor y1 = block.cv1.forward(x);
    trace.add("cv1", y1.shape());
    Tensor y2 = block.cv2.forward(y1);
    trace.add("cv2", y2.shape());
    trace.add("output", add(x, y2).shape());
  } else if (opt.module == "attention") {
    Tensor x = random_input({1, opt.channels, h, w}, opt.seed, dtype);
    trace.add("input", x.shape());
    Tensor patches = reconstruct(x, opt.patch, &trace);
    if (opt.channels % 3 == 0) {
      Qkv qkv = split_qkv(patches);
      trace.add("qkv", qkv.q.shape());
      Tensor f = fcgsa(qkv.q, qkv.k, qkv.v, &trace);
      reassemble(f, opt.patch, h, w, &trace);
    } else {
      reassemble(patches, opt.patch, h, w, &trace);
    }
  } else if (opt.module == "head" || opt.module == "isadh") {
    HeadConfig cfg = head_config(opt);
    HeadVariant variant = opt.module == "isadh" ? HeadVariant::isadh : HeadVariant::baseline;
    DetectHead head(cfg, variant, rng);
    std::vector<Tensor> feats;
    for (size_t i = 0; i < cfg.level_channels.size(); ++i) {
      int64_t stride = cfg.strides[i];
      feats.push_back(random_input(
          {1, cfg.level_channels[i], std::max<int64_t>(1, h / stride),
           std::max<int64_t>(1, w / stride)},
          opt.seed + i, dtype));
      trace.add("l" + std::to_string(i) + ".input", feats.back().shape());
    }
    head.forward(feats, &trace);
  } else {
    throw UsageError("unknown module '" + opt.module +
                     "' for shapes (expected isb, bottleneck, attention, head, isadh)");
  }
  emit(opt, render_shape_trace(trace, "shapes", base_config(opt), parse_format(opt.format)));
  return 0;
}

int cmd_gradcheck(const Options& opt) {
  auto [h, w] = opt.size_set ? parse_size(opt.size) : std::pair<int64_t, int64_t>{4, 4};
  if (h > 16 || w > 16) {
    throw UsageError("gradcheck cap: H, W <= 16 (finite differences are quadratic in the "
                     "coordinate count); got " +
                     opt.size);
  }
  std::mt19937_64 rng(opt.seed);
  std::vector<NamedGradReport> reports;
  auto run = [&](const std::string& name, const std::function<Tensor()>& f,
                 const std::vector<Tensor>& wrt) {
    reports.push_back({name, gradcheck(f, wrt, 1e-4, 1e-5)});
  };
  auto rand_tracked = [&](Shape shape) {
    Tensor t = random_input(std::move(shape), rng(), DType::f64);
    t.set_requires_grad(true);
    return t;
  };

  if (opt.module == "attention") {
    Tensor q = rand_tracked({1, 4, 3, 5});
    Tensor k = rand_tracked({1, 4, 3, 5});
    Tensor v = rand_tracked({1, 4, 3, 5});
    Tensor proj = random_input({1, 4, 3, 5}, opt.seed + 9, DType::f64);
    run("fcgsa", [&] { return sum(mul(fcgsa(q, k, v), proj)); }, {q, k, v});
  } else if (opt.module == "conv") {
    Tensor x = rand_tracked({1, 2, std::min<int64_t>(h, 5), std::min<int64_t>(w, 5)});
    Tensor wt = rand_tracked({3, 2, 3, 3});
    Tensor b = rand_tracked({3});
    ConvSpec spec{2, 3, 3, 1, 1, true};
    Tensor proj = random_input({1, 3, x.dim(2), x.dim(3)}, opt.seed + 9, DType::f64);
    run("conv2d", [&] { return sum(mul(conv2d(x, wt, b, spec), proj)); }, {x, wt, b});
  } else if (opt.module == "bottleneck" || opt.module == "isb") {
    bool isb = opt.module == "isb";
    int64_t c = std::min<int64_t>(opt.channels, 8);
    Tensor x = rand_tracked({1, c, 4, 4});
    Tensor proj = random_input({1, c, 4, 4}, opt.seed + 9, DType::f64);
    if (isb) {
      IsbBottleneck block(IsbConfig{c, std::min<int64_t>(opt.ratio, c), 2}, true, rng);
      std::vector<Tensor> wrt = block.parameters();
      wrt.push_back(x);
      run("bottleneck_isb", [&] { return sum(mul(block.forward(x), proj)); }, wrt);
    } else {
      Bottleneck block(c, true, rng);
      std::vector<Tensor> wrt = block.parameters();
      wrt.push_back(x);
      run("bottleneck", [&] { return sum(mul(block.forward(x), proj)); }, wrt);
    }
  } else if (opt.module == "head" || opt.module == "isadh") {
    HeadConfig cfg;
    cfg.level_channels = {8};
    cfg.nc = 2;
    cfg.reg_max = 2;
    cfg.c2 = 8;
    cfg.c3 = 8;
    cfg.strides = {8};
    DetectHead head(cfg, opt.module == "isadh" ? HeadVariant::isadh : HeadVariant::baseline, rng);
    Tensor x = rand_tracked({1, 8, 4, 4});
    Tensor proj_c = random_input({1, 2, 4, 4}, opt.seed + 9, DType::f64);
    Tensor proj_b = random_input({1, 8, 4, 4}, opt.seed + 10, DType::f64);
    std::vector<Tensor> wrt = head.parameters();
    wrt.push_back(x);
    run(opt.module,
        [&] {
          HeadOutput out = head.forward({x});
          return add(sum(mul(out.cls[0], proj_c)), sum(mul(out.box[0], proj_b)));
        },
        wrt);
  } else {
    throw UsageError("unknown module '" + opt.module +
                     "' for gradcheck (expected attention, conv, bottleneck, isb, head, isadh)");
  }

  emit(opt, render_gradchecks(reports, "gradcheck", base_config(opt), parse_format(opt.format)));
  for (const NamedGradReport& r : reports) {
    if (!r.report.pass) return 1;
  }
  return 0;
}

CostReport profile_for(const Options& opt, const std::string& module, int64_t h, int64_t w) {
  Convention conv = convention(opt);
  if (module == "head" || module == "isadh") {
    return profile_head(head_config(opt),
                        module == "isadh" ? HeadVariant::isadh : HeadVariant::baseline, 1, h, w,
                        conv);
  }
  if (module == "bottleneck") {
    return profile_bottleneck(IsbConfig{opt.channels, opt.ratio, opt.patch}, false, 1, h, w, conv);
  }
  if (module == "isb") {
    return profile_bottleneck(IsbConfig{opt.channels, opt.ratio, opt.patch}, true, 1, h, w, conv);
  }
  if (module == "isb-branch") {
    return profile_isb_branch(IsbConfig{opt.channels, opt.ratio, opt.patch}, 1, h, w, conv);
  }
  if (module == "attention") {
    IsbConfig cfg{opt.channels, opt.ratio, opt.patch};
    cfg.validate();
    return profile_attention(1, cfg.c2(), opt.patch, h, w, conv);
  }
  throw UsageError("unknown module '" + module +
                   "' for profiling (expected head, isadh, bottleneck, isb, isb-branch, "
                   "attention)");
}

int cmd_profile(const Options& opt) {
  auto [h, w] = parse_size(opt.size);
  CostReport report = profile_for(opt, opt.module, h, w);
  emit(opt, render_cost_report(report, "profile", parse_format(opt.format)));
  return 0;
}

int cmd_compare(const Options& opt) {
  auto [h, w] = parse_size(opt.size);
  std::string base, variant;
  if (opt.module == "head" || opt.module == "isadh") {
    base = "head";
    variant = "isadh";
  } else if (opt.module == "bottleneck" || opt.module == "isb") {
    base = "bottleneck";
    variant = "isb";
  } else {
    throw UsageError("unknown module '" + opt.module +
                     "' for compare (expected head or bottleneck)");
  }
  CompareReport delta = compare(profile_for(opt, base, h, w), profile_for(opt, variant, h, w));
  emit(opt, render_compare_report(delta, "compare", parse_format(opt.format)));
  return 0;
}

int cmd_sweep(const Options& opt) {
  if (opt.module != "attention") {
    throw UsageError("sweep supports --module attention");
  }
  if (opt.min_side < 1 || opt.max_side < opt.min_side) {
    throw UsageError("sweep needs 1 <= min-side <= max-side");
  }
  IsbConfig cfg{opt.channels, opt.ratio, opt.patch};
  cfg.validate();
  Convention conv = convention(opt);
  SweepReport report;
  report.convention = conv;
  report.config = base_config(opt);
  std::vector<double> pixels, flops;
  for (int64_t side = opt.min_side; side <= opt.max_side; side *= 2) {
    CostReport r = profile_attention(1, cfg.c2(), opt.patch, side, side, conv);
    SweepRow row{side, side * side, r.total_flops()};
    report.rows.push_back(row);
    pixels.push_back(static_cast<double>(row.pixels));
    flops.push_back(static_cast<double>(row.flops));
  }
  if (report.rows.size() < 2) throw UsageError("sweep ladder needs at least two sizes");
  report.exponent = fit_log_log_slope(pixels, flops);
  emit(opt, render_sweep(report, "sweep", parse_format(opt.format)));
  emit_plot(opt, flops, "attention flops over the size ladder");
  return 0;
}

int cmd_train_toy(const Options& opt) {
  ToyModelConfig mc;
  mc.image_size = opt.image_size;
  mc.classes = opt.classes;
  mc.seed = opt.seed;
  if (opt.variant == "isb-isadh") {
    mc.use_isb = true;
    mc.use_isadh = true;
  } else if (opt.variant != "baseline") {
    throw UsageError("unknown --variant '" + opt.variant +
                     "' (expected baseline or isb-isadh)");
  }
  ToyDataset data = gen_synthetic(opt.samples, opt.image_size, opt.classes, opt.seed);
  ToyModel model(mc);
  TrainConfig tc;
  tc.steps = opt.steps;
  tc.lr = opt.lr;
  tc.momentum = opt.momentum;
  tc.batch = opt.batch;
  tc.seed = opt.seed;
  std::vector<double> losses = train(model, data, tc);
  ConfigEcho config = base_config(opt);
  config.emplace_back("variant", opt.variant);
  config.emplace_back("steps", std::to_string(opt.steps));
  config.emplace_back("lr", std::to_string(opt.lr));
  config.emplace_back("batch", std::to_string(opt.batch));
  config.emplace_back("samples", std::to_string(opt.samples));
  emit(opt, render_loss_curve(losses, "train-toy", config, parse_format(opt.format)));
  emit_plot(opt, losses, "toy training loss");
  return 0;
}

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("--module", opt.module, "target module");
  cmd->add_option("--preset", opt.preset, "scale preset: n, s, m, l, x");
  cmd->add_option("--channels", opt.channels, "channel count c");
  cmd->add_option("--ratio", opt.ratio, "compression ratio s");
  cmd->add_option("--patch", opt.patch, "patch side K");
  cmd->add_option("--nc", opt.nc, "class count");
  cmd->add_option("--reg-max", opt.reg_max, "regression bins per box side");
  cmd->add_option("--size", opt.size, "input size HxW");
  cmd->add_option("--seed", opt.seed, "random seed");
  cmd->add_option("--precision", opt.precision, "compute precision: 32 or 64");
  cmd->add_option("--format", opt.format, "output format: rows or records");
  cmd->add_option("--out", opt.out, "write the report to this path");
  cmd->add_option("--factor", opt.factor, "flops counted per multiply-add");
  cmd->add_option("--alpha", opt.alpha, "softmax flops per attention-score entry");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"instance-specific detector modules: shape tracing, gradient checks, "
               "cost profiling, and toy training"};
  app.require_subcommand(1);
  // Defaults < config file < flags; INI keys live in per-subcommand sections.
  app.set_config("--config", "", "read option defaults from an INI/TOML file");

  Options opt;
  CLI::App* shapes = app.add_subcommand("shapes", "trace intermediate tensor shapes");
  CLI::App* grad = app.add_subcommand("gradcheck", "compare reverse-mode gradients with "
                                                   "finite differences");
  CLI::App* profile = app.add_subcommand("profile", "analytic parameter/FLOP report");
  CLI::App* cmp = app.add_subcommand("compare", "cost delta between baseline and variant");
  CLI::App* sweep = app.add_subcommand("sweep", "attention cost over a size ladder");
  CLI::App* train = app.add_subcommand("train-toy", "synthetic grid-detection training");
  for (CLI::App* cmd : {shapes, grad, profile, cmp, sweep, train}) add_common(cmd, opt);
  sweep->add_option("--min-side", opt.min_side, "smallest ladder side");
  sweep->add_option("--max-side", opt.max_side, "largest ladder side");
  train->add_option("--variant", opt.variant, "baseline or isb-isadh");
  train->add_option("--steps", opt.steps, "optimizer steps");
  train->add_option("--lr", opt.lr, "learning rate");
  train->add_option("--momentum", opt.momentum, "SGD momentum");
  train->add_option("--batch", opt.batch, "batch size");
  train->add_option("--samples", opt.samples, "dataset size");
  train->add_option("--image-size", opt.image_size, "square image side");
  train->add_option("--classes", opt.classes, "number of classes");
  for (CLI::App* cmd : {shapes, grad, sweep, train}) {
    cmd->add_option("--plot", opt.plot, "optional SVG plot path");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  opt.size_set = grad->count("--size") > 0;

  try {
    if (*shapes) return cmd_shapes(opt);
    if (*grad) return cmd_gradcheck(opt);
    if (*profile) return cmd_profile(opt);
    if (*cmp) return cmd_compare(opt);
    if (*sweep) return cmd_sweep(opt);
    if (*train) return cmd_train_toy(opt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
