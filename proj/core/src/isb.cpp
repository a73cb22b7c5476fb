#include "isdet/isb.hpp"

#include <stdexcept>

#include "isdet/patch.hpp"

namespace isdet {

void IsbConfig::validate() const {
  if (channels < 1 || ratio < 1 || patch < 1) {
    throw std::invalid_argument("isb config: channels, ratio, and patch must be positive");
  }
  if (channels / ratio < 1) {
    throw std::invalid_argument("isb config: compression floor(c/s) must be >= 1, got c = " +
                                std::to_string(channels) + ", s = " + std::to_string(ratio));
  }
}

IsbChannels derive_channels(int64_t channels, int64_t ratio) {
  IsbConfig cfg;
  cfg.channels = channels;
  cfg.ratio = ratio;
  cfg.validate();
  return IsbChannels{cfg.c1(), cfg.c2(), cfg.c3()};
}

IsbBranch::IsbBranch(IsbConfig c, std::mt19937_64& rng)
    : cfg((c.validate(), c)),
      compress(cfg.channels, cfg.c1(), 1, 1, NormKind::instance, rng),
      expand(cfg.c2(), cfg.channels, 3, 1, NormKind::instance, rng) {}

Tensor IsbBranch::forward(const Tensor& x, ShapeTrace* trace) {
  if (x.ndim() != 4 || x.dim(1) != cfg.channels) {
    throw std::invalid_argument("isb branch: expected B×" + std::to_string(cfg.channels) +
                                "×H×W input, got " + shape_str(x.shape()));
  }
  int64_t h = x.dim(2), w = x.dim(3);
  Tensor compressed = compress.forward(x);
  if (trace) trace->add("compress", compressed.shape());
  Tensor patches = reconstruct(compressed, cfg.patch, trace);
  Qkv qkv = split_qkv(patches);
  if (trace) trace->add("qkv", qkv.q.shape());
  Tensor attended = fcgsa(qkv.q, qkv.k, qkv.v, trace);
  Tensor spatial = reassemble(attended, cfg.patch, h, w);
  if (trace) trace->add("reassemble", spatial.shape());
  Tensor out = expand.forward(spatial);
  if (trace) trace->add("expand", out.shape());
  return out;
}

std::vector<Tensor> IsbBranch::parameters() const {
  std::vector<Tensor> ps = compress.parameters();
  auto es = expand.parameters();
  ps.insert(ps.end(), es.begin(), es.end());
  return ps;
}

Bottleneck::Bottleneck(int64_t c, bool sc, std::mt19937_64& rng)
    : channels(c),
      shortcut(sc),
      cv1(c, c, 3, 1, NormKind::batch, rng),
      cv2(c, c, 3, 1, NormKind::batch, rng) {}

Tensor Bottleneck::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != channels) {
    throw std::invalid_argument("bottleneck: expected B×" + std::to_string(channels) +
                                "×H×W input, got " + shape_str(x.shape()));
  }
  Tensor y = cv2.forward(cv1.forward(x));
  return shortcut ? add(x, y) : y;
}

std::vector<Tensor> Bottleneck::parameters() const {
  std::vector<Tensor> ps = cv1.parameters();
  auto qs = cv2.parameters();
  ps.insert(ps.end(), qs.begin(), qs.end());
  return ps;
}

void Bottleneck::set_mode(Mode mode) {
  cv1.set_mode(mode);
  cv2.set_mode(mode);
}

IsbBottleneck::IsbBottleneck(IsbConfig cfg, bool shortcut, std::mt19937_64& rng)
    : main(cfg.channels, shortcut, rng), branch(cfg, rng) {}

Tensor IsbBottleneck::forward(const Tensor& x, ShapeTrace* trace) {
  Tensor main_out = main.forward(x);
  Tensor branch_out = branch.forward(x, trace);
  Tensor out = add(main_out, branch_out);
  if (trace) trace->add("fused", out.shape());
  return out;
}

std::vector<Tensor> IsbBottleneck::parameters() const {
  std::vector<Tensor> ps = main.parameters();
  auto bs = branch.parameters();
  ps.insert(ps.end(), bs.begin(), bs.end());
  return ps;
}

void IsbBottleneck::set_mode(Mode mode) { main.set_mode(mode); }

}  // namespace isdet
