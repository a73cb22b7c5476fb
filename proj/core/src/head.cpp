#include "isdet/head.hpp"

#include <algorithm>
#include <stdexcept>

namespace isdet {

int64_t HeadConfig::box_width() const {
  if (c2 > 0) return c2;
  return std::max<int64_t>({16, level_channels.at(0) / 4, 4 * reg_max});
}

int64_t HeadConfig::cls_width() const {
  if (c3 > 0) return c3;
  return std::max<int64_t>(level_channels.at(0), std::min<int64_t>(nc, 100));
}

void HeadConfig::validate() const {
  if (level_channels.empty()) throw std::invalid_argument("head config: no levels");
  for (int64_t c : level_channels) {
    if (c < 1) throw std::invalid_argument("head config: level channels must be positive");
  }
  if (nc < 1 || reg_max < 1) {
    throw std::invalid_argument("head config: nc and reg_max must be positive");
  }
  if (box_width() < 1 || cls_width() < 1) {
    throw std::invalid_argument("head config: hidden widths must be positive");
  }
  if (strides.size() < level_channels.size()) {
    throw std::invalid_argument("head config: need one stride per level");
  }
}

DetectHead::DetectHead(HeadConfig c, HeadVariant var, std::mt19937_64& rng)
    : cfg((c.validate(), c)), variant(var) {
  int64_t w_box = cfg.box_width();
  int64_t w_cls = cfg.cls_width();
  int64_t box_k = variant == HeadVariant::isadh ? 1 : 3;  // asymmetric kernel design
  for (int64_t cin : cfg.level_channels) {
    LevelBlocks lb{
        ConvNormAct(cin, w_cls, 3, 1, NormKind::batch, rng),
        ConvNormAct(w_cls, w_cls, 3, 1, NormKind::batch, rng),
        Conv2d(ConvSpec::same(w_cls, cfg.nc, 1, 1, /*bias=*/true), rng),
        ConvNormAct(cin, w_box, box_k, 1, NormKind::batch, rng),
        ConvNormAct(w_box, w_box, box_k, 1, NormKind::batch, rng),
        Conv2d(ConvSpec::same(w_box, cfg.box_out(), 1, 1, /*bias=*/true), rng),
        std::nullopt,
        std::nullopt,
    };
    if (variant == HeadVariant::isadh) {
      lb.cls_inst.emplace(cin, w_cls, 1, 1, NormKind::instance, rng);
      lb.box_inst.emplace(cin, w_box, 1, 1, NormKind::instance, rng);
    }
    levels.push_back(std::move(lb));
  }
}

HeadOutput DetectHead::forward(const std::vector<Tensor>& features, ShapeTrace* trace) {
  if (features.size() != levels.size()) {
    throw std::invalid_argument("head: expected " + std::to_string(levels.size()) +
                                " feature levels, got " + std::to_string(features.size()));
  }
  HeadOutput out;
  for (size_t i = 0; i < levels.size(); ++i) {
    const Tensor& x = features[i];
    if (x.ndim() != 4 || x.dim(1) != cfg.level_channels[i]) {
      throw std::invalid_argument("head: level " + std::to_string(i) + " expects channels " +
                                  std::to_string(cfg.level_channels[i]) + ", got " +
                                  shape_str(x.shape()));
    }
    LevelBlocks& lb = levels[i];
    std::string tag = "l" + std::to_string(i);

    Tensor cls_h = lb.cls2.forward(lb.cls1.forward(x));
    if (trace) trace->add(tag + ".cls.hidden", cls_h.shape());
    if (lb.cls_inst) {
      Tensor inst = lb.cls_inst->forward(x);
      if (trace) trace->add(tag + ".cls.instance", inst.shape());
      cls_h = add(cls_h, inst);
    }
    Tensor cls_logits = lb.cls_pred.forward(cls_h);
    if (trace) trace->add(tag + ".cls.logits", cls_logits.shape());

    Tensor box_h = lb.box2.forward(lb.box1.forward(x));
    if (trace) trace->add(tag + ".box.hidden", box_h.shape());
    if (lb.box_inst) {
      Tensor inst = lb.box_inst->forward(x);
      if (trace) trace->add(tag + ".box.instance", inst.shape());
      box_h = add(box_h, inst);
    }
    Tensor box_out = lb.box_pred.forward(box_h);
    if (trace) trace->add(tag + ".box.dist", box_out.shape());

    out.cls.push_back(std::move(cls_logits));
    out.box.push_back(std::move(box_out));
  }
  return out;
}

std::vector<Tensor> DetectHead::parameters() const {
  std::vector<Tensor> ps;
  auto append = [&ps](const std::vector<Tensor>& qs) { ps.insert(ps.end(), qs.begin(), qs.end()); };
  for (const LevelBlocks& lb : levels) {
    append(lb.cls1.parameters());
    append(lb.cls2.parameters());
    append(lb.cls_pred.parameters());
    append(lb.box1.parameters());
    append(lb.box2.parameters());
    append(lb.box_pred.parameters());
    if (lb.cls_inst) append(lb.cls_inst->parameters());
    if (lb.box_inst) append(lb.box_inst->parameters());
  }
  return ps;
}

void DetectHead::set_mode(Mode mode) {
  for (LevelBlocks& lb : levels) {
    lb.cls1.set_mode(mode);
    lb.cls2.set_mode(mode);
    lb.box1.set_mode(mode);
    lb.box2.set_mode(mode);
  }
}

}  // namespace isdet
