#include "isdet/toytrain.hpp"

#include "isdet/patch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace isdet {

namespace {

double color_for(int64_t cls, int64_t channel) {
  return ((cls + 1) >> channel) & 1 ? 0.9 : 0.1;
}

}  // namespace

ToyDataset gen_synthetic(int64_t n, int64_t image_size, int64_t classes, uint64_t seed,
                         int64_t stride) {
  if (classes < 1) throw std::invalid_argument("gen_synthetic: classes must be >= 1");
  if (stride < 1 || image_size % stride != 0) {
    throw std::invalid_argument("gen_synthetic: image size must be divisible by the stride");
  }
  int64_t grid = image_size / stride;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 0.08);
  std::uniform_int_distribution<int64_t> rect_count(1, 3);
  std::uniform_int_distribution<int64_t> cls_dist(0, classes - 1);
  int64_t max_side = std::min<int64_t>(12, image_size / 2);
  std::uniform_int_distribution<int64_t> side_dist(4, max_side);

  ToyDataset data;
  data.image_size = image_size;
  data.classes = classes;
  data.stride = stride;
  data.grid = grid;
  for (int64_t si = 0; si < n; ++si) {
    std::vector<double> img(static_cast<size_t>(3 * image_size * image_size));
    for (double& v : img) v = noise(rng);
    std::vector<double> cls_t(static_cast<size_t>(classes * grid * grid), 0.0);
    std::vector<double> box_t(static_cast<size_t>(4 * grid * grid), 0.0);
    std::vector<double> mask(static_cast<size_t>(grid * grid), 0.0);

    int64_t rects = rect_count(rng);
    for (int64_t r = 0; r < rects; ++r) {
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        int64_t w = side_dist(rng), h = side_dist(rng);
        std::uniform_int_distribution<int64_t> x_dist(0, image_size - w);
        std::uniform_int_distribution<int64_t> y_dist(0, image_size - h);
        int64_t x0 = x_dist(rng), y0 = y_dist(rng);
        double cx = x0 + w / 2.0, cy = y0 + h / 2.0;
        int64_t cell_x = static_cast<int64_t>(cx) / stride;
        int64_t cell_y = static_cast<int64_t>(cy) / stride;
        int64_t cell = cell_y * grid + cell_x;
        if (mask[static_cast<size_t>(cell)] != 0.0) continue;  // one target per cell

        int64_t cls = cls_dist(rng);
        for (int64_t ch = 0; ch < 3; ++ch) {
          double col = color_for(cls, ch);
          for (int64_t y = y0; y < y0 + h; ++y) {
            for (int64_t x = x0; x < x0 + w; ++x) {
              img[static_cast<size_t>((ch * image_size + y) * image_size + x)] = col;
            }
          }
        }
        mask[static_cast<size_t>(cell)] = 1.0;
        cls_t[static_cast<size_t>(cls * grid * grid + cell)] = 1.0;
        double off_x = (cx - static_cast<double>(cell_x * stride)) / static_cast<double>(stride);
        double off_y = (cy - static_cast<double>(cell_y * stride)) / static_cast<double>(stride);
        box_t[static_cast<size_t>(0 * grid * grid + cell)] = off_x;
        box_t[static_cast<size_t>(1 * grid * grid + cell)] = off_y;
        box_t[static_cast<size_t>(2 * grid * grid + cell)] =
            static_cast<double>(w) / static_cast<double>(image_size);
        box_t[static_cast<size_t>(3 * grid * grid + cell)] =
            static_cast<double>(h) / static_cast<double>(image_size);
        placed = true;
      }
      if (!placed) {
        throw std::runtime_error("gen_synthetic: no collision-free placement after 100 retries");
      }
    }
    ToySample sample;
    sample.image = Tensor({3, image_size, image_size}, std::move(img));
    sample.cls_target = Tensor({classes, grid, grid}, std::move(cls_t));
    sample.box_target = Tensor({4, grid, grid}, std::move(box_t));
    sample.pos_mask = Tensor({1, grid, grid}, std::move(mask));
    data.samples.push_back(std::move(sample));
  }
  return data;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw std::invalid_argument("bce_with_logits: shape mismatch " + shape_str(logits.shape()) +
                                " vs " + shape_str(targets.shape()));
  }
  auto zv = logits.values();
  auto tv = targets.values();
  std::vector<double> out(zv.size());
  for (size_t i = 0; i < out.size(); ++i) {
    double z = zv[i];
    out[i] = std::max(z, 0.0) - z * tv[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return make_op(logits.shape(), std::move(out), logits.dtype(), {logits, targets},
                 [](BackwardContext& ctx) {
                   auto g = ctx.out_grad();
                   auto zv = ctx.parent_values(0);
                   auto tv = ctx.parent_values(1);
                   if (ctx.parent_needs_grad(0)) {
                     auto pg = ctx.parent_grad(0);
                     for (size_t i = 0; i < g.size(); ++i) {
                       double sig = 1.0 / (1.0 + std::exp(-zv[i]));
                       pg[i] += g[i] * (sig - tv[i]);
                     }
                   }
                   if (ctx.parent_needs_grad(1)) {
                     auto pg = ctx.parent_grad(1);
                     for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * (-zv[i]);
                   }
                 });
}

Tensor l1_elem(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("l1: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                shape_str(target.shape()));
  }
  auto pv = pred.values();
  auto tv = target.values();
  std::vector<double> out(pv.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::abs(pv[i] - tv[i]);
  return make_op(pred.shape(), std::move(out), pred.dtype(), {pred, target},
                 [](BackwardContext& ctx) {
                   auto g = ctx.out_grad();
                   auto pv = ctx.parent_values(0);
                   auto tv = ctx.parent_values(1);
                   auto sign = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
                   if (ctx.parent_needs_grad(0)) {
                     auto pg = ctx.parent_grad(0);
                     for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * sign(pv[i] - tv[i]);
                   }
                   if (ctx.parent_needs_grad(1)) {
                     auto pg = ctx.parent_grad(1);
                     for (size_t i = 0; i < g.size(); ++i) pg[i] -= g[i] * sign(pv[i] - tv[i]);
                   }
                 });
}

Tensor toy_loss(const HeadOutput& pred, const Tensor& cls_target, const Tensor& box_target,
                const Tensor& pos_mask) {
  if (pred.cls.size() != 1 || pred.box.size() != 1) {
    throw std::invalid_argument("toy_loss: expects a single-level head output");
  }
  const Tensor& cls_logits = pred.cls[0];
  const Tensor& box_pred = pred.box[0];
  if (cls_logits.shape() != cls_target.shape() || box_pred.shape() != box_target.shape()) {
    throw std::invalid_argument("toy_loss: prediction/target shape mismatch");
  }

  Tensor bce = bce_with_logits(cls_logits, cls_target);
  Tensor cls_term = scale(sum(bce), 1.0 / static_cast<double>(bce.numel()));

  // Mask the four box channels by cell occupancy.
  int64_t b = box_pred.dim(0), g = box_pred.dim(2);
  std::vector<double> mask4(static_cast<size_t>(b * 4 * g * g));
  auto mv = pos_mask.values();
  double npos = 0.0;
  for (double v : mv) npos += v;
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t ch = 0; ch < 4; ++ch) {
      for (int64_t i = 0; i < g * g; ++i) {
        mask4[static_cast<size_t>((bi * 4 + ch) * g * g + i)] =
            mv[static_cast<size_t>(bi * g * g + i)];
      }
    }
  }
  Tensor masked = mul(l1_elem(box_pred, box_target), Tensor({b, 4, g, g}, std::move(mask4)));
  Tensor box_term = scale(sum(masked), 1.0 / std::max(1.0, 4.0 * npos));
  return add(cls_term, box_term);
}

Tensor stack_batch(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_batch: no inputs");
  const Shape& unit = parts[0]->shape();
  int64_t per = parts[0]->numel();
  std::vector<double> out;
  out.reserve(static_cast<size_t>(per) * parts.size());
  for (const Tensor* t : parts) {
    if (t->shape() != unit) throw std::invalid_argument("stack_batch: shape mismatch");
    auto v = t->values();
    out.insert(out.end(), v.begin(), v.end());
  }
  Shape shape;
  shape.push_back(static_cast<int64_t>(parts.size()));
  shape.insert(shape.end(), unit.begin(), unit.end());
  return Tensor(std::move(shape), std::move(out));
}

namespace {

ToyModelConfig validated(ToyModelConfig c) {
  if (c.width < 2) throw std::invalid_argument("toy model: width must be >= 2");
  if (c.image_size % 4 != 0) {
    throw std::invalid_argument("toy model: image size must be divisible by the stride (4)");
  }
  return c;
}

}  // namespace

ToyModel::ToyModel(ToyModelConfig c)
    : cfg(validated(c)),
      rng(cfg.seed),
      stem1(3 * 16, cfg.width, 3, 1, NormKind::batch, rng),
      stem2(cfg.width, cfg.width, 3, 1, NormKind::batch, rng),
      block_plain(cfg.use_isb
                      ? std::optional<Bottleneck>{}
                      : std::optional<Bottleneck>(Bottleneck(cfg.width, true, rng))),
      block_isb(cfg.use_isb
                    ? std::optional<IsbBottleneck>(IsbBottleneck(
                          IsbConfig{cfg.width, cfg.ratio, cfg.patch}, true, rng))
                    : std::optional<IsbBottleneck>{}),
      head(HeadConfig{{cfg.width}, cfg.classes, 1, 0, 0, {4}},
           cfg.use_isadh ? HeadVariant::isadh : HeadVariant::baseline, rng) {}

HeadOutput ToyModel::forward(const Tensor& images) {
  Tensor x = space_to_depth(images, 4);  // stride-4 grid, 3·16 channels
  x = stem2.forward(stem1.forward(x));
  x = block_isb ? block_isb->forward(x) : block_plain->forward(x);
  return head.forward({x});
}

std::vector<Tensor> ToyModel::parameters() const {
  std::vector<Tensor> ps = stem1.parameters();
  auto append = [&ps](const std::vector<Tensor>& qs) { ps.insert(ps.end(), qs.begin(), qs.end()); };
  append(stem2.parameters());
  if (block_isb) append(block_isb->parameters());
  if (block_plain) append(block_plain->parameters());
  append(head.parameters());
  return ps;
}

void ToyModel::set_mode(Mode mode) {
  stem1.set_mode(mode);
  stem2.set_mode(mode);
  if (block_isb) block_isb->set_mode(mode);
  if (block_plain) block_plain->set_mode(mode);
  head.set_mode(mode);
}

std::vector<double> train(ToyModel& model, const ToyDataset& data, const TrainConfig& cfg) {
  if (cfg.lr < 0) throw std::invalid_argument("train: learning rate must be >= 0");
  if (cfg.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (data.samples.empty()) throw std::invalid_argument("train: empty dataset");

  std::vector<Tensor> params = model.parameters();
  std::vector<std::vector<double>> velocity(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    velocity[i].assign(static_cast<size_t>(params[i].numel()), 0.0);
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  model.set_mode(Mode::train);
  std::vector<double> losses;
  size_t cursor = 0;
  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<const Tensor*> images, cls_ts, box_ts, masks;
    for (int64_t i = 0; i < cfg.batch; ++i) {
      const ToySample& s = data.samples[order[cursor]];
      cursor = (cursor + 1) % order.size();
      images.push_back(&s.image);
      cls_ts.push_back(&s.cls_target);
      box_ts.push_back(&s.box_target);
      masks.push_back(&s.pos_mask);
    }
    HeadOutput out = model.forward(stack_batch(images));
    Tensor loss =
        toy_loss(out, stack_batch(cls_ts), stack_batch(box_ts), stack_batch(masks));
    double value = loss.scalar();
    if (!std::isfinite(value)) {
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
    }
    backward(loss);
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor g = params[i].grad();
      auto gv = g.values();
      auto w = params[i].values_mut();
      auto& v = velocity[i];
      for (size_t j = 0; j < w.size(); ++j) {
        v[j] = cfg.momentum * v[j] + gv[j];
        w[j] -= cfg.lr * v[j];
      }
      params[i].clear_grad();
    }
    losses.push_back(value);
  }
  return losses;
}

}  // namespace isdet
