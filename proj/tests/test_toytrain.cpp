#include <doctest.h>

#include <cmath>
#include <random>

#include "isdet/gradcheck.hpp"
#include "isdet/toytrain.hpp"
#include "oracles.hpp"

using namespace isdet;
using test::max_abs_diff;
using test::random_tensor;

TEST_CASE("gen_synthetic is deterministic and shape-correct") {
  ToyDataset a = gen_synthetic(16, 32, 2, 0);
  ToyDataset b = gen_synthetic(16, 32, 2, 0);
  REQUIRE(a.samples.size() == 16);
  CHECK(a.grid == 8);
  CHECK(a.stride == 4);
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].image.shape() == Shape{3, 32, 32});
    CHECK(a.samples[i].cls_target.shape() == Shape{2, 8, 8});
    CHECK(a.samples[i].box_target.shape() == Shape{4, 8, 8});
    CHECK(max_abs_diff(a.samples[i].image, b.samples[i].image) == 0.0);
    CHECK(max_abs_diff(a.samples[i].cls_target, b.samples[i].cls_target) == 0.0);
  }
  ToyDataset c = gen_synthetic(4, 32, 2, 1);
  CHECK(max_abs_diff(a.samples[0].image, c.samples[0].image) > 0.0);
}

TEST_CASE("cells without objects have zero targets") {
  ToyDataset data = gen_synthetic(8, 32, 3, 7);
  for (const ToySample& s : data.samples) {
    double positives = 0;
    for (int64_t cell = 0; cell < 64; ++cell) {
      double m = s.pos_mask.values()[cell];
      positives += m;
      double cls_sum = 0;
      for (int64_t c = 0; c < 3; ++c) cls_sum += s.cls_target.values()[c * 64 + cell];
      if (m == 0.0) {
        CHECK(cls_sum == 0.0);
        for (int64_t c = 0; c < 4; ++c) CHECK(s.box_target.values()[c * 64 + cell] == 0.0);
      } else {
        CHECK(cls_sum == 1.0);
      }
    }
    CHECK(positives >= 1.0);
  }
}

TEST_CASE("gen_synthetic validates its preconditions") {
  CHECK_THROWS_AS(gen_synthetic(1, 30, 2, 0), std::invalid_argument);
  CHECK_THROWS_AS(gen_synthetic(1, 32, 0, 0), std::invalid_argument);
}

namespace {

HeadOutput fabricated_output(const Tensor& cls, const Tensor& box) {
  HeadOutput out;
  out.cls.push_back(cls);
  out.box.push_back(box);
  return out;
}

}  // namespace

TEST_CASE("toy_loss is near zero for confident exact predictions") {
  ToyDataset data = gen_synthetic(2, 32, 2, 3);
  std::vector<const Tensor*> cls{&data.samples[0].cls_target, &data.samples[1].cls_target};
  std::vector<const Tensor*> box{&data.samples[0].box_target, &data.samples[1].box_target};
  std::vector<const Tensor*> mask{&data.samples[0].pos_mask, &data.samples[1].pos_mask};
  Tensor cls_t = stack_batch(cls);
  Tensor box_t = stack_batch(box);
  Tensor mask_t = stack_batch(mask);

  std::vector<double> logits(static_cast<size_t>(cls_t.numel()));
  for (int64_t i = 0; i < cls_t.numel(); ++i) {
    logits[static_cast<size_t>(i)] = cls_t.values()[i] > 0.5 ? 40.0 : -40.0;
  }
  Tensor loss = toy_loss(fabricated_output(Tensor(cls_t.shape(), logits), box_t), cls_t, box_t,
                         mask_t);
  CHECK(loss.scalar() >= 0.0);
  CHECK(loss.scalar() <= 1e-6);
}

TEST_CASE("toy_loss: zero logits against balanced targets give ln 2 per logit") {
  Tensor cls_t = Tensor::full({1, 2, 2, 2}, 0.5);
  Tensor box_t = Tensor::zeros({1, 4, 2, 2});
  Tensor mask = Tensor::zeros({1, 1, 2, 2});
  Tensor loss = toy_loss(fabricated_output(Tensor::zeros({1, 2, 2, 2}), box_t), cls_t, box_t, mask);
  CHECK(loss.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("toy_loss rejects mismatched grids") {
  Tensor cls_t = Tensor::zeros({1, 2, 2, 2});
  Tensor box_t = Tensor::zeros({1, 4, 2, 2});
  Tensor mask = Tensor::zeros({1, 1, 2, 2});
  CHECK_THROWS_AS(
      toy_loss(fabricated_output(Tensor::zeros({1, 2, 3, 3}), box_t), cls_t, box_t, mask),
      std::invalid_argument);
}

TEST_CASE("toy_loss gradients match the finite-difference oracle on a 2x2 grid") {
  std::mt19937_64 rng(501);
  Tensor cls_logits = random_tensor({1, 2, 2, 2}, rng, -1.0, 1.0);
  Tensor box_pred = random_tensor({1, 4, 2, 2}, rng, 0.1, 0.9);
  Tensor cls_t({1, 2, 2, 2}, {1, 0, 0, 0, 0, 0, 0, 1});
  Tensor box_t = random_tensor({1, 4, 2, 2}, rng, -0.5, 0.5);  // no ties with box_pred
  Tensor mask({1, 1, 2, 2}, {1, 0, 0, 1});
  cls_logits.set_requires_grad(true);
  box_pred.set_requires_grad(true);
  GradReport r = gradcheck(
      [&] { return toy_loss(fabricated_output(cls_logits, box_pred), cls_t, box_t, mask); },
      {cls_logits, box_pred});
  CHECK(r.pass);
}

TEST_CASE("end-to-end toy model gradients match the finite-difference oracle") {
  ToyModelConfig mc;
  mc.image_size = 8;
  mc.width = 4;
  mc.ratio = 4;
  mc.patch = 2;
  mc.use_isb = true;
  mc.use_isadh = true;
  ToyModel model(mc);
  std::mt19937_64 rng(499);
  Tensor image = random_tensor({1, 3, 8, 8}, rng);
  Tensor cls_t({1, 2, 2, 2}, {1, 0, 0, 0, 0, 0, 0, 1});
  Tensor box_t = random_tensor({1, 4, 2, 2}, rng, 0.2, 0.8);
  Tensor mask({1, 1, 2, 2}, {1, 0, 0, 1});
  image.set_requires_grad(true);
  std::vector<Tensor> wrt = model.parameters();
  wrt.push_back(image);
  GradReport r = gradcheck(
      [&] { return toy_loss(model.forward(image), cls_t, box_t, mask); }, wrt);
  CHECK(r.pass);
}

TEST_CASE("toy models forward with the contracted grid") {
  ToyModelConfig cfg;
  cfg.use_isb = true;
  cfg.use_isadh = true;
  ToyModel model(cfg);
  std::mt19937_64 rng(503);
  Tensor images = random_tensor({2, 3, 32, 32}, rng);
  HeadOutput out = model.forward(images);
  CHECK(out.cls[0].shape() == Shape{2, 2, 8, 8});
  CHECK(out.box[0].shape() == Shape{2, 4, 8, 8});
}

TEST_CASE("lr = 0 keeps the loss curve constant") {
  ToyDataset data = gen_synthetic(8, 32, 2, 0);
  ToyModel model(ToyModelConfig{});
  TrainConfig tc;
  tc.steps = 4;
  tc.lr = 0.0;
  tc.batch = 4;
  auto losses = train(model, data, tc);
  REQUIRE(losses.size() == 4);
  // Same parameters and same batch composition each epoch pass is not
  // guaranteed, but with lr=0 every forward over one epoch cycle repeats.
  ToyModel model2(ToyModelConfig{});
  auto losses2 = train(model2, data, tc);
  for (size_t i = 0; i < losses.size(); ++i) CHECK(losses[i] == losses2[i]);
  CHECK(losses[0] > 0.0);
}

TEST_CASE("training is deterministic for a fixed seed") {
  ToyDataset data = gen_synthetic(8, 32, 2, 0);
  TrainConfig tc;
  tc.steps = 6;
  tc.batch = 4;
  tc.lr = 0.05;
  ToyModel a((ToyModelConfig{}));
  ToyModel b((ToyModelConfig{}));
  auto la = train(a, data, tc);
  auto lb = train(b, data, tc);
  for (size_t i = 0; i < la.size(); ++i) CHECK(la[i] == lb[i]);
}

TEST_CASE("short training runs descend and stay finite") {
  ToyDataset data = gen_synthetic(16, 32, 2, 0);
  TrainConfig tc;
  tc.steps = 25;
  tc.batch = 8;
  tc.lr = 0.05;
  for (bool full : {false, true}) {
    ToyModelConfig mc;
    mc.use_isb = full;
    mc.use_isadh = full;
    ToyModel model(mc);
    auto losses = train(model, data, tc);
    for (double v : losses) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
    }
    CHECK(losses.back() < losses.front());
  }
}

TEST_CASE("no dead parameters within the first ten steps") {
  ToyDataset data = gen_synthetic(8, 32, 2, 0);
  ToyModelConfig mc;
  mc.use_isb = true;
  mc.use_isadh = true;
  ToyModel model(mc);
  std::vector<Tensor> params = model.parameters();
  std::vector<bool> touched(params.size(), false);
  model.set_mode(Mode::train);
  for (int step = 0; step < 10; ++step) {
    std::vector<const Tensor*> imgs, cls, box, mask;
    for (int64_t i = 0; i < 4; ++i) {
      const ToySample& s = data.samples[(step * 4 + i) % data.samples.size()];
      imgs.push_back(&s.image);
      cls.push_back(&s.cls_target);
      box.push_back(&s.box_target);
      mask.push_back(&s.pos_mask);
    }
    HeadOutput out = model.forward(stack_batch(imgs));
    Tensor loss = toy_loss(out, stack_batch(cls), stack_batch(box), stack_batch(mask));
    backward(loss);
    for (size_t p = 0; p < params.size(); ++p) {
      Tensor grad = params[p].grad();
      for (double g : grad.values()) {
        if (g != 0.0) {
          touched[p] = true;
          break;
        }
      }
      params[p].clear_grad();
    }
  }
  for (size_t p = 0; p < params.size(); ++p) CHECK(touched[p]);
}
