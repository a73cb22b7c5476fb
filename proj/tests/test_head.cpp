#include <doctest.h>

#include <cmath>
#include <random>

#include "isdet/gradcheck.hpp"
#include "isdet/head.hpp"
#include "isdet/profiler.hpp"
#include "oracles.hpp"

using namespace isdet;
using test::max_abs_diff;
using test::random_tensor;

namespace {

HeadConfig miniature() {
  HeadConfig cfg;
  cfg.level_channels = {8};
  cfg.nc = 2;
  cfg.reg_max = 2;
  cfg.c2 = 8;
  cfg.c3 = 8;
  cfg.strides = {8};
  return cfg;
}

std::vector<Tensor> level_features(const HeadConfig& cfg, int64_t b, int64_t base_hw,
                                   std::mt19937_64& rng) {
  std::vector<Tensor> feats;
  for (size_t i = 0; i < cfg.level_channels.size(); ++i) {
    int64_t hw = std::max<int64_t>(1, base_hw >> i);
    feats.push_back(test::random_tensor({b, cfg.level_channels[i], hw, hw}, rng));
  }
  return feats;
}

}  // namespace

TEST_CASE("head hidden widths follow the default rule") {
  HeadConfig cfg;  // 256/512/512, nc 80, reg_max 16
  CHECK(cfg.box_width() == 64);   // max(16, 256/4, 64)
  CHECK(cfg.cls_width() == 256);  // max(256, min(80, 100))
  CHECK(cfg.box_out() == 64);
  HeadConfig tiny = miniature();
  CHECK(tiny.box_width() == 8);
  CHECK(tiny.cls_width() == 8);
}

TEST_CASE("both variants produce the per-level output contract") {
  std::mt19937_64 rng(307);
  HeadConfig cfg;  // three levels
  for (HeadVariant variant : {HeadVariant::baseline, HeadVariant::isadh}) {
    DetectHead head(cfg, variant, rng);
    auto feats = level_features(cfg, 2, 8, rng);
    HeadOutput out = head.forward(feats);
    REQUIRE(out.cls.size() == 3);
    REQUIRE(out.box.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
      CHECK(out.cls[i].dim(1) == 80);
      CHECK(out.box[i].dim(1) == 64);
      CHECK(out.cls[i].dim(2) == feats[i].dim(2));
      CHECK(out.box[i].dim(3) == feats[i].dim(3));
    }
  }
}

TEST_CASE("zero final predictors give all-zero logits") {
  std::mt19937_64 rng(311);
  DetectHead head(miniature(), HeadVariant::baseline, rng);
  for (auto& lb : head.levels) {
    for (double& v : lb.cls_pred.weight.values_mut()) v = 0.0;
    for (double& v : lb.cls_pred.bias.values_mut()) v = 0.0;
    for (double& v : lb.box_pred.weight.values_mut()) v = 0.0;
    for (double& v : lb.box_pred.bias.values_mut()) v = 0.0;
  }
  Tensor x = random_tensor({1, 8, 4, 4}, rng);
  HeadOutput out = head.forward({x});
  for (double v : out.cls[0].values()) CHECK(v == 0.0);
  for (double v : out.box[0].values()) CHECK(v == 0.0);
}

TEST_CASE("head rejects channel mismatches") {
  std::mt19937_64 rng(313);
  DetectHead head(miniature(), HeadVariant::baseline, rng);
  CHECK_THROWS_AS(head.forward({random_tensor({1, 7, 4, 4}, rng)}), std::invalid_argument);
  CHECK_THROWS_AS(head.forward({}), std::invalid_argument);
}

TEST_CASE("zeroing instance paths reduces isadh to the asymmetric composition") {
  std::mt19937_64 rng(317);
  DetectHead head(miniature(), HeadVariant::isadh, rng);
  for (auto& lb : head.levels) {
    for (double& v : lb.cls_inst->conv.weight.values_mut()) v = 0.0;
    for (double& v : lb.box_inst->conv.weight.values_mut()) v = 0.0;
  }
  Tensor x = random_tensor({2, 8, 4, 4}, rng);
  HeadOutput out = head.forward({x});

  // Independent composition of the main branches from the same sublayers.
  auto& lb = head.levels[0];
  Tensor cls_ref = lb.cls_pred.forward(lb.cls2.forward(lb.cls1.forward(x)));
  Tensor box_ref = lb.box_pred.forward(lb.box2.forward(lb.box1.forward(x)));
  CHECK(max_abs_diff(out.cls[0], cls_ref) == 0.0);
  CHECK(max_abs_diff(out.box[0], box_ref) == 0.0);
}

TEST_CASE("isadh box branch uses 1x1 kernels, cls branch keeps 3x3") {
  std::mt19937_64 rng(331);
  DetectHead head(miniature(), HeadVariant::isadh, rng);
  CHECK(head.levels[0].box1.conv.spec.kernel == 1);
  CHECK(head.levels[0].box2.conv.spec.kernel == 1);
  CHECK(head.levels[0].cls1.conv.spec.kernel == 3);
  CHECK(head.levels[0].cls2.conv.spec.kernel == 3);
}

TEST_CASE("eval-mode heads are batch-decomposable") {
  std::mt19937_64 rng(337);
  for (HeadVariant variant : {HeadVariant::baseline, HeadVariant::isadh}) {
    DetectHead head(miniature(), variant, rng);
    head.forward({random_tensor({2, 8, 4, 4}, rng)});  // warm running stats
    head.set_mode(Mode::eval);
    Tensor x = random_tensor({2, 8, 4, 4}, rng);
    HeadOutput joint = head.forward({x});
    for (int64_t b = 0; b < 2; ++b) {
      HeadOutput single = head.forward({narrow(x, 0, b, 1)});
      for (int64_t i = 0; i < single.cls[0].numel(); ++i) {
        CHECK(std::abs(joint.cls[0].values()[b * single.cls[0].numel() + i] -
                       single.cls[0].values()[i]) <= 1e-9);
      }
      for (int64_t i = 0; i < single.box[0].numel(); ++i) {
        CHECK(std::abs(joint.box[0].values()[b * single.box[0].numel() + i] -
                       single.box[0].values()[i]) <= 1e-9);
      }
    }
  }
}

TEST_CASE("gradients reach every head parameter") {
  std::mt19937_64 rng(347);
  for (HeadVariant variant : {HeadVariant::baseline, HeadVariant::isadh}) {
    DetectHead head(miniature(), variant, rng);
    Tensor x = random_tensor({2, 8, 4, 4}, rng);
    HeadOutput out = head.forward({x});
    Tensor proj_c = random_tensor(out.cls[0].shape(), rng);
    Tensor proj_b = random_tensor(out.box[0].shape(), rng);
    backward(add(sum(mul(out.cls[0], proj_c)), sum(mul(out.box[0], proj_b))));
    for (Tensor& p : head.parameters()) {
      double norm = 0;
      Tensor grad = p.grad();
      for (double g : grad.values()) norm += std::abs(g);
      CHECK(norm > 0.0);
    }
  }
}

TEST_CASE("head gradients match the finite-difference oracle (miniature)") {
  std::mt19937_64 rng(349);
  for (HeadVariant variant : {HeadVariant::baseline, HeadVariant::isadh}) {
    DetectHead head(miniature(), variant, rng);
    Tensor x = random_tensor({1, 8, 4, 4}, rng);
    Tensor proj_c, proj_b;
    x.set_requires_grad(true);
    std::vector<Tensor> wrt = head.parameters();
    wrt.push_back(x);
    {
      HeadOutput probe = head.forward({x.detach()});
      proj_c = random_tensor(probe.cls[0].shape(), rng);
      proj_b = random_tensor(probe.box[0].shape(), rng);
    }
    GradReport r = gradcheck(
        [&] {
          HeadOutput out = head.forward({x});
          return add(sum(mul(out.cls[0], proj_c)), sum(mul(out.box[0], proj_b)));
        },
        wrt);
    CHECK(r.pass);
  }
}
