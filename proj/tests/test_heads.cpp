#include <gtest/gtest.h>

#include <cmath>

#include "couplenet/boxes.hpp"
#include "couplenet/heads.hpp"
#include "couplenet/train.hpp"
#include "oracles.hpp"

using namespace couplenet;

namespace {

ModelConfig small_config(CouplingConfig coupling = {}, bool context = false) {
  ModelConfig c;
  c.num_classes = 2;
  c.backbone_c1 = 4;
  c.backbone_c2 = 6;
  c.backbone_c3 = 6;
  c.reduce_channels = 5;
  c.hidden_channels = 6;
  c.coupling = coupling;
  c.use_context = context;
  return c;
}

// Random weights, biases and scales so no gradient path is trivially zero.
ModelParams random_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = init_model_params(cfg, seed);
  Rng rng(seed ^ 0x5eedULL);
  for_each_param(p, [&](const std::string& name, std::span<double> v, const auto&) {
    const bool is_scale = name.ends_with(".scale");
    for (double& x : v) {
      if (is_scale) x = rng.uniform(0.5, 1.5);
      else if (name.ends_with(".bias")) x = rng.uniform(-0.2, 0.2);
    }
  });
  return p;
}

std::vector<RoI> some_rois() { return {{0, 2.0, 3.0, 17.0, 20.0}, {0, 6.5, 1.0, 23.0, 14.0}, {0, 0.0, 0.0, 24.0, 24.0}}; }

}  // namespace

TEST(BoxCodec, Examples) {
  const RoI r{0, 0, 0, 10, 10};
  const BoxDeltas same = encode_targets(r, Box{0, 0, 10, 10});
  for (double d : same) EXPECT_DOUBLE_EQ(d, 0.0);
  const BoxDeltas wide = encode_targets(r, Box{-5, 0, 15, 10});
  EXPECT_DOUBLE_EQ(wide[0], 0.0);
  EXPECT_DOUBLE_EQ(wide[2], std::log(2.0));
  EXPECT_DOUBLE_EQ(wide[3], 0.0);
  EXPECT_THROW(encode_targets(RoI{0, 1, 1, 1, 5}, Box{0, 0, 2, 2}), std::invalid_argument);
  EXPECT_THROW(encode_targets(r, Box{0, 0, 0, 2}), std::invalid_argument);
}

TEST(BoxCodec, RoundTrip) {
  Rng rng(41);
  for (int rep = 0; rep < 10000; ++rep) {
    RoI r{0, rng.uniform(0, 50), rng.uniform(0, 50), 0, 0};
    r.x2 = r.x1 + rng.uniform(1, 60);
    r.y2 = r.y1 + rng.uniform(1, 60);
    Box g{rng.uniform(0, 50), rng.uniform(0, 50), 0, 0};
    g.x2 = g.x1 + rng.uniform(1, 60);
    g.y2 = g.y1 + rng.uniform(1, 60);
    const Box back = decode_boxes(r, encode_targets(r, g));
    ASSERT_NEAR(back.x1, g.x1, 1e-9);
    ASSERT_NEAR(back.y1, g.y1, 1e-9);
    ASSERT_NEAR(back.x2, g.x2, 1e-9);
    ASSERT_NEAR(back.y2, g.y2, 1e-9);
  }
}

TEST(BoxCodec, ClippedDecodeStaysInImage) {
  const Box b = decode_boxes(RoI{0, 10, 10, 30, 30}, BoxDeltas{2.0, -2.0, 1.0, 1.0}, 40, 40);
  EXPECT_GE(b.x1, 0.0);
  EXPECT_GE(b.y1, 0.0);
  EXPECT_LE(b.x2, 40.0);
  EXPECT_LE(b.y2, 40.0);
}

TEST(Iou, Examples) {
  EXPECT_DOUBLE_EQ(compute_iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
  EXPECT_DOUBLE_EQ(compute_iou({0, 0, 10, 10}, {5, 0, 15, 10}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(compute_iou({0, 0, 10, 10}, {10, 10, 20, 20}), 0.0);
  EXPECT_DOUBLE_EQ(compute_iou({3, 3, 3, 3}, {3, 3, 3, 3}), 0.0);
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.k = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ModelParams, ShapesFollowConfig) {
  const ModelConfig cfg;
  const ModelParams p = make_model_params(cfg);
  EXPECT_EQ(p.head.local_score_conv.weight.shape(), (Shape{9 * 5, 32, 1, 1}));
  EXPECT_EQ(p.head.local_bbox_conv.weight.shape(), (Shape{4 * 9, 32, 1, 1}));
  EXPECT_EQ(p.head.global_kxk_conv.weight.shape(), (Shape{64, 64, 3, 3}));
  EXPECT_EQ(p.head.global_cls_conv.weight.shape(), (Shape{5, 64, 1, 1}));
  ModelConfig ctx = cfg;
  ctx.use_context = true;
  EXPECT_EQ(make_model_params(ctx).head.global_kxk_conv.weight.shape(), (Shape{64, 128, 3, 3}));
  EXPECT_EQ(init_model_params(cfg, 3), init_model_params(cfg, 3));
  EXPECT_NE(init_model_params(cfg, 3), init_model_params(cfg, 4));
}

TEST(Forward, ZeroParamsGiveZeroOutputs) {
  const ModelConfig cfg = small_config({Normalization::none, Strategy::sum, true, true});
  const ModelParams p = make_model_params(cfg);
  Rng rng(42);
  const Tensor image = oracle::random_tensor(Shape{1, 1, 24, 24}, rng, 0.0, 1.0);
  const auto rois = some_rois();
  const ForwardPass fp = model_forward(p, cfg, image, rois);
  ASSERT_EQ(fp.outputs.size(), rois.size());
  for (const auto& o : fp.outputs) {
    for (double v : o.cls_scores) EXPECT_EQ(v, 0.0);
    for (double v : o.bbox_deltas) EXPECT_EQ(v, 0.0);
  }
}

TEST(Forward, SingleBranchEqualsNormalizedBranch) {
  Rng rng(43);
  const Tensor image = oracle::random_tensor(Shape{1, 1, 24, 24}, rng, 0.0, 1.0);
  const auto rois = some_rois();
  for (Normalization n : {Normalization::none, Normalization::l2, Normalization::learned_scale}) {
    for (bool global : {false, true}) {
      const ModelConfig cfg = small_config({n, Strategy::sum, !global, global});
      const ModelParams p = random_params(cfg, 7);
      const ForwardPass fp = model_forward(p, cfg, image, rois);
      const auto& sp = p.head.scale_params;
      for (std::size_t r = 0; r < rois.size(); ++r) {
        const BranchOutput b = global ? global_branch(fp.backbone.features, rois[r], p.head, cfg.k, false,
                                                      cfg.context_factor, 24.0, 24.0)
                                      : local_branch(fp.backbone.features, rois[r], p.head, cfg.k, cfg.num_classes);
        const auto cls = normalize_branch(b.cls, n, global ? &sp.global_cls : &sp.local_cls);
        const auto box = normalize_branch(b.bbox, n, global ? &sp.global_bbox : &sp.local_bbox);
        EXPECT_EQ(fp.outputs[r].cls_scores, cls);
        EXPECT_TRUE(std::equal(box.begin(), box.end(), fp.outputs[r].bbox_deltas.begin()));
        EXPECT_TRUE((global ? fp.outputs[r].local : fp.outputs[r].global).cls.empty());
      }
    }
  }
}

TEST(Forward, CoupledOutputsCombineNormalizedBranches) {
  Rng rng(44);
  const Tensor image = oracle::random_tensor(Shape{1, 1, 24, 24}, rng, 0.0, 1.0);
  const auto rois = some_rois();
  for (Strategy s : {Strategy::sum, Strategy::prod, Strategy::max}) {
    const ModelConfig cfg = small_config({Normalization::learned_scale, s, true, true});
    const ModelParams p = random_params(cfg, 8);
    const ForwardPass fp = model_forward(p, cfg, image, rois);
    const auto& sp = p.head.scale_params;
    for (std::size_t r = 0; r < rois.size(); ++r) {
      const RoIOutput& o = fp.outputs[r];
      const auto expect = couple(normalize_branch(o.local.cls, Normalization::learned_scale, &sp.local_cls),
                                 normalize_branch(o.global.cls, Normalization::learned_scale, &sp.global_cls), s);
      EXPECT_EQ(o.cls_scores, expect);
    }
  }
}

TEST(Forward, HeadMatchesFullModelAndIsPermutationEquivariant) {
  Rng rng(45);
  const Tensor image = oracle::random_tensor(Shape{1, 1, 24, 24}, rng, 0.0, 1.0);
  const ModelConfig cfg = small_config({}, true);
  const ModelParams p = random_params(cfg, 9);
  auto rois = some_rois();
  const ForwardPass fp = model_forward(p, cfg, image, rois);
  const auto head = couplenet_forward(fp.backbone.features, rois, p.head, cfg, 24.0, 24.0);
  for (std::size_t r = 0; r < rois.size(); ++r) EXPECT_EQ(head[r].cls_scores, fp.outputs[r].cls_scores);
  std::vector<RoI> reversed(rois.rbegin(), rois.rend());
  const auto rev = couplenet_forward(fp.backbone.features, reversed, p.head, cfg, 24.0, 24.0);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    EXPECT_EQ(rev[rois.size() - 1 - r].cls_scores, head[r].cls_scores);
    EXPECT_EQ(rev[rois.size() - 1 - r].bbox_deltas, head[r].bbox_deltas);
  }
}

TEST(Forward, RejectsMultiChannelImage) {
  const ModelConfig cfg = small_config();
  EXPECT_THROW(model_forward(make_model_params(cfg), cfg, Tensor(Shape{1, 3, 24, 24}), some_rois()),
               std::invalid_argument);
}

TEST(Backward, SingleRoIMatchesFiniteDifferences) {
  Rng rng(46);
  const Tensor image = oracle::random_tensor(Shape{1, 1, 24, 24}, rng, 0.0, 1.0);
  const std::vector<RoI> rois = {{0, 3.0, 2.0, 19.0, 21.0}};
  Scene scene;
  scene.image_w = scene.image_h = 24;
  scene.objects.push_back({ShapeClass::disk, Box{4.0, 3.0, 18.0, 20.0}, {}, 0.0});
  const auto targets = assign_targets(rois, scene, AssignConfig{});
  ASSERT_EQ(targets[0].kind, TargetKind::foreground);

  for (bool ctx : {false, true}) {
    const ModelConfig cfg = small_config({Normalization::learned_scale, Strategy::sum, true, true}, ctx);
    ModelParams p = random_params(cfg, 10);
    auto loss = [&] {
      const ForwardPass fp = model_forward(p, cfg, image, rois);
      return multitask_loss(fp.outputs, targets, {}).loss;
    };
    const ForwardPass fp = model_forward(p, cfg, image, rois);
    const MultitaskLoss ml = multitask_loss(fp.outputs, targets, {});
    ModelParams grads = zeros_like(p);
    model_backward(p, cfg, fp, ml.grads, grads);

    std::vector<std::span<double>> analytic;
    for_each_param(grads, [&](const std::string&, std::span<double> v, const auto&) { analytic.push_back(v); });
    std::size_t idx = 0;
    for_each_param(p, [&](const std::string& name, std::span<double> v, const auto&) {
      const auto numeric = oracle::numeric_gradient(v, loss);
      EXPECT_TRUE(oracle::gradients_match(analytic[idx], numeric, 1e-5)) << name << " ctx=" << ctx;
      ++idx;
    });
  }
}
