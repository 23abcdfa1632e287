#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "couplenet/rng.hpp"
#include "couplenet/synth.hpp"

using namespace couplenet;

namespace {

// Classifies an isolated object by the median intensity of its foreground
// pixels, nearest to the class palette.
ShapeClass classify_by_histogram(const Tensor& img, const Box& box, int w) {
  std::vector<double> fg;
  for (int y = std::max(0, int(box.y1)); y < std::min<int>(img.shape().h, int(std::ceil(box.y2))); ++y)
    for (int x = std::max(0, int(box.x1)); x < std::min(w, int(std::ceil(box.x2))); ++x) {
      const double v = img.plane(0, 0)[y * w + x];
      if (v > kBackgroundIntensity + 0.25) fg.push_back(v);
    }
  std::nth_element(fg.begin(), fg.begin() + fg.size() / 2, fg.end());
  const double med = fg.empty() ? 0.0 : fg[fg.size() / 2];
  const std::array<double, 4> palette = {0.85, 0.55, 0.75, 0.65};
  std::size_t best = 0;
  for (std::size_t c = 1; c < 4; ++c)
    if (std::abs(palette[c] - med) < std::abs(palette[best] - med)) best = c;
  return static_cast<ShapeClass>(best);
}

}  // namespace

TEST(ShapeClass, NamesRoundTrip) {
  for (std::size_t i = 0; i < kNumShapeClasses; ++i) {
    const auto c = static_cast<ShapeClass>(i);
    EXPECT_EQ(parse_shape_class(to_string(c)), c);
  }
  EXPECT_THROW(parse_shape_class("circle"), std::invalid_argument);
}

TEST(SceneConfig, Validation) {
  SceneConfig c;
  EXPECT_NO_THROW(c.validate());
  c.occlusion_prob = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.max_objects = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(GenerateScene, Deterministic) {
  EXPECT_EQ(generate_scene(11, SceneConfig{}), generate_scene(11, SceneConfig{}));
  EXPECT_NE(generate_scene(11, SceneConfig{}), generate_scene(12, SceneConfig{}));
  const Scene s = generate_scene(13, SceneConfig{});
  EXPECT_EQ(rasterize(s, 0.06), rasterize(s, 0.06));
}

TEST(GenerateScene, RespectsBounds) {
  Rng rng(61);
  const SceneConfig cfg;
  for (int rep = 0; rep < 500; ++rep) {
    const Scene s = generate_scene(rng.next_u64(), cfg);
    EXPECT_GE(s.image_w, cfg.min_size);
    EXPECT_LE(s.image_w, cfg.max_size);
    EXPECT_LE(static_cast<int>(s.objects.size()), cfg.max_objects);
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const Box vi = s.objects[i].visible_box(s.image_w, s.image_h);
      EXPECT_GT(vi.area(), 0.0);
      for (std::size_t j = 0; j < i; ++j)
        EXPECT_LE(compute_iou(vi, s.objects[j].visible_box(s.image_w, s.image_h)), cfg.max_overlap_iou);
    }
  }
}

TEST(GenerateScene, NoOcclusionOrTruncationWhenDisabled) {
  Rng rng(62);
  SceneConfig cfg;
  cfg.occlusion_prob = 0.0;
  cfg.truncation_prob = 0.0;
  for (int rep = 0; rep < 300; ++rep) {
    const Scene s = generate_scene(rng.next_u64(), cfg);
    for (const auto& o : s.objects) {
      EXPECT_TRUE(o.occluders.empty());
      EXPECT_EQ(o.truncation, 0.0);
      EXPECT_EQ(o.visible_box(s.image_w, s.image_h), o.box);
    }
  }
}

TEST(GenerateScene, OcclusionAndTruncationRates) {
  Rng rng(63);
  const SceneConfig cfg;
  int objects = 0, occluded = 0, truncated = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    for (const auto& o : generate_scene(rng.next_u64(), cfg).objects) {
      ++objects;
      occluded += !o.occluders.empty();
      if (o.truncation > 0.0) {
        ++truncated;
        EXPECT_GE(o.truncation, 0.2);
        EXPECT_LE(o.truncation, 0.6);
      }
    }
  }
  ASSERT_GT(objects, 1000);
  EXPECT_NEAR(static_cast<double>(occluded) / objects, cfg.occlusion_prob, 0.03);
  EXPECT_NEAR(static_cast<double>(truncated) / objects, cfg.truncation_prob, 0.03);
}

TEST(GenerateScene, ClassFrequenciesBalanced) {
  Rng rng(64);
  std::array<int, kNumShapeClasses> counts{};
  int total = 0;
  for (int rep = 0; rep < 500; ++rep) {
    for (const auto& o : generate_scene(rng.next_u64(), SceneConfig{}).objects) {
      ++counts[static_cast<std::size_t>(o.cls)];
      ++total;
    }
  }
  const double expected = static_cast<double>(total) / kNumShapeClasses;
  for (int c : counts) EXPECT_NEAR(c, expected, 0.1 * expected);
}

TEST(Rasterize, EmptySceneIsConstantBackground) {
  SceneConfig cfg;
  cfg.min_objects = cfg.max_objects = 0;
  const Scene s = generate_scene(5, cfg);
  ASSERT_TRUE(s.objects.empty());
  const Tensor img = rasterize(s, 0.0);
  EXPECT_EQ(img.shape(), (Shape{1, 1, std::size_t(s.image_h), std::size_t(s.image_w)}));
  for (double v : img.data()) EXPECT_EQ(v, kBackgroundIntensity);
  Scene bad;
  EXPECT_THROW(rasterize(bad, 0.0), std::invalid_argument);
}

TEST(Rasterize, NoisyPixelsStayInUnitRange) {
  const Scene s = generate_scene(6, SceneConfig{});
  for (double v : rasterize(s, 0.5).data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Rasterize, DiskAreaMatchesEllipse) {
  for (double d : {16.0, 23.5, 32.0, 40.0}) {
    Scene s;
    s.image_w = s.image_h = 64;
    s.objects.push_back({ShapeClass::disk, Box{5.3, 7.1, 5.3 + d, 7.1 + d}, {}, 0.0});
    const Tensor img = rasterize(s, 0.0);
    const double count = static_cast<double>(std::count(img.data().begin(), img.data().end(), 0.55));
    const double area = std::numbers::pi * d * d / 4.0;
    EXPECT_NEAR(count, area, 0.05 * area) << d;
  }
}

TEST(Rasterize, IsolatedObjectsSeparableByIntensity) {
  Rng rng(65);
  SceneConfig cfg;
  cfg.min_objects = cfg.max_objects = 1;
  cfg.occlusion_prob = 0.0;
  int correct = 0, total = 0;
  for (int rep = 0; rep < 400; ++rep) {
    const Scene s = generate_scene(rng.next_u64(), cfg);
    const Tensor img = rasterize(s, cfg.noise_level);
    const SceneObject& o = s.objects.at(0);
    correct += classify_by_histogram(img, o.visible_box(s.image_w, s.image_h), s.image_w) == o.cls;
    ++total;
  }
  EXPECT_GE(static_cast<double>(correct) / total, 0.95);
}

TEST(ScaleScene, ScalesCoordinates) {
  const Scene s = generate_scene(7, SceneConfig{});
  const Scene t = scale_scene(s, 2.0);
  EXPECT_EQ(t.image_w, 2 * s.image_w);
  for (std::size_t i = 0; i < s.objects.size(); ++i) EXPECT_DOUBLE_EQ(t.objects[i].box.x2, 2.0 * s.objects[i].box.x2);
  EXPECT_EQ(scale_scene(s, 1.0), s);
}

TEST(GenerateDataset, ScenesComeFromSplitStreams) {
  DatasetConfig cfg;
  cfg.train_size = 5;
  cfg.test_size = 3;
  const Dataset d = generate_dataset(cfg);
  ASSERT_EQ(d.train.size(), 5u);
  ASSERT_EQ(d.test.size(), 3u);
  const Rng root(cfg.seed);
  EXPECT_EQ(d.train[2], generate_scene(root.split(2).next_u64(), cfg.scene));
  EXPECT_EQ(d.test[1], generate_scene(root.split(6).next_u64(), cfg.scene));
  cfg.train_size = cfg.test_size = 0;
  EXPECT_TRUE(generate_dataset(cfg).train.empty());
}

TEST(Pgm, RoundTripWithinQuantization) {
  const Scene s = generate_scene(8, SceneConfig{});
  const Tensor img = rasterize(s, 0.06);
  const std::string bytes = encode_pgm(img);
  EXPECT_TRUE(bytes.starts_with("P5"));
  const Tensor back = decode_pgm(bytes);
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(back.data()[i], img.data()[i], 0.5 / 255.0 + 1e-12);
  EXPECT_EQ(encode_pgm(back), bytes);
}

TEST(Pgm, CommentsAndErrors) {
  const std::string ok = std::string("P5\n# made by hand\n2 1\n255\n") + char(0) + char(255);
  const Tensor t = decode_pgm(ok);
  EXPECT_EQ(t.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(t.data()[1], 1.0);
  EXPECT_THROW(decode_pgm("P6\n2 1\n255\n\x01\x02"), std::invalid_argument);
  EXPECT_THROW(decode_pgm("P5\n2 1\n255\n\x01"), std::invalid_argument);
  EXPECT_THROW(decode_pgm("P5\n2 1\n65535\n\x01\x02\x03\x04"), std::invalid_argument);
  EXPECT_THROW(decode_pgm(""), std::invalid_argument);
}

TEST(Ppm, Header) {
  const std::string p = encode_ppm(2, 1, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(p.starts_with("P6\n2 1\n255\n"));
  EXPECT_EQ(p.size(), std::string("P6\n2 1\n255\n").size() + 6);
}
