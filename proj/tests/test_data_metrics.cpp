#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gff/data.hpp"
#include "gff/metrics.hpp"
#include "test_util.hpp"

namespace {

using gff::Labels;
using gff::Tensor;

TEST(Scenes, DeterministicPerSplitAndIndex) {
  gff::SceneSpec spec;
  auto a = gff::generate_sample(spec, "train", 0);
  auto b = gff::generate_sample(spec, "train", 0);
  EXPECT_TRUE(testutil::same_bytes(a.image, b.image));
  EXPECT_EQ(a.labels.v, b.labels.v);

  auto c = gff::generate_sample(spec, "train", 1);
  EXPECT_FALSE(testutil::same_bytes(a.image, c.image));

  auto d = gff::generate_sample(spec, "test", 0);
  EXPECT_FALSE(testutil::same_bytes(a.image, d.image));
  EXPECT_NE(a.labels.v, d.labels.v);
}

TEST(Scenes, ShapesRangesAndClassInventory) {
  gff::SceneSpec spec;
  auto ds = gff::generate_dataset(spec, "train", 10);
  ASSERT_EQ(ds.size(), 10u);
  std::set<std::int32_t> seen;
  for (const auto& s : ds) {
    ASSERT_EQ(s.image.shape(), (gff::Shape{3, 64, 64}));
    ASSERT_EQ(s.labels.h, 64);
    ASSERT_EQ(s.labels.w, 64);
    for (std::int64_t i = 0; i < s.image.numel(); ++i) {
      ASSERT_GE(s.image.data()[i], 0.0f);
      ASSERT_LE(s.image.data()[i], 255.0f);
    }
    for (auto v : s.labels.v) {
      ASSERT_GE(v, 0);
      ASSERT_LT(v, gff::kClasses);
      seen.insert(v);
    }
  }
  // All five classes occur somewhere in a ten-scene set.
  EXPECT_EQ(seen.size(), 5u);
}

TEST(Scenes, EverySceneHasThinPolesAndLights) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    gff::SceneSpec spec;
    spec.seed = seed;
    auto s = gff::generate_sample(spec, "train", 0);
    std::int64_t pole_pixels = 0, light_pixels = 0;
    std::int64_t longest_run = 0;
    for (std::int64_t r = 0; r < s.labels.h; ++r) {
      std::int64_t run = 0;
      for (std::int64_t c = 0; c < s.labels.w; ++c) {
        const bool pole = s.labels.at(0, r, c) == 3;
        pole_pixels += pole;
        light_pixels += s.labels.at(0, r, c) == 4;
        run = pole ? run + 1 : 0;
        longest_run = std::max(longest_run, run);
      }
    }
    EXPECT_GT(pole_pixels, 0) << "seed " << seed;
    EXPECT_GT(light_pixels, 0) << "seed " << seed;
    // Poles are vertical structures one or two pixels wide.
    EXPECT_LE(longest_run, 2) << "seed " << seed;
    const double frac =
        static_cast<double>(pole_pixels) / static_cast<double>(s.labels.numel());
    EXPECT_LT(frac, 0.05) << "seed " << seed;
  }
}

TEST(Scenes, MinimumExtentEnforced) {
  gff::SceneSpec spec;
  spec.h = 24;
  EXPECT_THROW(gff::generate_sample(spec, "train", 0), gff::DataError);
}

TEST(Scenes, LabelTensorRoundTrip) {
  gff::SceneSpec spec;
  auto s = gff::generate_sample(spec, "train", 3);
  auto t = gff::labels_to_tensor(s.labels);
  auto back = gff::tensor_to_labels(t);
  EXPECT_EQ(back.v, s.labels.v);
  EXPECT_EQ(back.h, s.labels.h);
}

TEST(ConfusionMatrix, HandComputedScores) {
  Labels gt(1, 2, 2);
  gt.v = {0, 0, 1, 1};
  Labels pred(1, 2, 2);
  pred.v = {0, 1, 1, 1};
  gff::ConfusionMatrix cm(2);
  cm.add(pred, gt);
  auto iou = cm.per_class_iou();
  EXPECT_NEAR(iou[0], 0.5, 1e-12);
  EXPECT_NEAR(iou[1], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(cm.miou(), 7.0 / 12.0, 1e-12);
  EXPECT_NEAR(cm.pixel_acc(), 0.75, 1e-12);
  EXPECT_EQ(cm.total(), 4);
}

TEST(ConfusionMatrix, IgnoredPixelsAreSkipped) {
  Labels gt(1, 1, 3);
  gt.v = {0, 255, 1};
  Labels pred(1, 1, 3);
  pred.v = {0, 0, 0};
  gff::ConfusionMatrix cm(2);
  cm.add(pred, gt);
  EXPECT_EQ(cm.total(), 2);
  EXPECT_NEAR(cm.pixel_acc(), 0.5, 1e-12);
}

TEST(ConfusionMatrix, AbsentClassesAreExcludedFromTheMean) {
  Labels gt(1, 1, 2);
  gt.v = {0, 1};
  Labels pred(1, 1, 2);
  pred.v = {0, 1};
  gff::ConfusionMatrix cm(3);
  cm.add(pred, gt);
  auto iou = cm.per_class_iou();
  EXPECT_TRUE(std::isnan(iou[2]));
  EXPECT_NEAR(cm.miou(), 1.0, 1e-12);  // class 2 never appears

  gff::ConfusionMatrix empty(2);
  EXPECT_THROW(empty.miou(), gff::DataError);
}

TEST(ConfusionMatrix, MergeAddsCounts) {
  Labels gt(1, 1, 2);
  gt.v = {0, 1};
  Labels pred(1, 1, 2);
  pred.v = {0, 0};
  gff::ConfusionMatrix a(2), b(2);
  a.add(pred, gt);
  b.add(gt, gt);  // perfect half
  a.merge(b);
  EXPECT_EQ(a.total(), 4);
  EXPECT_NEAR(a.pixel_acc(), 0.75, 1e-12);
}

TEST(ConfusionMatrix, RangeValidation) {
  Labels gt(1, 1, 1);
  gt.v = {0};
  Labels bad_pred(1, 1, 1);
  bad_pred.v = {2};
  gff::ConfusionMatrix cm(2);
  EXPECT_THROW(cm.add(bad_pred, gt), gff::DataError);

  Labels bad_gt(1, 1, 1);
  bad_gt.v = {7};
  Labels pred(1, 1, 1);
  pred.v = {0};
  EXPECT_THROW(cm.add(pred, bad_gt), gff::DataError);

  Labels wider(1, 1, 2);
  wider.v = {0, 0};
  EXPECT_THROW(cm.add(wider, gt), gff::DataError);
}

TEST(ArgmaxPredict, TiesGoToTheLowestClass) {
  auto probs = Tensor<float>::from({1, 3, 1, 2}, {0.4f, 0.3f,   // class 0
                                                  0.4f, 0.5f,   // class 1
                                                  0.2f, 0.2f}); // class 2
  auto pred = gff::argmax_predict(probs);
  EXPECT_EQ(pred.at(0, 0, 0), 0);  // tie between 0 and 1 resolves to 0
  EXPECT_EQ(pred.at(0, 0, 1), 1);
  EXPECT_EQ(pred.n, 1);
  EXPECT_EQ(pred.h, 1);
  EXPECT_EQ(pred.w, 2);
}

TEST(ClassPalette, NamesAndDistinctColors) {
  ASSERT_EQ(std::size(gff::kClassNames), 5u);
  EXPECT_STREQ(gff::kClassNames[0], "background");
  EXPECT_STREQ(gff::kClassNames[3], "pole");
  EXPECT_STREQ(gff::kClassNames[4], "light");
}

}  // namespace
