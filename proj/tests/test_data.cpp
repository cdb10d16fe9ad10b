#include "rdd/data.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <set>

using namespace rdd;

namespace {

SceneConfig small_scene() {
  SceneConfig c;
  c.train_size = 20;
  c.val_size = 10;
  return c;
}

}  // namespace

TEST(Generate, DeterministicPerSplitAndIndex) {
  const SceneConfig c = small_scene();
  const SegSample a = generate(c, Split::Train, 3), b = generate(c, Split::Train, 3);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(generate(c, Split::Val, 3).image == a.image);
  EXPECT_FALSE(generate(c, Split::Train, 4).image == a.image);
  SceneConfig other = c;
  other.seed = 8;
  EXPECT_FALSE(generate(other, Split::Train, 3).image == a.image);
}

TEST(Generate, ValueRanges) {
  const SceneConfig c = small_scene();
  for (Index i = 0; i < 10; ++i) {
    const SegSample s = generate(c, Split::Train, i);
    EXPECT_EQ(s.image.shape(), (Shape{3, 64, 64}));
    EXPECT_GE(s.image.data().minCoeff(), 0.0);
    EXPECT_LE(s.image.data().maxCoeff(), 1.0);
    EXPECT_GE(s.labels.data().minCoeff(), 0);
    EXPECT_LT(s.labels.data().maxCoeff(), c.num_classes);
  }
}

TEST(Generate, NoNoiseMeansCleanLabels) {
  SceneConfig c = small_scene();
  c.noise_rate = 0.0;
  for (Index i = 0; i < 5; ++i) {
    const SegSample s = generate(c, Split::Train, i);
    EXPECT_EQ(s.labels, s.clean_labels);
  }
}

TEST(Generate, BlurTouchesImageOnly) {
  SceneConfig sharp = small_scene(), blurred = small_scene();
  sharp.boundary_blur = 0;
  blurred.boundary_blur = 2;
  const SegSample a = generate(sharp, Split::Train, 1), b = generate(blurred, Split::Train, 1);
  EXPECT_EQ(a.clean_labels, b.clean_labels);
  EXPECT_FALSE(a.image == b.image);
}

TEST(Render, FullFrameRectangleLabelsEveryPixel) {
  SceneConfig c = small_scene();
  c.num_classes = 2;
  c.noise_rate = 0.0;
  SceneShape full;
  full.kind = ShapeKind::Rectangle;
  full.label = 1;
  full.x0 = full.y0 = 0;
  full.x1 = full.y1 = static_cast<double>(c.image_size);
  full.color = {0.8, 0.2, 0.2};
  const SegSample s = render(c, {full}, 1);
  EXPECT_EQ(s.labels.data().minCoeff(), 1);
  EXPECT_EQ(s.labels.data().maxCoeff(), 1);
}

TEST(Render, LaterShapesCoverEarlierOnes) {
  SceneConfig c = small_scene();
  c.noise_rate = 0.0;
  SceneShape below, above;
  below.label = 1;
  below.x0 = below.y0 = 0;
  below.x1 = below.y1 = 32;
  above.label = 2;
  above.x0 = above.y0 = 16;
  above.x1 = above.y1 = 48;
  const SegSample s = render(c, {below, above}, 1);
  EXPECT_EQ(s.labels(20, 20), 2);
  EXPECT_EQ(s.labels(5, 5), 1);
  EXPECT_EQ(s.labels(60, 60), 0);
}

TEST(LabelNoise, FlipRateConcentrates) {
  LabelMap clean({1000, 1000}, 2);
  const LabelMap noisy = inject_label_noise(clean, 5, 0.05, 99);
  const double rate = static_cast<double>((noisy.data() != clean.data()).count()) / 1e6;
  EXPECT_NEAR(rate, 0.05, 0.002);
}

TEST(LabelNoise, FlippedPixelsChangeClassUniformly) {
  LabelMap clean({500, 500});
  for (Index i = 0; i < clean.size(); ++i) clean[i] = static_cast<std::int32_t>(i % 4);
  const LabelMap noisy = inject_label_noise(clean, 4, 0.3, 5);
  std::array<std::array<Index, 4>, 4> moves{};
  for (Index i = 0; i < clean.size(); ++i) {
    if (noisy[i] != clean[i]) ++moves[static_cast<std::size_t>(clean[i])][static_cast<std::size_t>(noisy[i])];
  }
  for (std::size_t from = 0; from < 4; ++from) {
    Index total = 0;
    for (std::size_t to = 0; to < 4; ++to) total += moves[from][to];
    for (std::size_t to = 0; to < 4; ++to) {
      if (to == from) continue;
      EXPECT_NEAR(static_cast<double>(moves[from][to]) / static_cast<double>(total), 1.0 / 3.0, 0.02);
    }
  }
}

TEST(LabelNoise, IdentityAtZeroAndContract) {
  LabelMap clean({10, 10}, 1);
  EXPECT_EQ(inject_label_noise(clean, 3, 0.0, 1), clean);
  EXPECT_EQ(inject_label_noise(clean, 3, 0.2, 1), inject_label_noise(clean, 3, 0.2, 1));
  EXPECT_THROW(inject_label_noise(clean, 3, 1.0, 1), std::invalid_argument);
  EXPECT_THROW(inject_label_noise(clean, 3, -0.1, 1), std::invalid_argument);
  const LabelMap heavy = inject_label_noise(LabelMap({100, 100}, 1), 3, 0.9, 2);
  EXPECT_NEAR(static_cast<double>((heavy.data() != 1).count()) / 1e4, 0.9, 0.02);
}

TEST(Generate, NoisyLabelsDifferOnlyWhereFlipped) {
  const SceneConfig c = small_scene();
  Index flipped = 0, total = 0;
  for (Index i = 0; i < 20; ++i) {
    const SegSample s = generate(c, Split::Train, i);
    flipped += (s.labels.data() != s.clean_labels.data()).count();
    total += s.labels.size();
  }
  EXPECT_NEAR(static_cast<double>(flipped) / static_cast<double>(total), c.noise_rate, 0.01);
}

TEST(Generate, EveryClassIsCovered) {
  SceneConfig c;
  std::array<Index, 5> hist{};
  Index total = 0;
  for (Index i = 0; i < 500; ++i) {
    const SegSample s = generate(c, Split::Train, i);
    for (Index k = 0; k < s.labels.size(); ++k) ++hist[static_cast<std::size_t>(s.labels[k])];
    total += s.labels.size();
  }
  for (std::size_t k = 0; k < hist.size(); ++k) {
    EXPECT_GE(static_cast<double>(hist[k]) / static_cast<double>(total), 0.01) << "class " << k;
  }
}

TEST(Generate, InvalidInputsThrow) {
  SceneConfig c = small_scene();
  EXPECT_THROW(generate(c, Split::Train, -1), std::out_of_range);
  c.num_classes = 1;
  EXPECT_THROW(generate(c, Split::Train, 0), std::invalid_argument);
  c = small_scene();
  c.noise_rate = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_scene();
  EXPECT_THROW(c.validate(3), std::invalid_argument);
  EXPECT_THROW(parse_split("test"), std::invalid_argument);
}

TEST(Dataset, ValOrderIsStable) {
  const Dataset val(small_scene(), Split::Val, 10, 4);
  const auto a = val.epoch(0), b = val.epoch(0);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].indices, b[i].indices);
    EXPECT_EQ(a[i].images, b[i].images);
  }
  EXPECT_EQ(a[0].indices, (std::vector<Index>{0, 1, 2, 3}));
  EXPECT_EQ(a.back().size(), 2);
}

TEST(Dataset, TrainEpochsReshuffle) {
  const Dataset train(small_scene(), Split::Train, 20, 8);
  auto o1 = train.order(1), o2 = train.order(2);
  EXPECT_NE(o1, o2);
  std::sort(o1.begin(), o1.end());
  std::sort(o2.begin(), o2.end());
  EXPECT_EQ(o1, o2);
  EXPECT_EQ(train.order(1), train.order(1));
}

TEST(Dataset, SingleSampleGivesPartialBatch) {
  const Dataset d(small_scene(), Split::Train, 1, 4);
  const auto batches = d.epoch(0);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].size(), 1);
  EXPECT_EQ(batches[0].images.shape(), (Shape{1, 3, 64, 64}));
  EXPECT_THROW(Dataset(small_scene(), Split::Train, 0, 4), std::invalid_argument);
}

TEST(Dataset, FlipsMirrorSamples) {
  SceneConfig c = small_scene();
  c.flip = true;
  const Dataset d(c, Split::Train, 20, 20);
  const SegBatch b = d.batch(0, 0);
  Index mirrored = 0;
  for (Index i = 0; i < b.size(); ++i) {
    const SegSample& s = d.sample(b.indices[static_cast<std::size_t>(i)]);
    const SegSample expect = b.flipped[static_cast<std::size_t>(i)] ? flip_horizontal(s) : s;
    for (Index y = 0; y < 64; ++y)
      for (Index x = 0; x < 64; ++x) ASSERT_EQ(b.labels(i, y, x), expect.labels(y, x));
    mirrored += b.flipped[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  EXPECT_GT(mirrored, 0);
  EXPECT_LT(mirrored, 20);
  const Dataset val(c, Split::Val, 5, 5);
  for (bool f : val.batch(0, 0).flipped) EXPECT_FALSE(f);
}
