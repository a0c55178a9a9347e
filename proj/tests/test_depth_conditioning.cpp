#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "mirrorfusion/depth_conditioning.hpp"

namespace {

mf::MirrorMask full_mask(int h, int w) { return mf::MirrorMask(h, w, 1, 1); }

mf::DepthMap constant_depth(int h, int w, float v) { return mf::DepthMap(h, w, 1, v); }

TEST(NormalizeDepth, FixedPoints) {
  // d_max = 2 comes from one masked pixel; the others probe the formula.
  mf::DepthMap d = constant_depth(1, 5, 0.0f);
  mf::MirrorMask m(1, 5, 1, 0);
  d(0, 0) = 2.0f;
  m(0, 0) = 1;
  d(0, 1) = 0.0f;
  d(0, 2) = 2.5f;
  d(0, 3) = 1.25f;
  d(0, 4) = 9.9f;
  const auto n = mf::normalize_depth(d, m);
  EXPECT_DOUBLE_EQ(n.d_max, 2.0);
  EXPECT_NEAR(n.data(0, 1), -1.0, 1e-9);
  EXPECT_NEAR(n.data(0, 2), 1.0, 1e-9);
  EXPECT_NEAR(n.data(0, 3), 0.0, 1e-9);
  EXPECT_NEAR(n.data(0, 4), 1.0, 1e-9);
}

TEST(NormalizeDepth, RandomizedRangeAndAnchors) {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<float> u(0.0f, 10.0f);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 4 + trial % 7, w = 3 + trial % 5;
    mf::DepthMap d(h, w, 1);
    mf::MirrorMask m(h, w, 1);
    for (auto& v : d.values()) v = u(rng);
    for (auto& v : m.values()) v = coin(rng) ? 1 : 0;
    m(trial % h, trial % w) = 1;
    const double delta = 0.5;
    // Anchors sit on unmasked pixels; the ceiling one is placed past any
    // possible d_max + delta.
    d(0, 0) = 0.0f;
    m(0, 0) = 0;
    d(h - 1, w - 1) = 20.0f;
    m(h - 1, w - 1) = 0;
    m(1, 1) = 1;
    double d_max = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (m.values()[i]) d_max = std::max(d_max, static_cast<double>(d.values()[i]));
    }
    const auto n = mf::normalize_depth(d, m, delta);
    ASSERT_NEAR(n.d_max, d_max, 0.0) << trial;
    for (double v : n.data.values()) {
      ASSERT_GE(v, -1.0);
      ASSERT_LE(v, 1.0);
    }
    EXPECT_NEAR(n.data(0, 0), -1.0, 1e-9);
    EXPECT_NEAR(n.data(h - 1, w - 1), 1.0, 1e-9);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double expect = (std::min<double>(d.values()[i], d_max + delta) / (d_max + delta) - 0.5) * 2.0;
      ASSERT_NEAR(n.data.values()[i], expect, 1e-9);
    }
  }
}

TEST(NormalizeDepth, MidpointOnRandomMaps) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(0.1f, 5.0f);
  for (int trial = 0; trial < 50; ++trial) {
    mf::DepthMap d(3, 3, 1);
    for (auto& v : d.values()) v = u(rng);
    const auto m = full_mask(3, 3);
    double d_max = 0.0;
    for (float v : d.values()) d_max = std::max(d_max, static_cast<double>(v));
    // The midpoint of [0, d_max + delta] is representable only up to float rounding.
    const float mid = static_cast<float>((d_max + 0.5) / 2.0);
    d(1, 1) = std::min(mid, static_cast<float>(d_max));
    double dm = 0.0;
    for (float v : d.values()) dm = std::max(dm, static_cast<double>(v));
    const auto n = mf::normalize_depth(d, m);
    const double expect = (static_cast<double>(d(1, 1)) / (dm + 0.5) - 0.5) * 2.0;
    EXPECT_NEAR(n.data(1, 1), expect, 1e-9);
  }
  mf::DepthMap d = constant_depth(1, 2, 2.0f);
  d(0, 1) = 1.25f;
  EXPECT_NEAR(mf::normalize_depth(d, full_mask(1, 2)).data(0, 1), 0.0, 1e-9);
}

TEST(NormalizeDepth, MonotoneAndInsensitiveAboveCeiling) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 4.0f);
  mf::DepthMap d(8, 8, 1);
  for (auto& v : d.values()) v = u(rng);
  mf::MirrorMask m(8, 8, 1, 0);
  for (int y = 2; y < 6; ++y) {
    for (int x = 2; x < 6; ++x) m(y, x) = 1;
  }
  const auto a = mf::normalize_depth(d, m);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (d.values()[i] <= d.values()[j]) ASSERT_LE(a.data.values()[i], a.data.values()[j]);
    }
  }
  mf::DepthMap e = d;
  const double ceiling = a.d_max + a.delta;
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (e.values()[i] > ceiling) e.values()[i] = static_cast<float>(ceiling + 17.0 * (i + 1));
  }
  e(0, 0) = std::numeric_limits<float>::infinity();
  m(0, 0) = 0;
  const auto b = mf::normalize_depth(e, m);
  EXPECT_EQ(b.data(0, 0), 1.0);
  for (std::size_t i = 1; i < d.size(); ++i) {
    if (d.values()[i] > ceiling) EXPECT_EQ(a.data.values()[i], b.data.values()[i]);
  }
}

TEST(NormalizeDepth, Errors) {
  EXPECT_THROW(mf::normalize_depth(constant_depth(4, 4, 1.0f), mf::MirrorMask(4, 4, 1, 0)), mf::EmptyMaskError);
  auto d = constant_depth(2, 2, 1.0f);
  d(1, 1) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(mf::normalize_depth(d, full_mask(2, 2)), mf::InvalidArgument);
  d(1, 1) = -1.0f;
  EXPECT_THROW(mf::normalize_depth(d, full_mask(2, 2)), mf::InvalidArgument);
  EXPECT_THROW(mf::normalize_depth(constant_depth(2, 3, 1.0f), full_mask(2, 2)), mf::ShapeError);
}

TEST(ResizeToLatent, ConstantCheckerAndBinarity) {
  const mf::FloatMap ones(64, 64, 1, 1.0f);
  const auto r = mf::resize_to_latent(ones, 16, 16);
  ASSERT_EQ(r.height(), 16);
  for (float v : r.values()) EXPECT_EQ(v, 1.0f);

  // 1x1 cells alternating, averaged over 2x2 blocks.
  mf::FloatMap checker(8, 8, 1);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) checker(y, x) = static_cast<float>((x + y) % 2);
  }
  const auto halved = mf::resize_to_latent(checker, 4, 4);
  for (float v : halved.values()) EXPECT_EQ(v, 0.5f);

  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.5);
  mf::MirrorMask m(32, 32, 1);
  for (auto& v : m.values()) v = coin(rng) ? 1 : 0;
  const auto nearest = mf::resize_to_latent(m, 8, 8, mf::ResizeMode::nearest);
  for (float v : nearest.values()) {
    EXPECT_TRUE(v == 0.0f || v == 1.0f);
  }
}

TEST(ResizeToLatent, AreaMeanPreservesMean) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  mf::FloatMap f(24, 36, 1);
  for (auto& v : f.values()) v = u(rng);
  const auto r = mf::resize_to_latent(f, 6, 9);
  double a = 0, b = 0;
  for (float v : f.values()) a += v;
  for (float v : r.values()) b += v;
  EXPECT_NEAR(a / f.size(), b / r.size(), 1e-6);
  EXPECT_THROW(mf::resize_to_latent(f, 5, 9), mf::ShapeError);
}

TEST(BuildCondition, ShapesRangesAndMaskIndependence) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  mf::PixelImage img(64, 64, 3);
  for (auto& v : img.values()) v = u(rng);
  mf::MirrorMask m(64, 64, 1, 0);
  for (int y = 10; y < 40; ++y) {
    for (int x = 20; x < 50; ++x) m(y, x) = 1;
  }
  mf::DepthMap d(64, 64, 1);
  for (auto& v : d.values()) v = 5.0f * u(rng);

  const auto b = mf::build_condition(img, m, d);
  EXPECT_EQ(b.z_m.shape_string(), "(16,16,48)");
  EXPECT_EQ(b.x_m.shape_string(), "(16,16,1)");
  EXPECT_EQ(b.x_d.shape_string(), "(16,16,1)");
  for (float v : b.x_m.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  for (float v : b.x_d.values()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }

  mf::PixelImage other = img;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (m(y, x)) other(y, x, 1) = u(rng);
    }
  }
  EXPECT_EQ(mf::build_condition(other, m, d).z_m, b.z_m);
  EXPECT_THROW(mf::build_condition(img, mf::MirrorMask(64, 64, 1, 0), d), mf::EmptyMaskError);
}

}  // namespace
