#include "mapval/metrics.hpp"

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

namespace mapval::metrics {
namespace {

LabelPolicy test_policy() {
  LabelPolicy p;
  p.road_ids = label_set({1});
  p.occluder_ids = label_set({2});
  p.ignore_ids = label_set({3});
  p.void_id = 255;
  return p;
}

bev::BevMask bev_mask(int w, int h, std::uint8_t fill = 0) {
  const bev::GridSpec g(1.0, w, h, 0, h - 1);
  return {g, LabelGrid(w, h, fill), BoolGrid(w, h, 1)};
}

bev::RoadMask road_mask(const bev::BevMask& b) { return {b.grid, BoolGrid(b.grid.width(), b.grid.height(), 0)}; }

TEST(OverlapCounts, PerfectOverlap) {
  auto b = bev_mask(5, 4, 1);
  auto m = road_mask(b);
  m.road.fill(1);
  const auto c = overlap_counts(b, m, test_policy());
  EXPECT_EQ(c.tp, 20u);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_EQ(c.fn, 0u);
  EXPECT_EQ(*ios(c), 1.0);
  EXPECT_EQ(*iom(c), 1.0);
  EXPECT_EQ(*dice(c), 1.0);
  const auto e = error_masks(b, m, test_policy());
  EXPECT_EQ(count_set(e.fp_mask), 0u);
  EXPECT_EQ(count_set(e.fn_mask), 0u);
}

// 4x4: segmentation road = left two columns, map road = top two rows.
TEST(OverlapCounts, HandCountedFourByFour) {
  auto b = bev_mask(4, 4);
  auto m = road_mask(b);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      if (c < 2) b.labels(c, r) = 1;
      if (r < 2) m.road(c, r) = 1;
    }
  const auto c = overlap_counts(b, m, test_policy());
  EXPECT_EQ(c.tp, 4u);
  EXPECT_EQ(c.fp, 4u);
  EXPECT_EQ(c.fn, 4u);
  EXPECT_EQ(c.tn, 4u);
  EXPECT_DOUBLE_EQ(*ios(c), 0.5);
  EXPECT_DOUBLE_EQ(*dice(c), 0.5);
  const auto e = error_masks(b, m, test_policy());
  EXPECT_EQ(count_set(e.fp_mask), 4u);
  EXPECT_EQ(count_set(e.fn_mask), 4u);
  for (int r = 2; r < 4; ++r) { EXPECT_TRUE(e.fp_mask(0, r) && e.fp_mask(1, r)); }
  for (int c = 2; c < 4; ++c) { EXPECT_TRUE(e.fn_mask(c, 0) && e.fn_mask(c, 1)); }
}

TEST(OverlapCounts, OccludersLeaveTheFalseNegativeBudget) {
  auto b = bev_mask(4, 4);
  auto m = road_mask(b);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      if (c < 2) b.labels(c, r) = 1;
      if (r < 2) m.road(c, r) = 1;
    }
  b.labels(2, 0) = 2;
  b.labels(3, 0) = 2;
  const auto c = overlap_counts(b, m, test_policy());
  EXPECT_EQ(c.tp, 4u);
  EXPECT_EQ(c.fn, 2u);
  EXPECT_EQ(c.occluded, 2u);
  EXPECT_DOUBLE_EQ(*iom(c), 2.0 / 3.0);
  const auto e = error_masks(b, m, test_policy());
  EXPECT_FALSE(e.fn_mask(2, 0));
  EXPECT_FALSE(e.fn_mask(3, 0));
}

TEST(Ratios, EdgeCases) {
  OverlapCounts c;
  EXPECT_FALSE(ios(c));
  EXPECT_FALSE(iom(c));
  EXPECT_FALSE(dice(c));
  c.tp = 4;
  EXPECT_EQ(*ios(c), 1.0);
  EXPECT_EQ(*iom(c), 1.0);
  c.fn = 2;
  EXPECT_DOUBLE_EQ(*iom(c), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*dice(c), 0.8);
  EXPECT_NEAR(*dice(c), 2 * *ios(c) * *iom(c) / (*ios(c) + *iom(c)), 1e-12);
  c.fn = 4;
  c.fp = 4;
  EXPECT_DOUBLE_EQ(*dice(c), 0.5);
}

TEST(OverlapCounts, GridMismatch) {
  auto b = bev_mask(4, 4);
  bev::RoadMask m{bev::GridSpec(1.0, 5, 4, 0, 3), BoolGrid(5, 4, 0)};
  EXPECT_THROW(overlap_counts(b, m, test_policy()), InvalidInput);
  EXPECT_THROW(error_masks(b, m, test_policy()), InvalidInput);
}

TEST(LabelPolicy, DisjointnessEnforced) {
  LabelPolicy p = test_policy();
  EXPECT_NO_THROW(p.check());
  p.occluder_ids.set(1);
  EXPECT_THROW(p.check(), InvalidInput);
  p = test_policy();
  p.void_id = 3;
  EXPECT_THROW(p.check(), InvalidInput);
  EXPECT_NO_THROW(LabelPolicy::cityscapes().check());
}

struct RandomScene {
  bev::BevMask bev;
  bev::RoadMask map;
};

RandomScene random_scene(std::mt19937_64& rng, int n = 64) {
  std::uniform_int_distribution<int> lab(0, 4);
  std::bernoulli_distribution coin(0.5), rare(0.05);
  RandomScene s{bev_mask(n, n), {}};
  s.map = road_mask(s.bev);
  for (std::size_t i = 0; i < s.bev.labels.size(); ++i) {
    s.bev.labels.data()[i] = static_cast<std::uint8_t>(lab(rng));
    s.bev.valid.data()[i] = !rare(rng);
    s.map.road.data()[i] = coin(rng);
  }
  return s;
}

TEST(OverlapCounts, RandomizedAgainstBruteForce) {
  std::mt19937_64 rng(2024);
  const auto policy = test_policy();
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_scene(rng);
    const auto c = overlap_counts(s.bev, s.map, policy);
    const auto o = oracle::brute_force_counts(s.bev.labels.data(), s.bev.valid.data(), s.map.road.data(), {1}, {2}, {3});
    EXPECT_EQ(c.tp, o.tp);
    EXPECT_EQ(c.fp, o.fp);
    EXPECT_EQ(c.fn, o.fn);
    EXPECT_EQ(c.occluded, o.occluded);
    EXPECT_EQ(c.ignored, o.ignored);
    EXPECT_EQ(c.invalid, o.invalid);
    EXPECT_EQ(c.total(), s.bev.labels.size());
    const auto e = error_masks(s.bev, s.map, policy);
    EXPECT_EQ(count_set(e.fp_mask), c.fp);
    EXPECT_EQ(count_set(e.fn_mask), c.fn);
    for (std::size_t i = 0; i < e.fp_mask.size(); ++i) {
      EXPECT_FALSE(e.fp_mask.data()[i] && e.fn_mask.data()[i]);
      if (e.fp_mask.data()[i]) { EXPECT_EQ(s.bev.labels.data()[i], 1); }
      if (e.fn_mask.data()[i]) { EXPECT_TRUE(s.map.road.data()[i]); }
    }
    for (const auto& r : {ios(c), iom(c), dice(c)}) {
      ASSERT_TRUE(r);
      EXPECT_GE(*r, 0.0);
      EXPECT_LE(*r, 1.0);
    }
  }
}

TEST(Ios, NonDecreasingWhenFalsePositiveRemoved) {
  std::mt19937_64 rng(77);
  const auto policy = test_policy();
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_scene(rng, 32);
    const auto before = ios(overlap_counts(s.bev, s.map, policy));
    const auto e = error_masks(s.bev, s.map, policy);
    for (std::size_t i = 0; i < e.fp_mask.size(); ++i)
      if (e.fp_mask.data()[i]) {
        s.bev.labels.data()[i] = 0;
        break;
      }
    const auto after = ios(overlap_counts(s.bev, s.map, policy));
    if (before && after) { EXPECT_GE(*after, *before); }
  }
}

TEST(Overlay, ColoursErrors) {
  auto b = bev_mask(2, 1);
  auto m = road_mask(b);
  b.labels(0, 0) = 1;  // fp
  m.road(1, 0) = 1;    // fn
  const auto e = error_masks(b, m, test_policy());
  const OverlayColors colors;
  const auto rgb = render_overlay(b, m, e, test_policy(), colors);
  ASSERT_EQ(rgb.size(), 6u);
  EXPECT_EQ(rgb[0], colors.fp[0]);
  EXPECT_EQ(rgb[1], colors.fp[1]);
  EXPECT_EQ(rgb[4], colors.fn[1]);
}

}  // namespace
}  // namespace mapval::metrics
