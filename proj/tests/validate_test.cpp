#include "mapval/validate.hpp"

#include <gtest/gtest.h>

#include <random>

#include "mapval/synth.hpp"

namespace mapval::validate {
namespace {

const metrics::LabelPolicy kPolicy = metrics::LabelPolicy::cityscapes();

SceneResult result_with(std::string id, Ratio dice, Ratio ios = {}, Ratio iom = {}) {
  SceneResult r;
  r.scene_id = std::move(id);
  r.pred.metrics = {ios, iom, dice};
  return r;
}

std::vector<SceneResult> results_with_dice(std::initializer_list<double> dice) {
  std::vector<SceneResult> out;
  int i = 0;
  for (double d : dice) out.push_back(result_with("s" + std::to_string(i++), d, d, d));
  return out;
}

// ---- cleaning ----

TEST(CleanScenes, RemovesGroundLabelledScenes) {
  LabelGrid clean(4, 4, 7), dirty(4, 4, 7);
  dirty(2, 1) = 6;  // "ground"
  const std::vector<CleanCandidate> in{clean_candidate("a", &clean, 0.95, kPolicy),
                                       clean_candidate("b", &dirty, 0.99, kPolicy)};
  const CleanResult r = clean_scenes(in, std::nullopt);
  EXPECT_EQ(r.kept, std::vector<std::string>{"a"});
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(r.removed[0].scene_id, "b");
}

TEST(CleanScenes, GtFitThreshold) {
  LabelGrid g(4, 4, 7);
  const std::vector<CleanCandidate> in{clean_candidate("low", &g, 0.90, kPolicy),
                                       clean_candidate("high", &g, 0.95, kPolicy),
                                       clean_candidate("edge", &g, 0.91, kPolicy)};
  const CleanResult r = clean_scenes(in, 0.91);
  EXPECT_EQ(r.kept, std::vector<std::string>{"high"});
  ASSERT_EQ(r.removed.size(), 2u);
  EXPECT_EQ(r.removed[0].scene_id, "low");
  EXPECT_EQ(r.removed[1].scene_id, "edge");
  // Without a threshold both stay.
  EXPECT_EQ(clean_scenes(in, std::nullopt).kept.size(), 3u);
  // Without ground truth the fit rule does not apply.
  const std::vector<CleanCandidate> no_gt{clean_candidate("none", nullptr, {}, kPolicy)};
  EXPECT_EQ(clean_scenes(no_gt, 0.91).kept.size(), 1u);
}

TEST(CleanScenes, UnreadableSceneRecordedAndSkipped) {
  LabelGrid g(2, 2, 7);
  CleanCandidate bad = clean_candidate("bad", nullptr, {}, kPolicy);
  bad.error = "cannot open a.png";
  const std::vector<CleanCandidate> in{bad, clean_candidate("ok", &g, 0.97, kPolicy)};
  const CleanResult r = clean_scenes(in, 0.5);
  EXPECT_EQ(r.kept, std::vector<std::string>{"ok"});
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_NE(r.removed[0].reason.find("cannot open"), std::string::npos);
}

// ---- batch statistics ----

TEST(Summarize, DegenerateDistribution) {
  const std::vector<Ratio> v(7, 0.8);
  const MetricSummary s = summarize(v);
  for (double x : {s.min, s.q1, s.median, s.q3, s.max, s.lower_whisker, s.upper_whisker, s.mean})
    EXPECT_DOUBLE_EQ(x, 0.8);
  EXPECT_NEAR(s.stddev, 0.0, 1e-15);
  EXPECT_TRUE(s.outliers_low.empty());
}

TEST(Summarize, TukeyFencesByHand) {
  const std::vector<Ratio> v{0.95, 0.1, 0.92, 0.9, 0.91};
  const MetricSummary s = summarize(v);
  // Sorted: 0.1 0.9 0.91 0.92 0.95; positions 1, 2, 3 for the quartiles.
  EXPECT_DOUBLE_EQ(s.q1, 0.9);
  EXPECT_DOUBLE_EQ(s.median, 0.91);
  EXPECT_DOUBLE_EQ(s.q3, 0.92);
  // Lower fence 0.9 - 0.03 = 0.87: 0.1 falls outside.
  EXPECT_DOUBLE_EQ(s.lower_whisker, 0.9);
  ASSERT_EQ(s.outliers_low.size(), 1u);
  EXPECT_DOUBLE_EQ(s.outliers_low[0], 0.1);
  EXPECT_DOUBLE_EQ(s.min, 0.1);
  EXPECT_DOUBLE_EQ(s.max, 0.95);
  const double mean = (0.1 + 0.9 + 0.91 + 0.92 + 0.95) / 5;
  double ss = 0;
  for (double x : {0.1, 0.9, 0.91, 0.92, 0.95}) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(s.mean, mean, 1e-12);
  EXPECT_NEAR(s.stddev, std::sqrt(ss / 5), 1e-12);
}

TEST(Summarize, InterpolatedQuartiles) {
  const std::vector<Ratio> v{0.0, 1.0, 2.0, 3.0};
  const MetricSummary s = summarize(v);
  EXPECT_DOUBLE_EQ(s.q1, 0.75);
  EXPECT_DOUBLE_EQ(s.median, 1.5);
  EXPECT_DOUBLE_EQ(s.q3, 2.25);
}

TEST(Summarize, SingletonAndUndefined) {
  const std::vector<Ratio> v{Ratio{}, 0.42, Ratio{}};
  const MetricSummary s = summarize(v);
  for (double x : {s.min, s.q1, s.median, s.q3, s.max, s.lower_whisker, s.upper_whisker, s.mean})
    EXPECT_DOUBLE_EQ(x, 0.42);
  EXPECT_EQ(s.count, 1u);
  EXPECT_EQ(s.undefined, 2u);
}

TEST(Summarize, EmptyBatchThrows) {
  EXPECT_THROW(summarize(std::vector<Ratio>{}), EmptyBatch);
  EXPECT_THROW(summarize(std::vector<Ratio>{Ratio{}, Ratio{}}), EmptyBatch);
  EXPECT_THROW(batch_stats(std::vector<SceneResult>{}), EmptyBatch);
}

TEST(BatchStats, OrderingInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 20; ++t) {
    std::vector<SceneResult> rs;
    for (int i = 0; i < 1 + t * 3; ++i) rs.push_back(result_with("s", u(rng), u(rng), u(rng)));
    const BatchSummary b = batch_stats(rs);
    for (const MetricSummary* m : {&b.dice, &b.ios, &b.iom}) {
      EXPECT_LE(m->min, m->q1);
      EXPECT_LE(m->q1, m->median);
      EXPECT_LE(m->median, m->q3);
      EXPECT_LE(m->q3, m->max);
      // Whiskers are data points inside the fences.
      EXPECT_LE(m->min, m->lower_whisker);
      EXPECT_LE(m->upper_whisker, m->max);
      EXPECT_GE(m->lower_whisker, m->q1 - 1.5 * (m->q3 - m->q1));
      EXPECT_LE(m->upper_whisker, m->q3 + 1.5 * (m->q3 - m->q1));
    }
    EXPECT_EQ(b.analyzed, rs.size());
    EXPECT_FALSE(b.gt_dice.has_value());
  }
}

// ---- outliers and judgement ----

TEST(FlagOutliers, ZeroThresholdFlagsNothing) {
  const auto rs = results_with_dice({0.0, 0.3, 0.99});
  EXPECT_TRUE(flag_outliers(rs, 0.0).empty());
}

TEST(FlagOutliers, ParkingSpaceIsFalsePositive) {
  const std::vector<SceneResult> rs{result_with("park", 0.9, 0.8803, 0.9722)};
  const auto f = flag_outliers(rs, 0.95);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].type, ErrorType::kFalsePositive);
  EXPECT_EQ(judge(0.88, 0.97, {}), ErrorType::kFalsePositive);
}

TEST(FlagOutliers, IntersectionIsFalseNegative) {
  EXPECT_EQ(judge(0.9427, 0.9033, {}), ErrorType::kFalseNegative);
}

TEST(FlagOutliers, StrictThresholdAndTies) {
  const std::vector<SceneResult> rs{result_with("at", 0.8, 0.8, 0.8), result_with("below", 0.7999, 0.7, 0.7 + 1e-12)};
  const auto f = flag_outliers(rs, 0.8);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].scene_id, "below");
  EXPECT_EQ(f[0].type, ErrorType::kBoth);
}

TEST(Judge, UndefinedSidesAndAbsoluteLimits) {
  EXPECT_EQ(judge(Ratio{}, 0.2, {}), ErrorType::kFalseNegative);
  EXPECT_EQ(judge(0.2, Ratio{}, {}), ErrorType::kFalsePositive);
  JudgementConfig cfg;
  cfg.iom_max = 0.95;
  // Relative rule says fp; the absolute iom limit adds fn.
  EXPECT_EQ(judge(0.80, 0.90, cfg), ErrorType::kBoth);
  EXPECT_EQ(judge(0.80, 0.96, cfg), ErrorType::kFalsePositive);
}

TEST(FlagOutliers, EveryFlaggedSceneHasAType) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<SceneResult> rs;
  for (int i = 0; i < 200; ++i) {
    const double a = u(rng), b = u(rng);
    rs.push_back(result_with("s" + std::to_string(i), 2 * a * b / (a + b), a, b));
  }
  for (const auto& f : flag_outliers(rs, 0.5)) EXPECT_NE(f.type, ErrorType::kNone);
}

// ---- relative count curve ----

TEST(RelativeCount, Counting) {
  const auto rs = results_with_dice({0.5, 0.8, 0.9});
  const std::vector<double> th{0.0, 0.85, 1.0 + 1e-9};
  const auto c = relative_count_curve(rs, th);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_DOUBLE_EQ(c[0].fraction, 0.0);
  EXPECT_DOUBLE_EQ(c[1].fraction, 2.0 / 3.0);
  EXPECT_EQ(c[1].count, 2u);
  EXPECT_DOUBLE_EQ(c[2].fraction, 1.0);
}

TEST(RelativeCount, UnsortedThresholdsRejected) {
  const auto rs = results_with_dice({0.5});
  const std::vector<double> th{0.5, 0.2};
  EXPECT_THROW(relative_count_curve(rs, th), InvalidInput);
}

TEST(RelativeCount, MonotoneAndConsistentWithFlags) {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 10; ++t) {
    std::vector<SceneResult> rs;
    for (int i = 0; i < 50; ++i) rs.push_back(result_with("s" + std::to_string(i), u(rng) * u(rng), 0.5, 0.6));
    rs.push_back(result_with("undef", Ratio{}));
    std::vector<double> th;
    for (int k = 0; k <= 40; ++k) th.push_back(k / 40.0);
    const auto c = relative_count_curve(rs, th);
    for (std::size_t k = 1; k < c.size(); ++k) EXPECT_GE(c[k].fraction, c[k - 1].fraction);
    for (const auto& p : c) {
      const std::size_t flagged = flag_outliers(rs, p.threshold).size();
      EXPECT_EQ(flagged, p.count);
      EXPECT_NEAR(p.fraction * 50.0, static_cast<double>(flagged), 1e-9);
    }
  }
}

// ---- ground-truth comparison ----

metrics::ErrorMasks masks_with(int n_fp, int n_fn, int w = 20, int h = 20, int start = 0) {
  metrics::ErrorMasks m{BoolGrid(w, h, 0), BoolGrid(w, h, 0)};
  for (int i = 0; i < n_fp; ++i) m.fp_mask.data()[static_cast<std::size_t>(start + i)] = 1;
  for (int i = 0; i < n_fn; ++i) m.fn_mask.data()[static_cast<std::size_t>(start + 200 + i)] = 1;
  return m;
}

TEST(CompareToGroundTruth, Counting) {
  // True errors: 60 fp + 40 fn = 100. Detected: the first 60 of those plus 20 elsewhere.
  metrics::ErrorMasks truth = masks_with(60, 40);
  metrics::ErrorMasks det = masks_with(60, 0);
  for (int i = 0; i < 20; ++i) det.fn_mask.data()[static_cast<std::size_t>(300 + i)] = 1;
  const PixelPRF p = compare_to_ground_truth(det, truth);
  EXPECT_EQ(p.true_, 100u);
  EXPECT_EQ(p.detected, 80u);
  EXPECT_EQ(p.intersection, 60u);
  EXPECT_DOUBLE_EQ(*p.recall, 0.6);
  EXPECT_DOUBLE_EQ(*p.precision, 0.75);
}

TEST(CompareToGroundTruth, IdentityAndEmptyDetection) {
  const metrics::ErrorMasks truth = masks_with(10, 5);
  const PixelPRF same = compare_to_ground_truth(truth, truth);
  EXPECT_EQ(*same.recall, 1.0);
  EXPECT_EQ(*same.precision, 1.0);
  const PixelPRF none = compare_to_ground_truth(masks_with(0, 0), truth);
  EXPECT_EQ(*none.recall, 0.0);
  EXPECT_FALSE(none.precision.has_value());
}

TEST(CompareToGroundTruth, GridMismatch) {
  EXPECT_THROW(compare_to_ground_truth(masks_with(1, 1), masks_with(1, 1, 20, 21)), InvalidInput);
}

TEST(CompareToGroundTruth, PerTypeAndNestedEquality) {
  const metrics::ErrorMasks truth = masks_with(30, 10);
  const metrics::ErrorMasks det = masks_with(30, 0);
  EXPECT_EQ(*compare_fp(det, truth).recall, 1.0);
  EXPECT_EQ(*compare_fn(det, truth).recall, 0.0);
  // Same size and nested means equal sets: recall = precision.
  const PixelPRF p = compare_to_ground_truth(masks_with(12, 3), masks_with(12, 3));
  EXPECT_EQ(p.recall, p.precision);
}

bev::BevMask plain(int w, int h, std::uint8_t label) {
  return {bev::GridSpec(0.1, w, h, w / 2, h - 1), LabelGrid(w, h, label), BoolGrid(w, h, 1)};
}

TEST(GtErrorMasks, IdentityAndSinglePixel) {
  bev::BevMask gt = plain(8, 8, 8);
  for (int r = 0; r < 8; ++r) gt.labels(3, r) = gt.labels(4, r) = 7;
  const auto same = gt_error_masks(gt, gt, kPolicy);
  EXPECT_EQ(count_set(same.fp_mask), 0u);
  EXPECT_EQ(count_set(same.fn_mask), 0u);
  bev::BevMask pred = gt;
  pred.labels(0, 5) = 7;
  const auto one = gt_error_masks(pred, gt, kPolicy);
  EXPECT_EQ(count_set(one.fp_mask), 1u);
  EXPECT_EQ(one.fp_mask(0, 5), 1);
  EXPECT_EQ(count_set(one.fn_mask), 0u);
}

TEST(GtErrorMasks, GridMismatch) {
  EXPECT_THROW(gt_error_masks(plain(8, 8, 7), plain(8, 9, 7), kPolicy), InvalidInput);
}

TEST(GtErrorMasks, RandomizedBruteForce) {
  std::mt19937_64 rng(64);
  const std::vector<std::uint8_t> palette{7, 8, 26, 6, 1, 0, 255, 24};
  std::uniform_int_distribution<std::size_t> pick(0, palette.size() - 1);
  std::bernoulli_distribution valid(0.9);
  for (int t = 0; t < 10; ++t) {
    bev::BevMask pred = plain(64, 64, 8), gt = plain(64, 64, 8);
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
      pred.labels.data()[i] = palette[pick(rng)];
      gt.labels.data()[i] = palette[pick(rng)];
      pred.valid.data()[i] = valid(rng);
      gt.valid.data()[i] = valid(rng);
    }
    const auto got = gt_error_masks(pred, gt, kPolicy);
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
      const int p = pred.labels.data()[i], g = gt.labels.data()[i];
      const bool both_valid = pred.valid.data()[i] && gt.valid.data()[i];
      const bool ignored = p == 6 || g == 6;
      const bool p_occ = p == 1 || p == 5 || p == 21 || (p >= 24 && p <= 33);
      const bool fp = both_valid && !ignored && p == 7 && g != 7;
      const bool fn = both_valid && !ignored && g == 7 && p != 7 && !p_occ;
      ASSERT_EQ(got.fp_mask.data()[i] != 0, fp) << "pixel " << i;
      ASSERT_EQ(got.fn_mask.data()[i] != 0, fn) << "pixel " << i;
    }
  }
}

// ---- end-to-end scene validation on synthetic data ----

struct SynthFixture {
  synth::SynthMap map = synth::gen_map({synth::Layout::kTIntersection, 6.5, 0.0, 1});
  std::vector<osm::RoadElement> el = osm::to_elements(
      map.graph, map.frame, geo::bbox_around(geo::Pose(map.frame.origin, 0), 200.0), osm::WidthConfig{});
  geo::Pose truth{geo::from_local(map.frame, {0.0, -20.0}), 0.0};

  SceneResult run(const synth::PerturbationSpec& p) const {
    const synth::SynthScene s = synth::gen_scene(el, map.frame, truth, bev::GridSpec::default_grid(), kPolicy, p);
    return validate_scene({"scene", truth, s.pred, s.gt}, el, map.frame, kPolicy);
  }
};

TEST(ValidateScene, PerfectScene) {
  const SynthFixture f;
  const SceneResult r = f.run({});
  EXPECT_EQ(*r.pred.metrics.dice, 1.0);
  EXPECT_EQ(*r.pred.metrics.ios, 1.0);
  EXPECT_EQ(*r.pred.metrics.iom, 1.0);
  ASSERT_TRUE(r.gt.has_value());
  EXPECT_EQ(*r.gt->metrics.dice, 1.0);
  EXPECT_EQ(r.prf->true_, 0u);
  EXPECT_EQ(r.prf->detected, 0u);
}

TEST(ValidateScene, FalsePositiveBlobLowersPredictedIos) {
  const SynthFixture f;
  synth::PerturbationSpec p;
  p.fp_blob = synth::Rect{-12.0, -6.0, 10.0, 16.0};
  const SceneResult r = f.run(p);
  EXPECT_LT(*r.pred.metrics.ios, *r.gt->metrics.ios);
  EXPECT_EQ(*r.pred.metrics.iom, 1.0);
  EXPECT_EQ(judge(r.pred.metrics.ios, r.pred.metrics.iom, {}), ErrorType::kFalsePositive);
  EXPECT_EQ(*r.prf->recall, 1.0);
  EXPECT_EQ(*r.prf->precision, 1.0);
}

TEST(ValidateScene, ErasedIntersectionLowersPredictedIom) {
  const SynthFixture f;
  synth::PerturbationSpec p;
  p.fn_erase = synth::Rect{3.0, 20.0, 15.0, 26.0};
  const SceneResult r = f.run(p);
  EXPECT_LT(*r.pred.metrics.iom, *r.gt->metrics.iom);
  EXPECT_EQ(*r.pred.metrics.ios, 1.0);
  EXPECT_EQ(judge(r.pred.metrics.ios, r.pred.metrics.iom, {}), ErrorType::kFalseNegative);
  EXPECT_EQ(*r.prf->recall, 1.0);
  EXPECT_EQ(*r.prf->precision, 1.0);
}

TEST(ValidateScene, ErrorsCarrySceneId) {
  const SynthFixture f;
  const synth::SynthScene s = synth::gen_scene(f.el, f.map.frame, f.truth, bev::GridSpec::default_grid(), kPolicy, {});
  bev::BevMask bad_gt = s.gt;
  bad_gt.grid = bev::GridSpec(0.2, 400, 600, 200, 500);
  try {
    validate_scene({"scene-42", f.truth, s.pred, bad_gt}, f.el, f.map.frame, kPolicy);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("scene-42"), std::string::npos);
  }
}

}  // namespace
}  // namespace mapval::validate
