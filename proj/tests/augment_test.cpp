#include "beatgrid/augment.hpp"

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace beatgrid;

namespace {

Segment small_segment() {
  Segment s;
  s.piece_id = "a";
  s.notes = {{55, 0.5, 1.0, 80}, {67, 2.0, 2.5, 90}};
  s.beats = {{0.5, 1}, {1.0, 2}, {1.5, 3}, {2.0, 4}};
  return s;
}

}  // namespace

TEST(AugmentSample, AllDisabledYieldsIdentity) {
  AugmentConfig cfg;
  Rng rng(1);
  const auto p = sample_augmentation_params(small_segment(), cfg, rng);
  EXPECT_EQ(p.transpose, 0);
  EXPECT_DOUBLE_EQ(p.shift, 0.0);
  EXPECT_DOUBLE_EQ(p.scale, 1.0);
  EXPECT_TRUE(p.is_identity());
}

TEST(AugmentSample, FullRangeSegmentForcesZeroTranspose) {
  AugmentConfig cfg;
  cfg.enable_transpose = true;
  Segment s = small_segment();
  s.notes.push_back({21, 0.1, 0.2, 70});
  s.notes.push_back({108, 0.1, 0.2, 70});
  Rng rng(2);
  for (int i = 0; i < 20; ++i)
    EXPECT_EQ(sample_augmentation_params(s, cfg, rng).transpose, 0);
}

TEST(AugmentSample, EmptySegmentRejected) {
  Segment s;
  s.beats = {{0.5, 1}};
  AugmentConfig cfg;
  Rng rng(3);
  try {
    sample_augmentation_params(s, cfg, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_segment);
  }
}

TEST(AugmentSample, TransposeHistogramUniform) {
  // segment spanning pitches 60..72 -> feasible transpose [-39, 36], 76 bins
  Segment s = small_segment();
  s.notes = {{60, 0.1, 0.3, 80}, {72, 0.5, 0.8, 80}};
  AugmentConfig cfg;
  cfg.enable_transpose = true;
  Rng rng(20240817);

  const int lo = 21 - 60, hi = 108 - 72;
  const int bins = hi - lo + 1;
  std::vector<long> hist(static_cast<std::size_t>(bins), 0);
  const long draws = 100000;
  for (long i = 0; i < draws; ++i) {
    const int t = sample_augmentation_params(s, cfg, rng).transpose;
    ASSERT_GE(t, lo);
    ASSERT_LE(t, hi);
    ++hist[static_cast<std::size_t>(t - lo)];
  }
  const double expected = static_cast<double>(draws) / bins;
  double chi2 = 0.0;
  for (long h : hist) chi2 += (h - expected) * (h - expected) / expected;
  // alpha = 0.001 via Wilson-Hilferty
  EXPECT_LT(chi2, testutil::chi2_critical(bins - 1, 3.09));
}

TEST(AugmentSample, DeterministicGivenSeed) {
  AugmentConfig cfg;
  cfg.enable_transpose = cfg.enable_shift = cfg.enable_scale = true;
  const Segment s = small_segment();
  Rng r1 = derive_rng(7, s.piece_id, s.index, 3);
  Rng r2 = derive_rng(7, s.piece_id, s.index, 3);
  const auto p1 = sample_augmentation_params(s, cfg, r1);
  const auto p2 = sample_augmentation_params(s, cfg, r2);
  EXPECT_EQ(p1.transpose, p2.transpose);
  EXPECT_EQ(p1.shift, p2.shift);
  EXPECT_EQ(p1.scale, p2.scale);
}

TEST(AugmentApply, TransposeShiftsPitchOnly) {
  const Segment s = small_segment();
  const Segment out = apply_augmentation(s, {2, 0.0, 1.0}, 10.0);
  ASSERT_EQ(out.notes.size(), s.notes.size());
  EXPECT_EQ(out.notes[0].pitch, 57);
  EXPECT_EQ(out.notes[1].pitch, 69);
  for (std::size_t i = 0; i < s.notes.size(); ++i) {
    EXPECT_EQ(out.notes[i].onset, s.notes[i].onset);    // bitwise
    EXPECT_EQ(out.notes[i].offset, s.notes[i].offset);
  }
  for (std::size_t i = 0; i < s.beats.size(); ++i) EXPECT_EQ(out.beats[i], s.beats[i]);
}

TEST(AugmentApply, ScaleMovesBeats) {
  const Segment s = small_segment();
  const Segment out = apply_augmentation(s, {0, 0.0, 1.1}, 10.0);
  ASSERT_EQ(out.beats.size(), s.beats.size());
  EXPECT_NEAR(out.beats[3].time, 2.2, 1e-12);  // 2.0 * 1.1
}

TEST(AugmentApply, NegativeShiftDropsEarlyBeat) {
  const Segment s = small_segment();
  const Segment out = apply_augmentation(s, {0, -1.0, 1.0}, 10.0);
  ASSERT_EQ(out.beats.size(), 3u);  // beat at 0.5 lands at -0.5 and is dropped
  EXPECT_NEAR(out.beats[0].time, 0.0, 1e-12);
  EXPECT_EQ(out.beats[0].counter, 2);
}

TEST(AugmentApply, NotePairOutsideWindowDroppedTogether) {
  Segment s = small_segment();
  const Segment out = apply_augmentation(s, {0, -1.2, 1.0}, 10.0);
  // first note [0.5, 1.0] -> [-0.7, -0.2]: fully out
  ASSERT_EQ(out.notes.size(), 1u);
  EXPECT_NEAR(out.notes[0].onset, 0.8, 1e-12);
}

TEST(AugmentApply, HalfOutNoteClippedAtEdges) {
  Segment s;
  s.notes = {{60, 0.5, 2.0, 80}};
  s.beats = {{1.0, 1}};
  const Segment out = apply_augmentation(s, {0, -1.0, 1.0}, 10.0);
  ASSERT_EQ(out.notes.size(), 1u);
  EXPECT_DOUBLE_EQ(out.notes[0].onset, 0.0);
  EXPECT_DOUBLE_EQ(out.notes[0].offset, 1.0);
}

TEST(AugmentApply, IdentityIsFixedPoint) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Segment s = testutil::random_segment(rng);
    EXPECT_EQ(apply_augmentation(s, {0, 0.0, 1.0}, 10.0), s);
  }
}

TEST(AugmentApply, InfeasibleTransposeRejected) {
  Segment s = small_segment();
  s.notes.push_back({127, 0.1, 0.2, 70});
  try {
    apply_augmentation(s, {5, 0.0, 1.0}, 10.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::infeasible_transpose);
  }
}

TEST(AugmentApply, PitchBoundsPostCondition) {
  AugmentConfig cfg;
  cfg.enable_transpose = true;
  Rng rng(31);
  for (int i = 0; i < 300; ++i) {
    const Segment s = testutil::random_segment(rng);
    const auto p = sample_augmentation_params(s, cfg, rng);
    const Segment out = apply_augmentation(s, p, 10.0);
    for (const auto& n : out.notes) {
      EXPECT_GE(n.pitch, cfg.pitch_low);
      EXPECT_LE(n.pitch, cfg.pitch_high);
    }
  }
}

TEST(AugmentApply, InterOnsetAndInterBeatScaling) {
  Rng rng(77);
  for (int i = 0; i < 300; ++i) {
    const Segment s = testutil::random_segment(rng);
    // transposition leaves every time bitwise untouched
    const Segment tr = apply_augmentation(s, {1, 0.0, 1.0}, 10.0);
    ASSERT_EQ(tr.notes.size(), s.notes.size());
    for (std::size_t k = 0; k < s.notes.size(); ++k)
      EXPECT_EQ(tr.notes[k].onset, s.notes[k].onset);

    // scaling multiplies surviving inter-beat intervals by exactly s (to FP
    // rounding); with positive scale and no shift the survivors are a prefix
    const double scale = uniform_real(rng, 0.9, 1.1);
    const Segment sc = apply_augmentation(s, {0, 0.0, scale}, 10.0);
    for (std::size_t k = 0; k + 1 < sc.beats.size(); ++k) {
      const double got = sc.beats[k + 1].time - sc.beats[k].time;
      const double want = scale * (s.beats[k + 1].time - s.beats[k].time);
      EXPECT_NEAR(got, want, 1e-12);
    }
  }
}
