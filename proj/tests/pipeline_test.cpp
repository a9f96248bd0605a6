#include "beatgrid/pipeline.hpp"

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace beatgrid;

namespace {

// spans exactly [0, duration]: the final note's offset reaches duration
Piece metronome_piece(double duration, double beat_gap) {
  Piece p;
  p.id = "m";
  int c = 0;
  for (double t = 0.0; t < duration; t += beat_gap) {
    p.beats.push_back({t, c % 4 + 1});
    Note n;
    n.pitch = 60 + c % 12;
    n.onset = t;
    n.offset = std::min(duration, t + 0.25);
    n.velocity = 80;
    p.notes.push_back(n);
    ++c;
  }
  if (!p.notes.empty()) p.notes.back().offset = duration;
  return p;
}

}  // namespace

TEST(Segmentation, WindowCountFormula) {
  const Piece p = metronome_piece(12.0, 0.5);
  PipelineConfig cfg;  // L=10, hop=1
  const auto segs = segment_piece(p, cfg);
  ASSERT_EQ(segs.size(), 3u);  // floor((12-10)/1)+1
  EXPECT_DOUBLE_EQ(segs[0].start, 0.0);
  EXPECT_DOUBLE_EQ(segs[1].start, 1.0);
  EXPECT_DOUBLE_EQ(segs[2].start, 2.0);

  for (double dur : {10.0, 10.5, 17.0, 25.25}) {
    for (double hop : {0.5, 1.0, 2.0}) {
      PipelineConfig c2;
      c2.hop = hop;
      const Piece piece = metronome_piece(dur, 0.5);
      const double d = piece_duration(piece);
      const auto s = segment_piece(piece, c2);
      const auto expected =
          d >= 10.0 ? static_cast<std::size_t>(std::floor((d - 10.0) / hop + 1e-9)) + 1 : 1u;
      EXPECT_EQ(s.size(), expected) << "dur " << dur << " hop " << hop;
    }
  }
}

TEST(Segmentation, ShortPieceSingleWindow) {
  const Piece p = metronome_piece(4.0, 0.5);
  const auto segs = segment_piece(p, PipelineConfig{});
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_DOUBLE_EQ(segs[0].start, 0.0);
  EXPECT_EQ(segs[0].beats.size(), p.beats.size());
}

TEST(Segmentation, OffsetClippedAtWindowEnd) {
  Piece p;
  p.id = "clip";
  p.notes.push_back({60, 9.99, 10.5, 80});
  p.beats.push_back({0.0, 1});
  p.beats.push_back({10.5, 2});
  const auto segs = segment_piece(p, PipelineConfig{});
  ASSERT_FALSE(segs.empty());
  ASSERT_EQ(segs[0].notes.size(), 1u);
  EXPECT_DOUBLE_EQ(segs[0].notes[0].onset, 9.99);
  EXPECT_DOUBLE_EQ(segs[0].notes[0].offset, 10.0);
}

TEST(Segmentation, RebasingPreservesCounters) {
  const Piece p = metronome_piece(12.0, 0.5);
  const auto segs = segment_piece(p, PipelineConfig{});
  const Segment& s1 = segs[1];  // start 1.0
  ASSERT_FALSE(s1.beats.empty());
  EXPECT_DOUBLE_EQ(s1.beats[0].time, 0.0);  // beat at 1.0 re-based
  EXPECT_EQ(s1.beats[0].counter, 2 % 4 + 1);
}

TEST(Segmentation, ContentPreservingOnHopAlignedDurations) {
  Rng rng(99);
  for (int iter = 0; iter < 20; ++iter) {
    // duration = L + k*hop: the window grid covers the whole piece
    Piece p = metronome_piece(10.0 + uniform_int(rng, 0, 15), 0.5);
    const auto segs = segment_piece(p, PipelineConfig{});
    for (const auto& n : p.notes) {
      bool found = false;
      for (const auto& s : segs) {
        for (const auto& m : s.notes) {
          if (m.pitch == n.pitch && std::abs(m.onset + s.start - n.onset) < 1e-9) found = true;
        }
      }
      EXPECT_TRUE(found) << "note at " << n.onset << " lost";
    }
  }
}

TEST(Segmentation, UncoveredTailStopsAtLastFullWindow) {
  // duration 16.5, hop 1: windows end at start 6, covering [0, 16)
  const Piece p = metronome_piece(16.5, 0.5);
  const auto segs = segment_piece(p, PipelineConfig{});
  ASSERT_EQ(segs.size(), 7u);
  EXPECT_DOUBLE_EQ(segs.back().start, 6.0);
}

TEST(Cleaning, DropsBeatlessAndNoteless) {
  PipelineConfig cfg;
  Segment with_both{"a", 0, 0.0, {{60, 0.0, 1.0, 80}}, {{0.5, 1}}};
  Segment no_beats{"b", 0, 0.0, {{60, 0.0, 1.0, 80}}, {}};
  Segment no_notes{"c", 0, 0.0, {}, {{0.1, 1}, {0.2, 2}}};
  const auto cleaned = clean_segments({with_both, no_beats, no_notes}, cfg);
  ASSERT_EQ(cleaned.size(), 1u);
  EXPECT_EQ(cleaned[0].piece_id, "a");
}

TEST(Cleaning, SingleBeatBoundary) {
  PipelineConfig cfg;  // min_beats = 1
  Segment s{"a", 0, 0.0, {{60, 0.0, 1.0, 80}}, {{0.5, 1}}};
  EXPECT_EQ(clean_segments({s}, cfg).size(), 1u);
}

TEST(Cleaning, Idempotent) {
  Rng rng(5);
  std::vector<Segment> segs;
  for (int i = 0; i < 50; ++i) segs.push_back(testutil::random_segment(rng));
  PipelineConfig cfg;
  const auto once = clean_segments(segs, cfg);
  const auto twice = clean_segments(once, cfg);
  EXPECT_EQ(once, twice);
}

TEST(DatasetCsv, EmptyRoundTrip) {
  const std::string csv = write_dataset_csv({});
  EXPECT_EQ(csv, "piece_id,segment_index,start,notes,beats\n");
  EXPECT_TRUE(read_dataset_csv(csv).empty());
}

TEST(DatasetCsv, SingleSegmentIdentity) {
  Segment s{"p1", 3, 2.0,
            {{60, 0.01, 0.44, 80}, {62, 0.44, 1.0, 90}},
            {{0.01, 1}, {0.44, 2}, {0.89, 3}}};
  const auto back = read_dataset_csv(write_dataset_csv({s}));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], s);
}

TEST(DatasetCsv, ByteIdenticalReserialization) {
  Rng rng(123);
  std::vector<Segment> segs;
  for (int i = 0; i < 10000; ++i) {
    Segment s = testutil::random_segment(rng);
    s.piece_id = "piece_" + std::to_string(i % 57);
    s.index = i;
    s.start = testutil::ms_grid(uniform_real(rng, 0.0, 100.0));
    segs.push_back(std::move(s));
  }
  const std::string once = write_dataset_csv(segs);
  const auto parsed = read_dataset_csv(once);
  const std::string twice = write_dataset_csv(parsed);
  EXPECT_EQ(once, twice);
  EXPECT_EQ(parsed.size(), segs.size());
}

TEST(DatasetCsv, ParseErrorCarriesLineNumber) {
  try {
    read_dataset_csv("piece_id,segment_index,start,notes,beats\np,0,zz,,\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::csv_parse_error);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(DatasetCsv, RejectsReservedCharactersInId) {
  Segment s{"bad,id", 0, 0.0, {{60, 0.0, 1.0, 80}}, {{0.5, 1}}};
  EXPECT_THROW(write_dataset_csv({s}), Error);
}
