#include "beatgrid/midi.hpp"

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace beatgrid;
using midi::SmfSpec;
using midi::TempoChange;
using midi::TimeSigChange;

namespace {

std::vector<std::uint8_t> single_note_file() {
  // one C4, on at tick 0, off at tick 480, 500000 us/quarter, 480 PPQ
  SmfSpec spec;
  spec.notes.push_back({60, 0.0, 0.5, 90});
  return midi::write_midi_file(spec);
}

}  // namespace

TEST(MidiParse, SingleNoteTickToSeconds) {
  const Piece p = midi::parse_midi_file(single_note_file());
  ASSERT_EQ(p.notes.size(), 1u);
  EXPECT_EQ(p.notes[0].pitch, 60);
  EXPECT_DOUBLE_EQ(p.notes[0].onset, 0.0);
  EXPECT_DOUBLE_EQ(p.notes[0].offset, 0.5);
  EXPECT_EQ(p.notes[0].velocity, 90);
}

TEST(MidiParse, UniformGridTwoBars) {
  // 4/4 at 120 BPM over 2 bars -> beats at 0.0 .. 3.5, counters 1..4 1..4
  SmfSpec spec;
  spec.notes.push_back({60, 0.0, 4.0, 80});
  const Piece p = midi::parse_midi_file(midi::write_midi_file(spec));
  ASSERT_EQ(p.beats.size(), 8u);
  for (int i = 0; i < 8; ++i) {
    EXPECT_DOUBLE_EQ(p.beats[static_cast<std::size_t>(i)].time, 0.5 * i);
    EXPECT_EQ(p.beats[static_cast<std::size_t>(i)].counter, i % 4 + 1);
  }
}

TEST(MidiParse, TempoChangeMidPiece) {
  // 120 BPM for bar 1, 60 BPM from bar 2; beat times follow the tempo map
  SmfSpec spec;
  spec.tempos = {{0, 500000}, {1920, 1000000}};
  spec.notes.push_back({60, 0.0, 1.0, 80});
  const auto bytes = midi::write_midi_file(spec);
  // keep the piece running to the end of bar 2: a second note placed by tick
  SmfSpec spec2 = spec;
  spec2.notes.push_back({62, 2.0, 6.0, 80});  // tick 1920 .. 3840 under this map
  const Piece p = midi::parse_midi_file(midi::write_midi_file(spec2));

  const std::vector<double> expected = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0};
  ASSERT_EQ(p.beats.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(p.beats[i].time, expected[i], 1e-9) << "beat " << i;
    const double oracle =
        testutil::oracle_tick_to_seconds(static_cast<std::int64_t>(480 * i), spec.tempos, 480);
    EXPECT_NEAR(p.beats[i].time, oracle, 1e-9) << "oracle disagrees at beat " << i;
  }
  (void)bytes;
}

TEST(MidiParse, ThreeFourTime) {
  SmfSpec spec;
  spec.time_sigs = {{0, 3, 4}};
  spec.notes.push_back({60, 0.0, 3.0, 80});  // 2 bars of 3/4 at 120 BPM
  const Piece p = midi::parse_midi_file(midi::write_midi_file(spec));
  ASSERT_EQ(p.beats.size(), 6u);
  const int expected_counters[] = {1, 2, 3, 1, 2, 3};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(p.beats[i].counter, expected_counters[i]);
}

TEST(MidiParse, ConstantTempoGridIsArithmetic) {
  SmfSpec spec;
  spec.tempos = {{0, 500000}};  // 120 BPM
  spec.notes.push_back({60, 0.0, 7.93, 80});
  const Piece p = midi::parse_midi_file(midi::write_midi_file(spec));
  ASSERT_GT(p.beats.size(), 4u);
  for (std::size_t i = 0; i < p.beats.size(); ++i)
    EXPECT_EQ(p.beats[i].time, 0.5 * static_cast<double>(i));  // dyadic: bitwise exact
}

TEST(MidiParse, OverlappingSamePitchClosesFirst) {
  // two overlapping note-ons on one channel and pitch
  std::vector<std::uint8_t> track = {
      0x00, 0x90, 60, 80,   // on at 0
      0x60, 0x90, 60, 70,   // on again at 96 -> closes the first
      0x60, 0x80, 60, 64,   // off at 192
      0x00, 0xff, 0x2f, 0x00};
  std::vector<std::uint8_t> file = {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0,
                                    'M', 'T', 'r', 'k', 0, 0, 0, static_cast<std::uint8_t>(track.size())};
  file.insert(file.end(), track.begin(), track.end());
  const Piece p = midi::parse_midi_file(file);
  ASSERT_EQ(p.notes.size(), 2u);
  EXPECT_DOUBLE_EQ(p.notes[0].onset, 0.0);
  EXPECT_DOUBLE_EQ(p.notes[0].offset, 0.1);  // 96 ticks at 480 ppq, 120 BPM
  EXPECT_DOUBLE_EQ(p.notes[1].onset, 0.1);
  EXPECT_DOUBLE_EQ(p.notes[1].offset, 0.2);
}

TEST(MidiParse, VelocityZeroNoteOnIsNoteOff) {
  std::vector<std::uint8_t> track = {
      0x00, 0x90, 64, 80,  // on
      0x60, 64,   0,       // running status, velocity 0 -> off
      0x00, 0xff, 0x2f, 0x00};
  std::vector<std::uint8_t> file = {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0,
                                    'M', 'T', 'r', 'k', 0, 0, 0, static_cast<std::uint8_t>(track.size())};
  file.insert(file.end(), track.begin(), track.end());
  const Piece p = midi::parse_midi_file(file);
  ASSERT_EQ(p.notes.size(), 1u);
  EXPECT_DOUBLE_EQ(p.notes[0].offset, 0.1);
}

TEST(MidiParse, DanglingNoteOnClosedAtTrackEnd) {
  std::vector<std::uint8_t> track = {
      0x00, 0x90, 60, 80,  // never released
      0x00, 0x90, 72, 80,
      0x81, 0x40, 0x80, 72, 0,  // off for 72 at tick 192
      0x00, 0xff, 0x2f, 0x00};
  std::vector<std::uint8_t> file = {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0,
                                    'M', 'T', 'r', 'k', 0, 0, 0, static_cast<std::uint8_t>(track.size())};
  file.insert(file.end(), track.begin(), track.end());
  std::vector<std::string> warnings;
  const Piece p = midi::parse_midi_file(file, &warnings);
  ASSERT_EQ(p.notes.size(), 2u);
  EXPECT_DOUBLE_EQ(p.notes[0].offset, 0.2);  // closed at final event time
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(MidiParse, Format2Unsupported) {
  std::vector<std::uint8_t> file = {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 2, 0, 1, 0x01, 0xe0};
  try {
    midi::parse_midi_file(file);
    FAIL() << "expected UnsupportedFormat";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unsupported_format);
  }
}

TEST(MidiParse, BadHeaderIsMalformed) {
  std::vector<std::uint8_t> file = {'M', 'T', 'x', 'd', 0, 0, 0, 6, 0, 0, 0, 0, 0x01, 0xe0};
  try {
    midi::parse_midi_file(file);
    FAIL() << "expected MalformedFile";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::malformed_file);
  }
}

TEST(MidiParse, RoundTripWithinOneTick) {
  Rng rng(4242);
  const double tick_sec = 0.5 / 480.0;
  for (int iter = 0; iter < 50; ++iter) {
    SmfSpec spec;
    const int n = uniform_int(rng, 1, 60);
    for (int i = 0; i < n; ++i) {
      Note note;
      note.pitch = uniform_int(rng, 21, 108);
      note.velocity = uniform_int(rng, 1, 127);
      note.onset = testutil::ms_grid(uniform_real(rng, 0.0, 20.0));
      note.offset = testutil::ms_grid(note.onset + uniform_real(rng, 0.05, 3.0));
      if (note.offset <= note.onset) note.offset = note.onset + 0.01;
      spec.notes.push_back(note);
    }
    sort_notes(spec.notes);
    // same-pitch overlaps cannot survive note-on/note-off pairing on one
    // channel; clip each note at the next onset of its own pitch
    for (std::size_t i = 0; i < spec.notes.size(); ++i)
      for (std::size_t j = i + 1; j < spec.notes.size(); ++j)
        if (spec.notes[j].pitch == spec.notes[i].pitch &&
            spec.notes[j].onset < spec.notes[i].offset)
          spec.notes[i].offset = spec.notes[j].onset;
    std::erase_if(spec.notes, [](const Note& m) { return m.offset - m.onset < 0.01; });
    if (spec.notes.empty()) continue;
    const Piece p = midi::parse_midi_file(midi::write_midi_file(spec));
    ASSERT_EQ(p.notes.size(), spec.notes.size());
    for (std::size_t i = 0; i < p.notes.size(); ++i) {
      EXPECT_EQ(p.notes[i].pitch, spec.notes[i].pitch);
      EXPECT_EQ(p.notes[i].velocity, spec.notes[i].velocity);
      EXPECT_LE(std::abs(p.notes[i].onset - spec.notes[i].onset), tick_sec);
      EXPECT_LE(std::abs(p.notes[i].offset - spec.notes[i].offset), tick_sec);
    }
  }
}

TEST(MidiParse, FuzzNeverCrashes) {
  Rng rng(777);
  const auto valid = single_note_file();
  int parsed = 0, rejected = 0;
  for (int iter = 0; iter < 3000; ++iter) {
    std::vector<std::uint8_t> bytes;
    if (iter % 2 == 0) {
      const int len = uniform_int(rng, 0, 120);
      for (int i = 0; i < len; ++i) bytes.push_back(static_cast<std::uint8_t>(uniform_u64(rng, 256)));
    } else {
      bytes = valid;
      const int flips = uniform_int(rng, 1, 6);
      for (int i = 0; i < flips; ++i)
        bytes[uniform_u64(rng, bytes.size())] = static_cast<std::uint8_t>(uniform_u64(rng, 256));
    }
    try {
      (void)midi::parse_midi_file(bytes);
      ++parsed;
    } catch (const Error&) {
      ++rejected;
    }
  }
  EXPECT_GT(rejected, 0);
  EXPECT_EQ(parsed + rejected, 3000);
}

TEST(BeatTsv, ParsesSimple) {
  const auto beats = midi::load_beat_tsv("0.00\t1\n0.50\t2");
  ASSERT_EQ(beats.size(), 2u);
  EXPECT_DOUBLE_EQ(beats[0].time, 0.0);
  EXPECT_EQ(beats[0].counter, 1);
  EXPECT_DOUBLE_EQ(beats[1].time, 0.5);
  EXPECT_EQ(beats[1].counter, 2);
}

TEST(BeatTsv, EmptyAndComments) {
  EXPECT_TRUE(midi::load_beat_tsv("").empty());
  EXPECT_TRUE(midi::load_beat_tsv("# only a comment\n\n").empty());
}

TEST(BeatTsv, NonMonotonicTime) {
  try {
    midi::load_beat_tsv("1.0\t1\n0.5\t2");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_monotonic_time);
  }
}

TEST(BeatTsv, NonNumericField) {
  try {
    midi::load_beat_tsv("abc\t1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::parse_error);
  }
}

TEST(BeatTsv, CounterOutOfRange) {
  try {
    midi::load_beat_tsv("0.5\t99");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::counter_out_of_range);
  }
}

TEST(BeatTsv, SaveLoadRoundTrip) {
  std::vector<BeatEvent> beats = {{0.0, 1}, {0.517, 2}, {1.033333, 0}};
  const auto loaded = midi::load_beat_tsv(midi::save_beat_tsv(beats));
  ASSERT_EQ(loaded.size(), beats.size());
  for (std::size_t i = 0; i < beats.size(); ++i) {
    EXPECT_NEAR(loaded[i].time, beats[i].time, 5e-7);
    EXPECT_EQ(loaded[i].counter, beats[i].counter);
  }
}
