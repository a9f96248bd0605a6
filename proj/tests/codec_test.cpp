#include "beatgrid/codec.hpp"

#include <gtest/gtest.h>

#include <map>

#include "helpers.hpp"

using namespace beatgrid;

namespace {

CodecConfig cfg_for(Scheme s, double step = 0.010, double L = 10.0) {
  CodecConfig c;
  c.scheme = s;
  c.step = step;
  c.segment_length = L;
  return c;
}

// The two-note example from the paper's encoding table.
Segment table_segment() {
  Segment seg;
  seg.piece_id = "t";
  seg.notes = {{55, 0.01, 0.44, 80}, {62, 0.44, 0.89, 74}};
  seg.beats = {{0.01, 1}, {0.44, 2}, {0.89, 3}};
  return seg;
}

}  // namespace

TEST(Quantize, NearestStep) {
  const auto cfg = cfg_for(Scheme::v2);
  EXPECT_EQ(quantize_time(0.014, cfg), 1);
  EXPECT_EQ(quantize_time(0.016, cfg), 2);
  EXPECT_EQ(quantize_time(0.0, cfg), 0);
  EXPECT_EQ(quantize_time(0.44, cfg), 44);
}

TEST(Quantize, TieRoundsHalfUp) {
  const auto cfg = cfg_for(Scheme::v2);
  EXPECT_EQ(quantize_time(0.015, cfg), 2);
  EXPECT_EQ(quantize_time(0.025, cfg), 3);
  EXPECT_EQ(quantize_time(0.125, cfg_for(Scheme::v2, 0.05)), 3);  // 2.5 steps
}

TEST(Quantize, WindowEndMapsToLastIndex) {
  const auto cfg = cfg_for(Scheme::v2);
  EXPECT_EQ(quantize_time(10.0, cfg), 999);
  EXPECT_EQ(quantize_time(9.9999, cfg), 999);
  EXPECT_THROW(quantize_time(10.1, cfg), Error);
  EXPECT_THROW(quantize_time(-0.001, cfg), Error);
}

TEST(Quantize, InverseIsIndexTimesStep) {
  const auto cfg = cfg_for(Scheme::v3, 0.02);
  for (int i : {0, 1, 7, 250, 499}) EXPECT_DOUBLE_EQ(dequantize_time(i, cfg), i * 0.02);
}

TEST(Vocabulary, SizeInventory) {
  // 4 reserved + 1000 time + 128 ON (+ scheme-dependent rest)
  EXPECT_EQ(build_vocabulary(cfg_for(Scheme::v1)).size(), 4 + 1000 + 128 + 12);       // 1144
  EXPECT_EQ(build_vocabulary(cfg_for(Scheme::v2)).size(), 4 + 1000 + 128 + 128 + 12); // 1272
  EXPECT_EQ(build_vocabulary(cfg_for(Scheme::v3)).size(), 4 + 1000 + 128 + 128 + 127 + 12);
  EXPECT_EQ(build_vocabulary(cfg_for(Scheme::v4)).size(), 4 + 1000 + 128 + 128 + 127 + 2);  // 1389
  EXPECT_EQ(build_vocabulary(cfg_for(Scheme::v5)).size(), 4 + 1000 + 128 + 128 + 2);
}

TEST(Vocabulary, TimeTokenCountIsLOverStep) {
  for (double step : {0.005, 0.010, 0.020, 0.050, 0.100, 0.200})
    for (double L : {5.0, 10.0, 15.0}) {
      const auto cfg = cfg_for(Scheme::v3, step, L);
      EXPECT_EQ(cfg.num_time_tokens(), static_cast<int>(std::round(L / step)));
    }
  EXPECT_EQ(cfg_for(Scheme::v3, 0.010, 10.0).num_time_tokens(), 1000);
}

TEST(Vocabulary, DeterministicIdAssignment) {
  const auto a = build_vocabulary(cfg_for(Scheme::v4, 0.05));
  const auto b = build_vocabulary(cfg_for(Scheme::v4, 0.05));
  ASSERT_EQ(a.size(), b.size());
  for (int id = 0; id < a.size(); ++id) EXPECT_EQ(a.token(id), b.token(id));
  EXPECT_EQ(a.token(kPadId).kind, TokenKind::pad);
  EXPECT_EQ(a.token(kBosId).kind, TokenKind::bos);
  EXPECT_EQ(a.token(kEosId).kind, TokenKind::eos);
  EXPECT_EQ(a.token(kUnkId).kind, TokenKind::unk);
}

TEST(Vocabulary, RejectsNonIntegralGrid) {
  CodecConfig c = cfg_for(Scheme::v1, 0.030);  // 10 / 0.03 is not integral
  EXPECT_THROW(build_vocabulary(c), Error);
}

TEST(Encode, TableRowV2) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v2));
  const auto in = encode_input(table_segment(), vocab);
  EXPECT_EQ(vocab.render(in),
            "ON⟨55⟩ T⟨0.01⟩ OFF⟨55⟩ T⟨0.44⟩ "
            "ON⟨62⟩ T⟨0.44⟩ OFF⟨62⟩ T⟨0.89⟩");
}

TEST(Encode, TableRowV3AddsVelocity) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v3));
  const auto in = encode_input(table_segment(), vocab);
  EXPECT_EQ(vocab.render(in),
            "ON⟨55⟩ T⟨0.01⟩ VEL⟨80⟩ OFF⟨55⟩ "
            "T⟨0.44⟩ ON⟨62⟩ T⟨0.44⟩ VEL⟨74⟩ "
            "OFF⟨62⟩ T⟨0.89⟩");
}

TEST(Encode, TableRowV1OnsetsOnly) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v1));
  const auto in = encode_input(table_segment(), vocab);
  EXPECT_EQ(vocab.render(in),
            "ON⟨55⟩ T⟨0.01⟩ ON⟨62⟩ T⟨0.44⟩");
}

TEST(Encode, CounterTargets) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v2));
  const auto tgt = encode_target(table_segment(), vocab);
  EXPECT_EQ(vocab.render(tgt),
            "BOS B⟨1⟩ T⟨0.01⟩ B⟨2⟩ T⟨0.44⟩ "
            "B⟨3⟩ T⟨0.89⟩ EOS");
}

TEST(Encode, FlagTargets) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v4));
  Segment seg = table_segment();
  seg.beats = {{0.01, 1}, {0.44, 2}};
  const auto tgt = encode_target(seg, vocab);
  EXPECT_EQ(vocab.render(tgt), "BOS DB T⟨0.01⟩ B T⟨0.44⟩ EOS");
}

TEST(Encode, OffBeforeOnAtEqualTime) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v2));
  const auto in = encode_input(table_segment(), vocab);
  // OFF<55> must precede ON<62> at T<0.44>, as in the reference row
  const std::string text = vocab.render(in);
  const auto off_pos = text.find("OFF⟨55⟩");
  const auto on_pos = text.find("ON⟨62⟩");
  ASSERT_NE(off_pos, std::string::npos);
  ASSERT_NE(on_pos, std::string::npos);
  EXPECT_LT(off_pos, on_pos);
}

TEST(Encode, CounterOverflowRejected) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v1));
  Segment seg = table_segment();
  seg.beats = {{0.5, 13}};
  try {
    encode_target(seg, vocab);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::counter_overflow);
  }
}

TEST(Encode, FiveMsRendersThreeDecimals) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v1, 0.005));
  EXPECT_EQ(vocab.render(vocab.time_id(3)), "T⟨0.015⟩");
}

TEST(Decode, InvertsFlagTargets) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v4));
  TokenSeq seq = {kBosId, vocab.downbeat_id(), vocab.time_id(1), vocab.beat_id(),
                  vocab.time_id(44), kEosId};
  const auto out = decode_beat_tokens(seq, vocab);
  EXPECT_EQ(out.discarded, 0);
  ASSERT_EQ(out.beats.size(), 2u);
  EXPECT_NEAR(out.beats[0].time, 0.01, 1e-12);
  EXPECT_EQ(out.beats[0].counter, 1);
  EXPECT_NEAR(out.beats[1].time, 0.44, 1e-12);
  EXPECT_EQ(out.beats[1].counter, 0);
}

TEST(Decode, EmptyTarget) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v4));
  EXPECT_TRUE(decode_beat_tokens({kBosId, kEosId}, vocab).beats.empty());
}

TEST(Decode, SkipsBeatTokenWithoutTime) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v2));
  TokenSeq seq = {kBosId, vocab.counter_id(2), vocab.counter_id(3), vocab.time_id(50), kEosId};
  const auto out = decode_beat_tokens(seq, vocab);
  ASSERT_EQ(out.beats.size(), 1u);
  EXPECT_NEAR(out.beats[0].time, 0.50, 1e-12);
  EXPECT_EQ(out.beats[0].counter, 3);
  EXPECT_EQ(out.discarded, 1);
}

TEST(Decode, RobustToGarbage) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v3));
  Rng rng(55);
  for (int iter = 0; iter < 500; ++iter) {
    TokenSeq junk;
    const int len = uniform_int(rng, 0, 60);
    for (int i = 0; i < len; ++i)
      junk.push_back(uniform_int(rng, -3, vocab.size() + 3));
    const auto out = decode_beat_tokens(junk, vocab);  // must not throw
    for (std::size_t i = 1; i < out.beats.size(); ++i)
      EXPECT_GT(out.beats[i].time, out.beats[i - 1].time);
  }
}

TEST(RoundTrip, BeatsSurviveAllSchemes) {
  Rng rng(2024);
  for (Scheme s : {Scheme::v1, Scheme::v2, Scheme::v3, Scheme::v4, Scheme::v5}) {
    for (double step : {0.005, 0.010, 0.020, 0.050}) {
      const auto vocab = build_vocabulary(cfg_for(s, step));
      for (int iter = 0; iter < 40; ++iter) {
        const Segment seg = testutil::random_segment(rng);
        const auto ex = encode_example(seg, vocab);
        const auto dec = decode_beat_tokens(ex.target, vocab);
        ASSERT_EQ(dec.beats.size(), seg.beats.size());
        for (std::size_t i = 0; i < seg.beats.size(); ++i) {
          EXPECT_LE(std::abs(dec.beats[i].time - seg.beats[i].time), step / 2 + 1e-9);
          if (scheme_flag_targets(s))
            EXPECT_EQ(dec.beats[i].counter, seg.beats[i].counter == 1 ? 1 : 0);
          else
            EXPECT_EQ(dec.beats[i].counter, seg.beats[i].counter);
        }
      }
    }
  }
}

TEST(Encode, InjectiveOnQuantizedSegments) {
  const auto vocab = build_vocabulary(cfg_for(Scheme::v3, 0.02));
  Rng rng(31337);
  std::map<std::pair<TokenSeq, TokenSeq>, Segment> seen;
  for (int iter = 0; iter < 400; ++iter) {
    const Segment seg = testutil::random_segment(rng);
    const auto ex = encode_example(seg, vocab);
    auto key = std::make_pair(ex.input, ex.target);
    auto [it, inserted] = seen.emplace(std::move(key), seg);
    if (!inserted) {
      // same tokens must mean same quantized content
      const Segment& other = it->second;
      ASSERT_EQ(seg.notes.size(), other.notes.size());
      for (std::size_t i = 0; i < seg.notes.size(); ++i)
        EXPECT_EQ(quantize_time(seg.notes[i].onset, vocab.config()),
                  quantize_time(other.notes[i].onset, vocab.config()));
    }
  }
}

TEST(Encode, TimeTokensMonotone) {
  Rng rng(8);
  const auto vocab = build_vocabulary(cfg_for(Scheme::v2, 0.01));
  for (int iter = 0; iter < 100; ++iter) {
    const auto ex = encode_example(testutil::random_segment(rng), vocab);
    int prev = -1;
    for (TokenId id : ex.input) {
      const Token& t = vocab.token(id);
      if (t.kind != TokenKind::time) continue;
      EXPECT_GE(t.value, prev);
      prev = t.value;
    }
  }
}
