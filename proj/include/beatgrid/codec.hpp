#pragma once

// Token codecs. Quantizes times onto a fixed grid and translates segments
// to/from the v1..v5 token alphabets:
//   v1 input: ON,T            target: B<c>,T
//   v2 input: ON,OFF,T        target: B<c>,T
//   v3 input: ON,OFF,VEL,T    target: B<c>,T
//   v4 input: ON,OFF,VEL,T    target: DB,B,T
//   v5 input: ON,OFF,T        target: DB,B,T
// Ids 0..3 are reserved for PAD/BOS/EOS/UNK; id assignment depends only on
// the CodecConfig.

#include <array>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <vector>

#include "beatgrid/pipeline.hpp"

namespace beatgrid {

enum class Scheme { v1, v2, v3, v4, v5 };

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::v1: return "v1";
    case Scheme::v2: return "v2";
    case Scheme::v3: return "v3";
    case Scheme::v4: return "v4";
    case Scheme::v5: return "v5";
  }
  return "?";
}

inline Scheme scheme_from_name(std::string_view name) {
  for (Scheme s : {Scheme::v1, Scheme::v2, Scheme::v3, Scheme::v4, Scheme::v5})
    if (name == scheme_name(s)) return s;
  raise(Errc::invalid_config, "unknown encoding scheme '" + std::string(name) + "'");
}

inline bool scheme_has_off(Scheme s) { return s != Scheme::v1; }
inline bool scheme_has_velocity(Scheme s) { return s == Scheme::v3 || s == Scheme::v4; }
// flag-style targets (DB/B) instead of explicit counters
inline bool scheme_flag_targets(Scheme s) { return s == Scheme::v4 || s == Scheme::v5; }

struct CodecConfig {
  Scheme scheme = Scheme::v3;
  double step = 0.010;          // quantization step, seconds
  double segment_length = 10.0; // seconds
  int max_counter = 12;

  int num_time_tokens() const {
    const double n = segment_length / step;
    const double rounded = std::round(n);
    require(std::abs(n - rounded) < 1e-6 && rounded >= 1, Errc::invalid_config,
            "segment_length must be an integer multiple of step");
    return static_cast<int>(rounded);
  }
  void validate() const {
    require(step > 0 && segment_length > 0, Errc::invalid_config, "step and length must be > 0");
    (void)num_time_tokens();
    require(max_counter >= 1, Errc::invalid_config, "max_counter must be >= 1");
  }
};

// Nearest grid index for a time in [0, L]; exact half-step ties round up.
// t == L (a clipped note offset) maps to the last index.
inline int quantize_time(double t, const CodecConfig& cfg) {
  const int n = cfg.num_time_tokens();
  require(t >= 0.0 && t <= cfg.segment_length + 1e-9, Errc::out_of_window,
          "time " + std::to_string(t) + " outside [0, " + std::to_string(cfg.segment_length) + "]");
  // 1e-9 absorbs FP error in t/step so that true ties land on the upper index
  const int idx = static_cast<int>(std::floor(t / cfg.step + 0.5 + 1e-9));
  return std::min(idx, n - 1);
}

inline double dequantize_time(int index, const CodecConfig& cfg) {
  require(index >= 0 && index < cfg.num_time_tokens(), Errc::out_of_window, "bad time index");
  return index * cfg.step;
}

enum class TokenKind { pad, bos, eos, unk, time, on, off, vel, beat_counter, beat, downbeat };

struct Token {
  TokenKind kind;
  int value;  // time index, pitch, velocity, or counter; 0 otherwise

  friend bool operator==(const Token&, const Token&) = default;
};

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

constexpr TokenId kPadId = 0;
constexpr TokenId kBosId = 1;
constexpr TokenId kEosId = 2;
constexpr TokenId kUnkId = 3;

class Vocabulary {
 public:
  explicit Vocabulary(const CodecConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    tokens_ = {{TokenKind::pad, 0}, {TokenKind::bos, 0}, {TokenKind::eos, 0}, {TokenKind::unk, 0}};
    const int nt = cfg.num_time_tokens();
    time_base_ = static_cast<int>(tokens_.size());
    for (int i = 0; i < nt; ++i) tokens_.push_back({TokenKind::time, i});
    on_base_ = static_cast<int>(tokens_.size());
    for (int p = 0; p <= 127; ++p) tokens_.push_back({TokenKind::on, p});
    if (scheme_has_off(cfg.scheme)) {
      off_base_ = static_cast<int>(tokens_.size());
      for (int p = 0; p <= 127; ++p) tokens_.push_back({TokenKind::off, p});
    }
    if (scheme_has_velocity(cfg.scheme)) {
      vel_base_ = static_cast<int>(tokens_.size());
      for (int v = 1; v <= 127; ++v) tokens_.push_back({TokenKind::vel, v});
    }
    if (scheme_flag_targets(cfg.scheme)) {
      beat_id_ = static_cast<int>(tokens_.size());
      tokens_.push_back({TokenKind::beat, 0});
      downbeat_id_ = static_cast<int>(tokens_.size());
      tokens_.push_back({TokenKind::downbeat, 0});
    } else {
      counter_base_ = static_cast<int>(tokens_.size());
      for (int c = 1; c <= cfg.max_counter; ++c) tokens_.push_back({TokenKind::beat_counter, c});
    }
  }

  const CodecConfig& config() const { return cfg_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  const Token& token(TokenId id) const {
    require(id >= 0 && id < size(), Errc::out_of_window, "token id out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  TokenId time_id(int index) const {
    require(index >= 0 && index < cfg_.num_time_tokens(), Errc::out_of_window, "bad time index");
    return time_base_ + index;
  }
  TokenId on_id(int pitch) const { return checked(on_base_, pitch, 0, 127, "pitch"); }
  TokenId off_id(int pitch) const {
    require(off_base_ >= 0, Errc::invalid_config, "scheme has no OFF tokens");
    return checked(off_base_, pitch, 0, 127, "pitch");
  }
  TokenId vel_id(int velocity) const {
    require(vel_base_ >= 0, Errc::invalid_config, "scheme has no VEL tokens");
    return checked(vel_base_, velocity - 1, 0, 126, "velocity");
  }
  TokenId counter_id(int counter) const {
    require(counter_base_ >= 0, Errc::invalid_config, "scheme has no counter tokens");
    require(counter >= 1 && counter <= cfg_.max_counter, Errc::counter_overflow,
            "beat counter " + std::to_string(counter) + " exceeds max " +
                std::to_string(cfg_.max_counter));
    return counter_base_ + counter - 1;
  }
  TokenId beat_id() const {
    require(beat_id_ >= 0, Errc::invalid_config, "scheme has no flag tokens");
    return beat_id_;
  }
  TokenId downbeat_id() const {
    require(downbeat_id_ >= 0, Errc::invalid_config, "scheme has no flag tokens");
    return downbeat_id_;
  }

  // Canonical text rendering ("ON<55>", "T<0.44>"); seconds get two decimals
  // at steps >= 10 ms and three below.
  std::string render(TokenId id) const {
    const Token& t = token(id);
    char buf[48];
    const char* fmt = cfg_.step < 0.01 - 1e-12 ? "T⟨%.3f⟩" : "T⟨%.2f⟩";
    switch (t.kind) {
      case TokenKind::pad: return "PAD";
      case TokenKind::bos: return "BOS";
      case TokenKind::eos: return "EOS";
      case TokenKind::unk: return "UNK";
      case TokenKind::time:
        std::snprintf(buf, sizeof(buf), fmt, t.value * cfg_.step);
        return buf;
      case TokenKind::on:
        std::snprintf(buf, sizeof(buf), "ON⟨%d⟩", t.value);
        return buf;
      case TokenKind::off:
        std::snprintf(buf, sizeof(buf), "OFF⟨%d⟩", t.value);
        return buf;
      case TokenKind::vel:
        std::snprintf(buf, sizeof(buf), "VEL⟨%d⟩", t.value);
        return buf;
      case TokenKind::beat_counter:
        std::snprintf(buf, sizeof(buf), "B⟨%d⟩", t.value);
        return buf;
      case TokenKind::beat: return "B";
      case TokenKind::downbeat: return "DB";
    }
    return "?";
  }

  std::string render(const TokenSeq& seq) const {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out += ' ';
      out += render(seq[i]);
    }
    return out;
  }

 private:
  TokenId checked(int base, int v, int lo, int hi, const char* what) const {
    require(v >= lo && v <= hi, Errc::out_of_window, std::string("bad ") + what);
    return base + (v - lo);
  }

  CodecConfig cfg_;
  std::vector<Token> tokens_;
  int time_base_ = -1;
  int on_base_ = -1;
  int off_base_ = -1;
  int vel_base_ = -1;
  int counter_base_ = -1;
  int beat_id_ = -1;
  int downbeat_id_ = -1;
};

inline Vocabulary build_vocabulary(const CodecConfig& cfg) { return Vocabulary(cfg); }

namespace detail {

struct NoteEvent {
  int time_idx;
  int kind;  // 0 = OFF, 1 = ON; OFF sorts first at equal time
  int pitch;
  int velocity;
};

inline std::vector<NoteEvent> quantized_events(const Segment& seg, const CodecConfig& cfg) {
  std::vector<NoteEvent> ev;
  ev.reserve(seg.notes.size() * 2);
  for (const auto& n : seg.notes) {
    ev.push_back({quantize_time(n.onset, cfg), 1, n.pitch, n.velocity});
    if (scheme_has_off(cfg.scheme)) ev.push_back({quantize_time(n.offset, cfg), 0, n.pitch, 0});
  }
  std::sort(ev.begin(), ev.end(), [](const NoteEvent& a, const NoteEvent& b) {
    if (a.time_idx != b.time_idx) return a.time_idx < b.time_idx;
    if (a.kind != b.kind) return a.kind < b.kind;
    if (a.pitch != b.pitch) return a.pitch < b.pitch;
    return a.velocity < b.velocity;
  });
  return ev;
}

}  // namespace detail

inline TokenSeq encode_input(const Segment& seg, const Vocabulary& vocab) {
  const CodecConfig& cfg = vocab.config();
  TokenSeq out;
  for (const auto& e : detail::quantized_events(seg, cfg)) {
    if (e.kind == 1) {
      out.push_back(vocab.on_id(e.pitch));
      out.push_back(vocab.time_id(e.time_idx));
      if (scheme_has_velocity(cfg.scheme)) out.push_back(vocab.vel_id(e.velocity));
    } else {
      out.push_back(vocab.off_id(e.pitch));
      out.push_back(vocab.time_id(e.time_idx));
    }
  }
  return out;
}

// Target grammar: BOS (beat-token T<t>)* EOS, beats in time order.
inline TokenSeq encode_target(const Segment& seg, const Vocabulary& vocab) {
  const CodecConfig& cfg = vocab.config();
  TokenSeq out;
  out.push_back(kBosId);
  for (const auto& b : seg.beats) {
    if (scheme_flag_targets(cfg.scheme)) {
      out.push_back(b.counter == 1 ? vocab.downbeat_id() : vocab.beat_id());
    } else {
      require(b.counter >= 1, Errc::counter_out_of_range,
              "counter-style target needs counters >= 1");
      out.push_back(vocab.counter_id(b.counter));
    }
    out.push_back(vocab.time_id(quantize_time(b.time, cfg)));
  }
  out.push_back(kEosId);
  return out;
}

struct EncodedExample {
  TokenSeq input;
  TokenSeq target;
};

inline EncodedExample encode_example(const Segment& seg, const Vocabulary& vocab) {
  return {encode_input(seg, vocab), encode_target(seg, vocab)};
}

struct DecodedBeats {
  std::vector<BeatEvent> beats;
  int discarded = 0;

  friend bool operator==(const DecodedBeats&, const DecodedBeats&) = default;
};

// Lenient inverse of the target grammar; must survive arbitrary model output.
// Scans for (beat-token, time-token) pairs: counter tokens keep their value,
// DB maps to counter 1 and bare B to counter 0. Beat tokens lacking a time
// token and events duplicating an already-emitted time (within one step) are
// skipped and counted.
inline DecodedBeats decode_beat_tokens(const TokenSeq& target, const Vocabulary& vocab) {
  DecodedBeats out;
  const double step = vocab.config().step;
  std::vector<BeatEvent> raw;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] < 0 || target[i] >= vocab.size()) {
      ++out.discarded;
      continue;
    }
    const Token& t = vocab.token(target[i]);
    int counter;
    if (t.kind == TokenKind::beat_counter) counter = t.value;
    else if (t.kind == TokenKind::downbeat) counter = 1;
    else if (t.kind == TokenKind::beat) counter = 0;
    else continue;

    if (i + 1 < target.size() && target[i + 1] >= 0 && target[i + 1] < vocab.size() &&
        vocab.token(target[i + 1]).kind == TokenKind::time) {
      raw.push_back({vocab.token(target[i + 1]).value * step, counter});
      ++i;
    } else {
      ++out.discarded;  // beat token without a time token
    }
  }
  std::stable_sort(raw.begin(), raw.end(),
                   [](const BeatEvent& a, const BeatEvent& b) { return a.time < b.time; });
  for (const auto& b : raw) {
    if (!out.beats.empty() && b.time - out.beats.back().time < step - 1e-12) {
      ++out.discarded;  // duplicate within one quantization step
      continue;
    }
    out.beats.push_back(b);
  }
  return out;
}

}  // namespace beatgrid
