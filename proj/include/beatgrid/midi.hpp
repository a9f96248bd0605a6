#pragma once

// Standard MIDI File ingestion: formats 0 and 1, big-endian chunk framing,
// variable-length delta times, running status. Notes come out in seconds via
// the tempo map; beats are derived from tempo + time-signature meta events as
// metronome clicks with the counter restarting at every bar line.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "beatgrid/types.hpp"

namespace beatgrid::midi {

struct TempoChange {
  std::int64_t tick = 0;
  std::uint32_t us_per_quarter = 500000;  // default 120 BPM
};

struct TimeSigChange {
  std::int64_t tick = 0;
  int numerator = 4;
  int denominator = 4;
};

// Piecewise-linear tick -> seconds conversion over a sorted tempo map.
class TempoMap {
 public:
  TempoMap() : TempoMap({}, 480) {}
  TempoMap(std::vector<TempoChange> changes, int ppq) : ppq_(ppq) {
    if (changes.empty() || changes.front().tick != 0)
      changes.insert(changes.begin(), TempoChange{0, 500000});
    // later entries win on tick collisions
    std::stable_sort(changes.begin(), changes.end(),
                     [](const TempoChange& a, const TempoChange& b) { return a.tick < b.tick; });
    double sec = 0.0;
    for (std::size_t i = 0; i < changes.size(); ++i) {
      if (!starts_.empty() && changes[i].tick == starts_.back().tick) {
        starts_.back().us = changes[i].us_per_quarter;
        continue;
      }
      if (!starts_.empty()) {
        const auto& prev = starts_.back();
        sec += static_cast<double>(changes[i].tick - prev.tick) * prev.us / (1e6 * ppq_);
      }
      starts_.push_back({changes[i].tick, changes[i].us_per_quarter, sec});
    }
  }

  double seconds_at(double tick) const {
    const Entry* e = &starts_.front();
    for (const auto& s : starts_) {
      if (s.tick <= tick) e = &s;
      else break;
    }
    return e->sec + (tick - e->tick) * e->us / (1e6 * ppq_);
  }

  // Nearest tick for a time; used by the writer.
  std::int64_t tick_at(double sec) const {
    const Entry* e = &starts_.front();
    for (const auto& s : starts_) {
      if (s.sec <= sec + 1e-12) e = &s;
      else break;
    }
    const double tick = e->tick + (sec - e->sec) * 1e6 * ppq_ / e->us;
    return static_cast<std::int64_t>(std::llround(tick));
  }

  int ppq() const { return ppq_; }

 private:
  struct Entry {
    std::int64_t tick;
    std::uint32_t us;
    double sec;
  };
  int ppq_;
  std::vector<Entry> starts_;
};

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  void need(std::size_t n) const {
    require(remaining() >= n, Errc::malformed_file, "unexpected end of file");
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint8_t peek() const {
    need(1);
    return data_[pos_];
  }
  std::uint16_t be16() {
    need(2);
    std::uint16_t v = (std::uint16_t(data_[pos_]) << 8) | data_[pos_ + 1];
    pos_ += 2;
    return v;
  }
  std::uint32_t be32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_ + i];
    pos_ += 4;
    return v;
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    raise(Errc::malformed_file, "variable-length quantity longer than 4 bytes");
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

struct RawNote {
  std::int64_t on_tick;
  std::int64_t off_tick;
  int pitch;
  int velocity;
};

}  // namespace detail

struct ParseOptions {
  // Fallback when the file carries no time-signature meta event.
  int default_numerator = 4;
  int default_denominator = 4;
};

// Beat grid construction: walk bars from tick 0 under the active time
// signature; each bar emits counters 1..numerator; a signature change starts
// a new bar at its tick. Beats strictly before end_tick are kept.
inline std::vector<BeatEvent> beats_from_meta(const TempoMap& tempo,
                                              std::vector<TimeSigChange> sigs, double end_tick,
                                              const ParseOptions& opt = {}) {
  if (sigs.empty() || sigs.front().tick != 0)
    sigs.insert(sigs.begin(), TimeSigChange{0, opt.default_numerator, opt.default_denominator});
  std::stable_sort(sigs.begin(), sigs.end(),
                   [](const TimeSigChange& a, const TimeSigChange& b) { return a.tick < b.tick; });
  std::vector<BeatEvent> beats;
  double bar_start = 0.0;
  std::size_t si = 0;
  while (bar_start < end_tick) {
    while (si + 1 < sigs.size() && static_cast<double>(sigs[si + 1].tick) <= bar_start + 1e-9) ++si;
    const auto& sig = sigs[si];
    const double beat_len = tempo.ppq() * 4.0 / sig.denominator;
    double bar_end = bar_start + beat_len * sig.numerator;
    if (si + 1 < sigs.size())
      bar_end = std::min(bar_end, static_cast<double>(sigs[si + 1].tick));  // mid-bar change
    for (int c = 1; c <= sig.numerator; ++c) {
      const double t = bar_start + (c - 1) * beat_len;
      if (t >= bar_end || t >= end_tick) break;
      beats.push_back({tempo.seconds_at(t), c});
    }
    bar_start = bar_end;
  }
  return beats;
}

// Parse an SMF byte stream into a Piece. All channels are merged; a note-on
// with velocity 0 is a note-off; a second note-on on an open (track, channel,
// pitch) closes the first; note-ons still open at end of track are closed at
// the track's final event time and reported through `warnings`.
inline Piece parse_midi_file(std::span<const std::uint8_t> bytes,
                             std::vector<std::string>* warnings = nullptr,
                             const ParseOptions& opt = {}) {
  detail::ByteReader r(bytes);
  auto warn = [&](const std::string& m) {
    if (warnings) warnings->push_back(m);
  };

  require(r.remaining() >= 14, Errc::malformed_file, "file shorter than SMF header");
  require(r.be32() == 0x4d546864u, Errc::malformed_file, "missing MThd chunk");  // "MThd"
  const std::uint32_t hlen = r.be32();
  require(hlen >= 6, Errc::malformed_file, "header chunk too short");
  const std::uint16_t format = r.be16();
  const std::uint16_t ntrks = r.be16();
  const std::uint16_t division = r.be16();
  r.skip(hlen - 6);
  require(format <= 2, Errc::malformed_file, "unknown SMF format");
  require(format != 2, Errc::unsupported_format, "SMF format 2 not supported");
  require((division & 0x8000u) == 0, Errc::unsupported_format, "SMPTE time division not supported");
  const int ppq = division & 0x7fff;
  require(ppq > 0, Errc::malformed_file, "zero ticks per quarter");

  std::vector<TempoChange> tempos;
  std::vector<TimeSigChange> sigs;
  std::vector<detail::RawNote> raw_notes;
  std::int64_t max_note_tick = -1;
  std::int64_t max_event_tick = 0;

  std::uint16_t tracks_seen = 0;
  while (tracks_seen < ntrks) {
    require(r.remaining() >= 8, Errc::malformed_file, "missing track chunk");
    const std::uint32_t chunk_id = r.be32();
    const std::uint32_t chunk_len = r.be32();
    r.need(chunk_len);
    const std::size_t chunk_end = r.pos() + chunk_len;
    if (chunk_id != 0x4d54726bu) {  // not "MTrk": alien chunk, skip
      r.skip(chunk_len);
      continue;
    }
    ++tracks_seen;

    // (channel, pitch) -> (tick, velocity) of the open note
    std::map<std::pair<int, int>, std::pair<std::int64_t, int>> open;
    std::int64_t tick = 0;
    int running_status = -1;
    bool ended = false;
    while (r.pos() < chunk_end && !ended) {
      tick += r.vlq();
      int status = r.peek();
      if (status & 0x80) {
        r.u8();
      } else {
        require(running_status >= 0, Errc::malformed_file, "data byte without running status");
        status = running_status;
      }

      if (status == 0xff) {  // meta
        running_status = -1;
        const std::uint8_t type = r.u8();
        const std::uint32_t len = r.vlq();
        r.need(len);
        const std::size_t data_pos = r.pos();
        if (type == 0x51) {
          require(len == 3, Errc::malformed_file, "bad tempo meta length");
          std::uint32_t us = 0;
          for (int i = 0; i < 3; ++i) us = (us << 8) | r.u8();
          require(us > 0, Errc::malformed_file, "zero tempo");
          tempos.push_back({tick, us});
        } else if (type == 0x58) {
          require(len >= 2, Errc::malformed_file, "bad time-signature meta length");
          const int num = r.u8();
          const int denom_pow = r.u8();
          require(num >= 1 && denom_pow <= 30, Errc::malformed_file, "bad time signature");
          sigs.push_back({tick, num, 1 << denom_pow});
        } else if (type == 0x2f) {
          ended = true;
        }
        const std::size_t consumed = r.pos() - data_pos;
        r.skip(len - consumed);
        max_event_tick = std::max(max_event_tick, tick);
      } else if (status == 0xf0 || status == 0xf7) {  // sysex
        running_status = -1;
        r.skip(r.vlq());
      } else {
        require(status >= 0x80 && status < 0xf0, Errc::malformed_file, "bad status byte");
        running_status = status;
        const int kind = status >> 4;
        const int channel = status & 0x0f;
        const int d1 = r.u8();
        require(d1 < 0x80, Errc::malformed_file, "data byte with high bit set");
        int d2 = 0;
        if (kind != 0xc && kind != 0xd) {
          d2 = r.u8();
          require(d2 < 0x80, Errc::malformed_file, "data byte with high bit set");
        }
        max_event_tick = std::max(max_event_tick, tick);
        const bool is_on = kind == 0x9 && d2 > 0;
        const bool is_off = kind == 0x8 || (kind == 0x9 && d2 == 0);
        if (is_on) {
          const auto key = std::make_pair(channel, d1);
          if (auto it = open.find(key); it != open.end()) {
            // overlapping same-pitch note: the new on closes the old one
            if (tick > it->second.first)
              raw_notes.push_back({it->second.first, tick, d1, it->second.second});
            open.erase(it);
          }
          open[key] = {tick, d2};
          max_note_tick = std::max(max_note_tick, tick);
        } else if (is_off) {
          const auto key = std::make_pair(channel, d1);
          if (auto it = open.find(key); it != open.end()) {
            if (tick > it->second.first)
              raw_notes.push_back({it->second.first, tick, d1, it->second.second});
            open.erase(it);
          }
          max_note_tick = std::max(max_note_tick, tick);
        }
      }
    }
    if (!open.empty()) {
      warn("track with " + std::to_string(open.size()) +
           " dangling note-on(s); closed at final event time");
      for (const auto& [key, v] : open) {
        if (max_event_tick > v.first) raw_notes.push_back({v.first, max_event_tick, key.second, v.second});
      }
    }
    // trailing bytes after end-of-track are within the declared chunk length
    require(r.pos() <= chunk_end, Errc::malformed_file, "track event ran past chunk boundary");
    r.skip(chunk_end - r.pos());
  }

  TempoMap tempo(tempos, ppq);
  Piece piece;
  piece.notes.reserve(raw_notes.size());
  for (const auto& rn : raw_notes) {
    Note n;
    n.pitch = rn.pitch;
    n.velocity = rn.velocity;
    n.onset = tempo.seconds_at(static_cast<double>(rn.on_tick));
    n.offset = tempo.seconds_at(static_cast<double>(rn.off_tick));
    piece.notes.push_back(n);
  }
  sort_notes(piece.notes);

  const double end_tick =
      max_note_tick >= 0 ? static_cast<double>(max_note_tick) : static_cast<double>(max_event_tick);
  piece.beats = beats_from_meta(tempo, sigs, end_tick, opt);
  return piece;
}

// ---------------------------------------------------------------------------
// SMF writer (format 0). Used by the synthetic-corpus generator and by
// round-trip tests. Note times are seconds; they are mapped to the nearest
// tick under the given tempo map.
// ---------------------------------------------------------------------------

struct SmfSpec {
  int ppq = 480;
  std::vector<TempoChange> tempos;      // empty -> 120 BPM constant
  std::vector<TimeSigChange> time_sigs; // empty -> 4/4
  std::vector<Note> notes;
};

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back((v >> (8 * i)) & 0xff);
}
inline void put_be16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(v >> 8);
  out.push_back(v & 0xff);
}
inline void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t bytes[4];
  int n = 0;
  do {
    bytes[n++] = v & 0x7f;
    v >>= 7;
  } while (v != 0);
  for (int i = n - 1; i > 0; --i) out.push_back(bytes[i] | 0x80);
  out.push_back(bytes[0]);
}

struct WriterEvent {
  std::int64_t tick;
  int order;  // tempo/sig first, then note-offs before note-ons at a tick
  std::vector<std::uint8_t> payload;
};

}  // namespace detail

inline std::vector<std::uint8_t> write_midi_file(const SmfSpec& spec) {
  TempoMap tempo(spec.tempos, spec.ppq);
  std::vector<detail::WriterEvent> events;

  auto tempos = spec.tempos;
  if (tempos.empty()) tempos.push_back({0, 500000});
  for (const auto& t : tempos) {
    detail::WriterEvent e{t.tick, 0, {0xff, 0x51, 0x03}};
    e.payload.push_back((t.us_per_quarter >> 16) & 0xff);
    e.payload.push_back((t.us_per_quarter >> 8) & 0xff);
    e.payload.push_back(t.us_per_quarter & 0xff);
    events.push_back(std::move(e));
  }
  auto sigs = spec.time_sigs;
  if (sigs.empty()) sigs.push_back({0, 4, 4});
  for (const auto& s : sigs) {
    int pow = 0;
    while ((1 << pow) < s.denominator) ++pow;
    events.push_back({s.tick, 0, {0xff, 0x58, 0x04, static_cast<std::uint8_t>(s.numerator),
                                  static_cast<std::uint8_t>(pow), 24, 8}});
  }
  std::int64_t last_tick = 0;
  for (const auto& n : spec.notes) {
    validate_note(n);
    const std::int64_t on = tempo.tick_at(n.onset);
    std::int64_t off = tempo.tick_at(n.offset);
    if (off <= on) off = on + 1;
    events.push_back({on, 2, {0x90, static_cast<std::uint8_t>(n.pitch),
                              static_cast<std::uint8_t>(n.velocity)}});
    events.push_back({off, 1, {0x80, static_cast<std::uint8_t>(n.pitch), 0x40}});
    last_tick = std::max(last_tick, off);
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const detail::WriterEvent& a, const detail::WriterEvent& b) {
                     if (a.tick != b.tick) return a.tick < b.tick;
                     return a.order < b.order;
                   });

  std::vector<std::uint8_t> track;
  std::int64_t prev = 0;
  for (const auto& e : events) {
    detail::put_vlq(track, static_cast<std::uint32_t>(e.tick - prev));
    prev = e.tick;
    track.insert(track.end(), e.payload.begin(), e.payload.end());
  }
  detail::put_vlq(track, static_cast<std::uint32_t>(last_tick - prev));
  track.insert(track.end(), {0xff, 0x2f, 0x00});

  std::vector<std::uint8_t> out;
  detail::put_be32(out, 0x4d546864u);
  detail::put_be32(out, 6);
  detail::put_be16(out, 0);  // format 0
  detail::put_be16(out, 1);
  detail::put_be16(out, static_cast<std::uint16_t>(spec.ppq));
  detail::put_be32(out, 0x4d54726bu);
  detail::put_be32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

// ---------------------------------------------------------------------------
// Beat TSV: UTF-8, `#` comments, `time<TAB>counter` per line, times strictly
// increasing. counter 0 is accepted and means "beat, bar position unknown"
// (the flag form written by the inference path).
// ---------------------------------------------------------------------------

inline std::vector<BeatEvent> load_beat_tsv(std::string_view text, int max_counter = 12) {
  std::vector<BeatEvent> beats;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;

    const std::size_t tab = line.find('\t');
    require(tab != std::string_view::npos, Errc::parse_error,
            "line " + std::to_string(line_no) + ": expected time<TAB>counter");
    const std::string time_s(line.substr(0, tab));
    const std::string counter_s(line.substr(tab + 1));
    require(counter_s.find('\t') == std::string::npos, Errc::parse_error,
            "line " + std::to_string(line_no) + ": too many fields");
    double t = 0;
    long c = 0;
    try {
      std::size_t used = 0;
      t = std::stod(time_s, &used);
      require(used == time_s.size(), Errc::parse_error, "trailing characters in time");
      c = std::stol(counter_s, &used);
      require(used == counter_s.size(), Errc::parse_error, "trailing characters in counter");
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      raise(Errc::parse_error, "line " + std::to_string(line_no) + ": non-numeric field");
    }
    require(std::isfinite(t) && t >= 0.0, Errc::parse_error,
            "line " + std::to_string(line_no) + ": bad time value");
    require(c >= 0 && c <= max_counter, Errc::counter_out_of_range,
            "line " + std::to_string(line_no) + ": counter " + std::to_string(c));
    if (!beats.empty())
      require(t > beats.back().time, Errc::non_monotonic_time,
              "line " + std::to_string(line_no) + ": time not increasing");
    beats.push_back({t, static_cast<int>(c)});
  }
  return beats;
}

inline std::string save_beat_tsv(const std::vector<BeatEvent>& beats) {
  std::ostringstream os;
  os << "# time\tcounter\n";
  char buf[64];
  for (const auto& b : beats) {
    std::snprintf(buf, sizeof(buf), "%.6f\t%d\n", b.time, b.counter);
    os << buf;
  }
  return os.str();
}

}  // namespace beatgrid::midi
