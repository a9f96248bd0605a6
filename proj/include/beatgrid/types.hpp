#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "beatgrid/common.hpp"

namespace beatgrid {

// A sounding event. Times are absolute seconds within the containing piece
// (or window-relative once segmented).
struct Note {
  int pitch = 0;      // MIDI note number, 0..127
  double onset = 0;   // seconds
  double offset = 0;  // seconds, > onset
  int velocity = 64;  // 1..127

  friend bool operator==(const Note&, const Note&) = default;
};

// An annotated beat. counter is the 1-based position within the bar
// (1 = downbeat). counter 0 marks a beat whose bar position is unknown,
// which happens for predictions decoded from flag-style targets.
struct BeatEvent {
  double time = 0;  // seconds
  int counter = 0;

  bool is_downbeat() const { return counter == 1; }
  friend bool operator==(const BeatEvent&, const BeatEvent&) = default;
};

struct Piece {
  std::string id;
  std::vector<Note> notes;       // sorted by (onset, pitch)
  std::vector<BeatEvent> beats;  // sorted by time, strictly increasing
};

inline bool note_order(const Note& a, const Note& b) {
  if (a.onset != b.onset) return a.onset < b.onset;
  return a.pitch < b.pitch;
}

inline void sort_notes(std::vector<Note>& notes) {
  std::stable_sort(notes.begin(), notes.end(), note_order);
}

inline void sort_beats(std::vector<BeatEvent>& beats) {
  std::stable_sort(beats.begin(), beats.end(),
                   [](const BeatEvent& a, const BeatEvent& b) { return a.time < b.time; });
}

inline void validate_note(const Note& n) {
  require(n.pitch >= 0 && n.pitch <= 127, Errc::parse_error, "pitch out of range");
  require(n.velocity >= 1 && n.velocity <= 127, Errc::parse_error, "velocity out of range");
  require(std::isfinite(n.onset) && std::isfinite(n.offset) && n.onset >= 0.0, Errc::parse_error,
          "non-finite or negative note time");
  require(n.offset > n.onset, Errc::parse_error, "note offset must exceed onset");
}

inline void validate_piece(const Piece& p) {
  for (const auto& n : p.notes) validate_note(n);
  for (std::size_t i = 0; i < p.notes.size(); ++i) {
    if (i > 0)
      require(!note_order(p.notes[i], p.notes[i - 1]), Errc::unsorted_input, "notes not sorted");
  }
  double prev = -1.0;
  for (const auto& b : p.beats) {
    require(std::isfinite(b.time) && b.time >= 0.0, Errc::parse_error, "bad beat time");
    require(b.counter >= 0, Errc::counter_out_of_range, "negative beat counter");
    require(b.time > prev, Errc::non_monotonic_time, "beat times must strictly increase");
    prev = b.time;
  }
}

}  // namespace beatgrid
