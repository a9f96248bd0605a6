#pragma once

// Test-only helpers and independent oracles. Everything here deliberately
// reimplements library behavior through a different route so tests do not
// just compare the implementation with itself.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "beatgrid/common.hpp"
#include "beatgrid/midi.hpp"
#include "beatgrid/pipeline.hpp"

namespace testutil {

using beatgrid::BeatEvent;
using beatgrid::Note;
using beatgrid::Rng;
using beatgrid::Segment;

// Independent tick -> seconds integrator: naive event-by-event accumulation
// over the sorted tempo change list (the library uses precomputed prefix
// sums instead).
inline double oracle_tick_to_seconds(std::int64_t tick,
                                     std::vector<beatgrid::midi::TempoChange> tempos, int ppq) {
  if (tempos.empty() || tempos.front().tick != 0)
    tempos.insert(tempos.begin(), {0, 500000});
  std::sort(tempos.begin(), tempos.end(),
            [](const auto& a, const auto& b) { return a.tick < b.tick; });
  double sec = 0.0;
  for (std::size_t i = 0; i < tempos.size(); ++i) {
    const std::int64_t seg_start = tempos[i].tick;
    const std::int64_t seg_end = i + 1 < tempos.size() ? tempos[i + 1].tick : tick;
    if (seg_start >= tick) break;
    const std::int64_t span = std::min(seg_end, tick) - seg_start;
    if (span > 0) sec += static_cast<double>(span) * tempos[i].us_per_quarter / (1e6 * ppq);
  }
  return sec;
}

// Max-cardinality bipartite matching by augmenting paths; edges connect
// events within tolerance. Quadratic and only for small instances.
inline int brute_force_matching(const std::vector<double>& ref, const std::vector<double>& est,
                                double tol) {
  const int n = static_cast<int>(ref.size());
  const int m = static_cast<int>(est.size());
  std::vector<int> match_est(static_cast<std::size_t>(m), -1);
  std::vector<char> visited;
  std::function<bool(int)> try_assign = [&](int i) -> bool {
    for (int j = 0; j < m; ++j) {
      if (visited[static_cast<std::size_t>(j)]) continue;
      if (std::abs(ref[static_cast<std::size_t>(i)] - est[static_cast<std::size_t>(j)]) > tol)
        continue;
      visited[static_cast<std::size_t>(j)] = 1;
      if (match_est[static_cast<std::size_t>(j)] < 0 ||
          try_assign(match_est[static_cast<std::size_t>(j)])) {
        match_est[static_cast<std::size_t>(j)] = i;
        return true;
      }
    }
    return false;
  };
  int total = 0;
  for (int i = 0; i < n; ++i) {
    visited.assign(static_cast<std::size_t>(m), 0);
    if (try_assign(i)) ++total;
  }
  return total;
}

inline double ms_grid(double v) { return std::round(v * 1000.0) / 1000.0; }

struct RandomSegmentOptions {
  double segment_length = 10.0;
  int min_notes = 1;
  int max_notes = 40;
  int min_beats = 1;
  int max_beats = 24;
  double min_beat_gap = 0.25;
  double max_beat_gap = 1.0;
  // beats stay clear of the window end so the coarsest quantization grid can
  // still represent them within half a step
  double beat_margin = 0.12;
  int pitch_low = 21;
  int pitch_high = 108;
};

// Seeded random segment with all times on the millisecond grid.
inline Segment random_segment(Rng& rng, const RandomSegmentOptions& o = {}) {
  Segment seg;
  seg.piece_id = "rand";
  seg.index = 0;
  const double L = o.segment_length;

  const int bar = beatgrid::uniform_int(rng, 3, 4);
  int counter = beatgrid::uniform_int(rng, 1, bar);
  double t = ms_grid(beatgrid::uniform_real(rng, 0.0, 0.5));
  const int beats = beatgrid::uniform_int(rng, o.min_beats, o.max_beats);
  for (int i = 0; i < beats && t <= L - o.beat_margin; ++i) {
    seg.beats.push_back({t, counter});
    counter = counter % bar + 1;
    t = ms_grid(t + beatgrid::uniform_real(rng, o.min_beat_gap, o.max_beat_gap));
  }
  if (seg.beats.empty()) seg.beats.push_back({0.0, 1});

  const int notes = beatgrid::uniform_int(rng, o.min_notes, o.max_notes);
  for (int i = 0; i < notes; ++i) {
    Note n;
    n.pitch = beatgrid::uniform_int(rng, o.pitch_low, o.pitch_high);
    n.velocity = beatgrid::uniform_int(rng, 1, 127);
    n.onset = ms_grid(beatgrid::uniform_real(rng, 0.0, L - 0.010));
    n.offset = std::min(L, ms_grid(n.onset + beatgrid::uniform_real(rng, 0.05, 2.0)));
    if (n.offset <= n.onset) n.offset = ms_grid(n.onset + 0.01);
    seg.notes.push_back(n);
  }
  beatgrid::sort_notes(seg.notes);
  return seg;
}

// Upper critical value of the chi-squared distribution via the
// Wilson-Hilferty cube approximation.
inline double chi2_critical(int dof, double z) {
  const double d = static_cast<double>(dof);
  const double a = 1.0 - 2.0 / (9.0 * d) + z * std::sqrt(2.0 / (9.0 * d));
  return d * a * a * a;
}

}  // namespace testutil
