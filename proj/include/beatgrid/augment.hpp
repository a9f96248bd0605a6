#pragma once

// Training-time segment perturbations: pitch transposition within a fixed
// range, time shift, and time scaling. Time ops apply as scale-then-shift;
// point events pushed outside the window are dropped, surviving notes are
// clipped at the window edges.

#include <algorithm>
#include <vector>

#include "beatgrid/pipeline.hpp"

namespace beatgrid {

struct AugmentConfig {
  bool enable_transpose = false;
  int pitch_low = 21;    // A0
  int pitch_high = 108;  // C8
  bool enable_shift = false;
  double shift_range = 1.0;  // +/- seconds
  bool enable_scale = false;
  double scale_low = 0.9;
  double scale_high = 1.1;
  std::uint64_t rng_seed = 0;

  void validate() const {
    require(pitch_low <= pitch_high, Errc::invalid_config, "pitch_low > pitch_high");
    require(pitch_low >= 0 && pitch_high <= 127, Errc::invalid_config, "pitch range outside MIDI");
    require(scale_low <= scale_high && scale_low > 0, Errc::invalid_config, "bad scale range");
    require(shift_range >= 0, Errc::invalid_config, "negative shift_range");
  }
};

struct AugmentParams {
  int transpose = 0;   // semitones
  double shift = 0.0;  // seconds
  double scale = 1.0;

  bool is_identity() const { return transpose == 0 && shift == 0.0 && scale == 1.0; }
};

// Draws per-example parameters. The transpose interval is clamped so every
// pitch of the segment stays inside [pitch_low, pitch_high]; if the segment
// already exceeds that range no transposition can fix it and 0 is returned.
inline AugmentParams sample_augmentation_params(const Segment& segment, const AugmentConfig& cfg,
                                                Rng& rng) {
  cfg.validate();
  require(!segment.notes.empty(), Errc::empty_segment, "cannot augment a segment without notes");
  AugmentParams p;
  if (cfg.enable_transpose) {
    int min_pitch = 127, max_pitch = 0;
    for (const auto& n : segment.notes) {
      min_pitch = std::min(min_pitch, n.pitch);
      max_pitch = std::max(max_pitch, n.pitch);
    }
    const int lo = cfg.pitch_low - min_pitch;
    const int hi = cfg.pitch_high - max_pitch;
    if (lo <= hi) p.transpose = uniform_int(rng, lo, hi);
  }
  if (cfg.enable_shift && cfg.shift_range > 0)
    p.shift = uniform_real(rng, -cfg.shift_range, cfg.shift_range);
  if (cfg.enable_scale) p.scale = uniform_real(rng, cfg.scale_low, cfg.scale_high);
  return p;
}

inline Segment apply_augmentation(const Segment& segment, const AugmentParams& params,
                                  double segment_length) {
  if (params.is_identity()) return segment;
  require(params.scale > 0, Errc::invalid_config, "scale must be positive");

  for (const auto& n : segment.notes) {
    const int p = n.pitch + params.transpose;
    require(p >= 0 && p <= 127, Errc::infeasible_transpose,
            "pitch " + std::to_string(n.pitch) + " transposed by " +
                std::to_string(params.transpose) + " leaves MIDI range");
  }

  const double L = segment_length;
  auto remap = [&](double t) { return params.scale * t + params.shift; };

  Segment out;
  out.piece_id = segment.piece_id;
  out.index = segment.index;
  out.start = segment.start;
  for (const auto& n : segment.notes) {
    double on = remap(n.onset);
    double off = remap(n.offset);
    if (off <= 0.0 || on >= L) continue;  // both ends outside: drop the pair
    on = std::max(on, 0.0);
    off = std::min(off, L);
    if (off <= on) continue;
    Note m = n;
    m.pitch += params.transpose;
    m.onset = on;
    m.offset = off;
    out.notes.push_back(m);
  }
  for (const auto& b : segment.beats) {
    const double t = remap(b.time);
    if (t < 0.0 || t >= L) continue;
    out.beats.push_back({t, b.counter});
  }
  sort_notes(out.notes);
  sort_beats(out.beats);
  return out;
}

}  // namespace beatgrid
