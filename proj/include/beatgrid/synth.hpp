#pragma once

// Seeded synthetic corpus: constant-tempo metronome pieces with random tempo
// in [60, 180] BPM, 3/4 or 4/4 time, a click on every beat (velocity accent
// on downbeats), and random pattern notes on beats and off-beat eighths.
// Self-contained stand-in for the external datasets in tests and demos.

#include "beatgrid/midi.hpp"
#include "beatgrid/types.hpp"

namespace beatgrid {

struct SynthConfig {
  std::uint64_t seed = 0;
  int num_pieces = 64;
  double tempo_low = 60.0;   // BPM
  double tempo_high = 180.0;
  double duration_low = 11.0;  // seconds
  double duration_high = 16.0;
  int click_pitch = 75;
  int downbeat_velocity = 112;
  int beat_velocity = 80;
  double pattern_on_beat_prob = 0.5;
  double pattern_off_beat_prob = 0.25;
};

struct SynthPiece {
  Piece piece;
  double tempo_bpm = 120.0;
  int beats_per_bar = 4;
};

inline SynthPiece synth_piece(const SynthConfig& cfg, int index) {
  Rng rng = derive_rng(cfg.seed, "synth", index, 0);
  SynthPiece out;
  out.tempo_bpm = uniform_real(rng, cfg.tempo_low, cfg.tempo_high);
  out.beats_per_bar = uniform_unit(rng) < 0.5 ? 3 : 4;
  const double spb = 60.0 / out.tempo_bpm;
  const double duration = uniform_real(rng, cfg.duration_low, cfg.duration_high);

  char name[32];
  std::snprintf(name, sizeof(name), "synth_%04d", index);
  out.piece.id = name;

  static constexpr int kScale[] = {48, 50, 52, 55, 57, 60, 62, 64, 67, 69, 72};
  const int scale_n = static_cast<int>(std::size(kScale));

  int k = 0;
  for (double t = 0.0; t < duration; t = ++k * spb) {
    const int counter = k % out.beats_per_bar + 1;
    out.piece.beats.push_back({t, counter});

    Note click;
    click.pitch = cfg.click_pitch;
    click.velocity = counter == 1 ? cfg.downbeat_velocity : cfg.beat_velocity;
    click.onset = t;
    click.offset = t + std::min(0.1, spb * 0.5);
    out.piece.notes.push_back(click);

    if (uniform_unit(rng) < cfg.pattern_on_beat_prob) {
      Note n;
      n.pitch = kScale[uniform_int(rng, 0, scale_n - 1)];
      n.velocity = uniform_int(rng, 45, 90);
      n.onset = t;
      n.offset = t + uniform_real(rng, 0.3, 0.9) * spb;
      out.piece.notes.push_back(n);
    }
    if (uniform_unit(rng) < cfg.pattern_off_beat_prob) {
      Note n;
      n.pitch = kScale[uniform_int(rng, 0, scale_n - 1)];
      n.velocity = uniform_int(rng, 40, 75);
      n.onset = t + 0.5 * spb;
      n.offset = n.onset + uniform_real(rng, 0.2, 0.45) * spb;
      out.piece.notes.push_back(n);
    }
  }
  sort_notes(out.piece.notes);
  return out;
}

inline std::vector<SynthPiece> synth_corpus(const SynthConfig& cfg) {
  std::vector<SynthPiece> out;
  out.reserve(static_cast<std::size_t>(cfg.num_pieces));
  for (int i = 0; i < cfg.num_pieces; ++i) out.push_back(synth_piece(cfg, i));
  return out;
}

// SMF rendering of a synthetic piece (tempo and time-signature meta events
// carry the beat grid, so re-parsing recovers the same annotations).
inline std::vector<std::uint8_t> synth_to_midi(const SynthPiece& sp) {
  midi::SmfSpec spec;
  spec.tempos.push_back({0, static_cast<std::uint32_t>(std::llround(60e6 / sp.tempo_bpm))});
  spec.time_sigs.push_back({0, sp.beats_per_bar, 4});
  spec.notes = sp.piece.notes;
  return midi::write_midi_file(spec);
}

}  // namespace beatgrid
