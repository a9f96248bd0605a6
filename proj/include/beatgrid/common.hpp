#pragma once

#include <cstdint>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace beatgrid {

enum class Errc {
  malformed_file,
  unsupported_format,
  dangling_note_on,
  parse_error,
  non_monotonic_time,
  counter_out_of_range,
  csv_parse_error,
  empty_segment,
  infeasible_transpose,
  out_of_window,
  counter_overflow,
  length_overflow,
  non_finite_loss,
  shape_mismatch,
  version_mismatch,
  corrupt_checksum,
  empty_corpus,
  unsorted_input,
  invalid_config,
  io_error,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::malformed_file: return "MalformedFile";
    case Errc::unsupported_format: return "UnsupportedFormat";
    case Errc::dangling_note_on: return "DanglingNoteOn";
    case Errc::parse_error: return "ParseError";
    case Errc::non_monotonic_time: return "NonMonotonicTime";
    case Errc::counter_out_of_range: return "CounterOutOfRange";
    case Errc::csv_parse_error: return "CsvParseError";
    case Errc::empty_segment: return "EmptySegment";
    case Errc::infeasible_transpose: return "InfeasibleTranspose";
    case Errc::out_of_window: return "OutOfWindow";
    case Errc::counter_overflow: return "CounterOverflow";
    case Errc::length_overflow: return "LengthOverflow";
    case Errc::non_finite_loss: return "NonFiniteLoss";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::version_mismatch: return "VersionMismatch";
    case Errc::corrupt_checksum: return "CorruptChecksum";
    case Errc::empty_corpus: return "EmptyCorpus";
    case Errc::unsorted_input: return "UnsortedInput";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool ok, Errc code, const std::string& msg) {
  if (!ok) raise(code, msg);
}

// ---------------------------------------------------------------------------
// Deterministic RNG helpers. std:: distributions are implementation-defined,
// so all sampling goes through these to keep seeded runs reproducible.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline std::uint64_t uniform_u64(Rng& rng, std::uint64_t n) {
  // unbiased integer in [0, n) via rejection
  if (n == 0) return 0;
  const std::uint64_t rem = std::numeric_limits<std::uint64_t>::max() % n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - rem;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

// inclusive bounds
inline int uniform_int(Rng& rng, int lo, int hi) {
  if (lo >= hi) return lo;
  const auto span = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) - lo) + 1;
  return lo + static_cast<int>(uniform_u64(rng, span));
}

inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
}

inline double uniform_real(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(rng);
}

inline double normal_draw(Rng& rng) {
  // Box-Muller; one value per call
  double u1 = uniform_unit(rng);
  while (u1 <= 0.0) u1 = uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_combine_u64(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stream seed for one (piece, segment, epoch) triple; keeps parallel data
// loading deterministic regardless of worker scheduling.
inline Rng derive_rng(std::uint64_t seed, std::string_view piece_id, std::int64_t segment_index,
                      std::int64_t epoch) {
  std::uint64_t h = fnv1a64(piece_id);
  h = hash_combine_u64(h, seed);
  h = hash_combine_u64(h, static_cast<std::uint64_t>(segment_index) + 0x9e3779b97f4a7c15ULL);
  h = hash_combine_u64(h, static_cast<std::uint64_t>(epoch) + 0x6a09e667f3bcc909ULL);
  return Rng(h);
}

// ---------------------------------------------------------------------------
// Minimal thread helper: runs fn(i) for i in [0, n). Work is split into
// contiguous chunks; results must be written to per-index slots so the
// reduction order stays fixed.
// ---------------------------------------------------------------------------
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline unsigned default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace beatgrid
