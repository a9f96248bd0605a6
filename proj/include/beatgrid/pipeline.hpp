#pragma once

// Windowing of pieces into fixed-length training segments and the CSV dataset
// format: `piece_id,segment_index,start,notes,beats` with `;`-joined
// `onset:offset:pitch:velocity` and `time:counter` fields, LF endings,
// times at 1 ms precision.

#include <cstdio>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "beatgrid/types.hpp"

namespace beatgrid {

struct PipelineConfig {
  double segment_length = 10.0;  // seconds
  double hop = 1.0;              // seconds
  int min_beats = 1;

  void validate() const {
    require(segment_length > 0 && hop > 0 && hop <= segment_length, Errc::invalid_config,
            "require 0 < hop <= segment_length");
    require(min_beats >= 0, Errc::invalid_config, "min_beats must be >= 0");
  }
};

// A fixed-length excerpt. Times are re-based to the window start; note
// offsets are clipped to the window length.
struct Segment {
  std::string piece_id;
  int index = 0;
  double start = 0.0;  // absolute seconds in the source piece
  std::vector<Note> notes;
  std::vector<BeatEvent> beats;

  friend bool operator==(const Segment&, const Segment&) = default;
};

inline double piece_duration(const Piece& piece) {
  double d = 0.0;
  for (const auto& n : piece.notes) d = std::max(d, n.offset);
  if (!piece.beats.empty()) d = std::max(d, piece.beats.back().time);
  return d;
}

// Extracts the window [start, start+L): notes by onset with offsets clipped
// to the window end, beats by time, everything re-based to the start.
inline Segment extract_window(const Piece& piece, double start, double length, int index) {
  Segment seg;
  seg.piece_id = piece.id;
  seg.index = index;
  seg.start = start;
  const double hi = start + length;
  for (const auto& n : piece.notes) {
    if (n.onset < start || n.onset >= hi) continue;
    Note m = n;
    m.onset -= start;
    m.offset = std::min(m.offset, hi) - start;
    seg.notes.push_back(m);
  }
  for (const auto& b : piece.beats) {
    if (b.time < start || b.time >= hi) continue;
    seg.beats.push_back({b.time - start, b.counter});
  }
  return seg;
}

// One window per start k*hop for k = 0..floor((duration-L)/hop); a piece
// shorter than L yields the single window at 0. A tail shorter than a full
// window is not emitted here (the inference path appends an end-aligned
// window itself so nothing is dropped at prediction time).
inline std::vector<Segment> segment_piece(const Piece& piece, const PipelineConfig& cfg) {
  cfg.validate();
  const double L = cfg.segment_length;
  const double duration = piece_duration(piece);
  if (piece.notes.empty() && piece.beats.empty()) return {};

  int windows = 1;
  if (duration >= L) windows = static_cast<int>(std::floor((duration - L) / cfg.hop + 1e-9)) + 1;

  std::vector<Segment> out;
  out.reserve(static_cast<std::size_t>(windows));
  for (int k = 0; k < windows; ++k)
    out.push_back(extract_window(piece, k * cfg.hop, L, k));
  return out;
}

// Keeps segments with at least min_beats beats and at least one note.
inline std::vector<Segment> clean_segments(std::vector<Segment> segments,
                                           const PipelineConfig& cfg) {
  std::vector<Segment> out;
  out.reserve(segments.size());
  for (auto& s : segments) {
    if (static_cast<int>(s.beats.size()) < cfg.min_beats) continue;
    if (s.notes.empty()) continue;
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {

inline void append_ms(std::string& out, double seconds) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", seconds);
  out += buf;
}

inline double parse_double_field(std::string_view s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(s), &used);
    require(used == s.size() && std::isfinite(v), Errc::csv_parse_error,
            "line " + std::to_string(line_no) + ": bad number '" + std::string(s) + "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    raise(Errc::csv_parse_error, "line " + std::to_string(line_no) + ": bad number");
  }
}

inline long parse_int_field(std::string_view s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const long v = std::stol(std::string(s), &used);
    require(used == s.size(), Errc::csv_parse_error,
            "line " + std::to_string(line_no) + ": bad integer '" + std::string(s) + "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    raise(Errc::csv_parse_error, "line " + std::to_string(line_no) + ": bad integer");
  }
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = s.find(sep, start);
    if (p == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, p - start));
    start = p + 1;
  }
}

}  // namespace detail

inline constexpr std::string_view kDatasetCsvHeader = "piece_id,segment_index,start,notes,beats";

inline std::string write_dataset_csv(const std::vector<Segment>& segments) {
  std::string out;
  out += kDatasetCsvHeader;
  out += '\n';
  for (const auto& s : segments) {
    require(s.piece_id.find_first_of(",;:\n\r") == std::string::npos, Errc::csv_parse_error,
            "piece_id contains a reserved character: " + s.piece_id);
    out += s.piece_id;
    out += ',';
    out += std::to_string(s.index);
    out += ',';
    detail::append_ms(out, s.start);
    out += ',';
    for (std::size_t i = 0; i < s.notes.size(); ++i) {
      if (i) out += ';';
      detail::append_ms(out, s.notes[i].onset);
      out += ':';
      detail::append_ms(out, s.notes[i].offset);
      out += ':';
      out += std::to_string(s.notes[i].pitch);
      out += ':';
      out += std::to_string(s.notes[i].velocity);
    }
    out += ',';
    for (std::size_t i = 0; i < s.beats.size(); ++i) {
      if (i) out += ';';
      detail::append_ms(out, s.beats[i].time);
      out += ':';
      out += std::to_string(s.beats[i].counter);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<Segment> read_dataset_csv(std::string_view text) {
  std::vector<Segment> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool saw_header = false;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!saw_header) {
      require(line == kDatasetCsvHeader, Errc::csv_parse_error, "line 1: bad or missing header");
      saw_header = true;
      continue;
    }
    const auto cols = detail::split(line, ',');
    require(cols.size() == 5, Errc::csv_parse_error,
            "line " + std::to_string(line_no) + ": expected 5 columns, got " +
                std::to_string(cols.size()));
    Segment seg;
    seg.piece_id = std::string(cols[0]);
    seg.index = static_cast<int>(detail::parse_int_field(cols[1], line_no));
    seg.start = detail::parse_double_field(cols[2], line_no);
    if (!cols[3].empty()) {
      for (auto f : detail::split(cols[3], ';')) {
        const auto parts = detail::split(f, ':');
        require(parts.size() == 4, Errc::csv_parse_error,
                "line " + std::to_string(line_no) + ": bad note field");
        Note n;
        n.onset = detail::parse_double_field(parts[0], line_no);
        n.offset = detail::parse_double_field(parts[1], line_no);
        n.pitch = static_cast<int>(detail::parse_int_field(parts[2], line_no));
        n.velocity = static_cast<int>(detail::parse_int_field(parts[3], line_no));
        seg.notes.push_back(n);
      }
    }
    if (!cols[4].empty()) {
      for (auto f : detail::split(cols[4], ';')) {
        const auto parts = detail::split(f, ':');
        require(parts.size() == 2, Errc::csv_parse_error,
                "line " + std::to_string(line_no) + ": bad beat field");
        seg.beats.push_back({detail::parse_double_field(parts[0], line_no),
                             static_cast<int>(detail::parse_int_field(parts[1], line_no))});
      }
    }
    out.push_back(std::move(seg));
  }
  require(saw_header || text.empty(), Errc::csv_parse_error, "empty input without header");
  return out;
}

}  // namespace beatgrid
