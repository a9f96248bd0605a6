#pragma once

// Beat and downbeat F1 with a symmetric tolerance window. Matching is
// maximum-cardinality one-to-one, computed greedily on the sorted inputs
// (maximum for this interval structure; the test suite checks it against a
// brute-force matcher).

#include <string>
#include <tuple>
#include <vector>

#include "beatgrid/types.hpp"

namespace beatgrid {

struct EvalConfig {
  double tolerance = 0.070;  // seconds
  double skip_intro = 0.0;   // drop events before this time; 0 evaluates from the start

  void validate() const {
    require(tolerance > 0, Errc::invalid_config, "tolerance must be > 0");
    require(skip_intro >= 0, Errc::invalid_config, "skip_intro must be >= 0");
  }
};

inline std::vector<std::pair<std::size_t, std::size_t>> match_events(
    const std::vector<double>& reference, const std::vector<double>& estimate, double tolerance) {
  for (std::size_t i = 1; i < reference.size(); ++i)
    require(reference[i] >= reference[i - 1], Errc::unsorted_input, "reference not sorted");
  for (std::size_t i = 1; i < estimate.size(); ++i)
    require(estimate[i] >= estimate[i - 1], Errc::unsorted_input, "estimate not sorted");

  std::vector<std::pair<std::size_t, std::size_t>> matches;
  std::size_t i = 0, j = 0;
  while (i < reference.size() && j < estimate.size()) {
    if (std::abs(reference[i] - estimate[j]) <= tolerance) {
      matches.emplace_back(i, j);
      ++i;
      ++j;
    } else if (estimate[j] < reference[i] - tolerance) {
      ++j;
    } else {
      ++i;
    }
  }
  return matches;
}

struct EvalResult {
  double f_b = 0, p_b = 0, r_b = 0;
  double f_db = 0, p_db = 0, r_db = 0;
  long matched_b = 0, ref_b = 0, est_b = 0;
  long matched_db = 0, ref_db = 0, est_db = 0;
};

namespace detail {

struct Prf {
  double f, p, r;
};

// Both sides empty counts as a perfect score; one empty side as zero.
inline Prf prf(long matched, long ref, long est) {
  if (ref == 0 && est == 0) return {1.0, 1.0, 1.0};
  const double p = est > 0 ? static_cast<double>(matched) / est : 0.0;
  const double r = ref > 0 ? static_cast<double>(matched) / ref : 0.0;
  const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  return {f, p, r};
}

inline std::vector<double> times_of(const std::vector<BeatEvent>& events, double skip_intro,
                                    bool downbeats_only) {
  std::vector<double> out;
  for (const auto& e : events) {
    if (e.time < skip_intro) continue;
    if (downbeats_only && !e.is_downbeat()) continue;
    out.push_back(e.time);
  }
  return out;
}

}  // namespace detail

inline EvalResult f_measure(const std::vector<BeatEvent>& reference,
                            const std::vector<BeatEvent>& estimate, const EvalConfig& cfg = {}) {
  cfg.validate();
  EvalResult r;

  const auto ref_b = detail::times_of(reference, cfg.skip_intro, false);
  const auto est_b = detail::times_of(estimate, cfg.skip_intro, false);
  r.ref_b = static_cast<long>(ref_b.size());
  r.est_b = static_cast<long>(est_b.size());
  r.matched_b = static_cast<long>(match_events(ref_b, est_b, cfg.tolerance).size());
  const auto b = detail::prf(r.matched_b, r.ref_b, r.est_b);
  r.f_b = b.f;
  r.p_b = b.p;
  r.r_b = b.r;

  const auto ref_db = detail::times_of(reference, cfg.skip_intro, true);
  const auto est_db = detail::times_of(estimate, cfg.skip_intro, true);
  r.ref_db = static_cast<long>(ref_db.size());
  r.est_db = static_cast<long>(est_db.size());
  r.matched_db = static_cast<long>(match_events(ref_db, est_db, cfg.tolerance).size());
  const auto d = detail::prf(r.matched_db, r.ref_db, r.est_db);
  r.f_db = d.f;
  r.p_db = d.p;
  r.r_db = d.r;
  return r;
}

struct CorpusEvalRow {
  std::string piece_id;
  EvalResult result;
};

struct CorpusEvalResult {
  EvalResult corpus;  // aggregated scores; counts are summed
  std::vector<CorpusEvalRow> pieces;
};

// Corpus score is the unweighted mean of per-piece values; `weighted`
// switches to weighting by the piece's reference beat count.
inline CorpusEvalResult evaluate_corpus(
    const std::vector<std::tuple<std::string, std::vector<BeatEvent>, std::vector<BeatEvent>>>&
        pairs,
    const EvalConfig& cfg = {}, bool weighted = false) {
  require(!pairs.empty(), Errc::empty_corpus, "no (reference, estimate) pairs");
  CorpusEvalResult out;
  double wsum = 0.0;
  for (const auto& [id, ref, est] : pairs) {
    EvalResult r = f_measure(ref, est, cfg);
    const double w = weighted ? static_cast<double>(std::max<long>(r.ref_b, 1)) : 1.0;
    wsum += w;
    out.corpus.f_b += w * r.f_b;
    out.corpus.p_b += w * r.p_b;
    out.corpus.r_b += w * r.r_b;
    out.corpus.f_db += w * r.f_db;
    out.corpus.p_db += w * r.p_db;
    out.corpus.r_db += w * r.r_db;
    out.corpus.matched_b += r.matched_b;
    out.corpus.ref_b += r.ref_b;
    out.corpus.est_b += r.est_b;
    out.corpus.matched_db += r.matched_db;
    out.corpus.ref_db += r.ref_db;
    out.corpus.est_db += r.est_db;
    out.pieces.push_back({id, r});
  }
  out.corpus.f_b /= wsum;
  out.corpus.p_b /= wsum;
  out.corpus.r_b /= wsum;
  out.corpus.f_db /= wsum;
  out.corpus.p_db /= wsum;
  out.corpus.r_db /= wsum;
  return out;
}

}  // namespace beatgrid
