#pragma once

// Autoregressive generation: length-normalized beam search with a
// no-repeat-ngram constraint (default bigrams), plus stitching of per-window
// predictions into a full-piece beat track by single-linkage clustering of
// beat times with majority voting on the bar position.

#include <map>
#include <unordered_set>

#include "beatgrid/model.hpp"
#include "beatgrid/pipeline.hpp"

namespace beatgrid {

struct DecodeConfig {
  int beam_size = 5;
  int no_repeat_ngram = 2;  // 0 disables
  int max_target_len = 256;
  double length_penalty = 1.0;

  void validate() const {
    require(beam_size >= 1, Errc::invalid_config, "beam_size must be >= 1");
    require(no_repeat_ngram >= 0, Errc::invalid_config, "no_repeat_ngram must be >= 0");
    require(max_target_len >= 1, Errc::invalid_config, "max_target_len must be >= 1");
    require(length_penalty >= 0.0, Errc::invalid_config, "length_penalty must be >= 0");
  }
};

struct BeamResult {
  TokenSeq tokens;        // generated tokens; includes the terminating EOS when finished
  double log_prob = 0.0;  // raw cumulative log probability
  double score = 0.0;     // log_prob / len^length_penalty
  bool finished = false;  // false: no beam reached EOS, best unfinished returned
};

namespace detail {

inline std::uint64_t ngram_key(std::span<const int> toks) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int t : toks) h = hash_combine_u64(h, static_cast<std::uint64_t>(t) + 1);
  return h;
}

inline bool would_repeat_ngram(const TokenSeq& seq, int candidate, int n,
                               const std::unordered_set<std::uint64_t>& seen) {
  if (n <= 0 || static_cast<int>(seq.size()) < n - 1) return false;
  TokenSeq gram(seq.end() - (n - 1), seq.end());
  gram.push_back(candidate);
  return seen.contains(ngram_key(gram));
}

inline double length_normalized(double log_prob, std::size_t generated, double penalty) {
  return log_prob / std::pow(static_cast<double>(generated), penalty);
}

// log-softmax in double for stable, order-robust scoring
template <typename T>
std::vector<double> log_probs(const nn::Vec<T>& logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    mx = std::max(mx, static_cast<double>(logits(i)));
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    z += std::exp(static_cast<double>(logits(i)) - mx);
  const double log_z = std::log(z) + mx;
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<double>(logits(i)) - log_z;
  return out;
}

// true when a beats b under (score desc, tokens lexicographically asc)
inline bool better_result(const BeamResult& a, const BeamResult& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace detail

template <typename T>
BeamResult beam_search_decode(const nn::ModelParamsT<T>& params, const TokenSeq& input,
                              const DecodeConfig& cfg) {
  cfg.validate();
  nn::DecodeSession<T> session(params, std::span<const int>(input.data(), input.size()));

  struct Beam {
    TokenSeq seq;  // BOS-prefixed
    double log_prob = 0.0;
    nn::DecodeState<T> state;
    std::vector<double> next_lp;
    std::unordered_set<std::uint64_t> ngrams;
  };
  std::vector<Beam> live;
  {
    Beam root{{kBosId}, 0.0, nn::DecodeState<T>(params.config), {}, {}};
    root.next_lp = detail::log_probs(nn::decode_step(session, root.state, kBosId));
    live.push_back(std::move(root));
  }

  BeamResult best_finished;
  bool have_finished = false;
  const int vocab = params.config.vocab_size;

  for (int step = 0; step < cfg.max_target_len && !live.empty(); ++step) {
    struct Cand {
      double log_prob;
      int beam;
      int token;
    };
    std::vector<Cand> cands;
    cands.reserve(live.size() * static_cast<std::size_t>(vocab));
    for (std::size_t b = 0; b < live.size(); ++b) {
      for (int t = 0; t < vocab; ++t) {
        if (detail::would_repeat_ngram(live[b].seq, t, cfg.no_repeat_ngram, live[b].ngrams))
          continue;
        cands.push_back({live[b].log_prob + live[b].next_lp[static_cast<std::size_t>(t)],
                         static_cast<int>(b), t});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.beam != b.beam) return a.beam < b.beam;
      return a.token < b.token;
    });

    std::vector<Beam> next;
    next.reserve(static_cast<std::size_t>(cfg.beam_size));
    for (const auto& c : cands) {
      if (c.token == kEosId) {
        BeamResult r;
        r.tokens.assign(live[static_cast<std::size_t>(c.beam)].seq.begin() + 1,
                        live[static_cast<std::size_t>(c.beam)].seq.end());
        r.tokens.push_back(kEosId);
        r.log_prob = c.log_prob;
        r.score = detail::length_normalized(c.log_prob, r.tokens.size(), cfg.length_penalty);
        r.finished = true;
        if (!have_finished || detail::better_result(r, best_finished)) best_finished = std::move(r);
        have_finished = true;
        continue;
      }
      if (static_cast<int>(next.size()) >= cfg.beam_size) continue;
      const auto& src = live[static_cast<std::size_t>(c.beam)];
      Beam nb{src.seq, c.log_prob, src.state, {}, src.ngrams};
      if (cfg.no_repeat_ngram > 0 &&
          static_cast<int>(nb.seq.size()) >= cfg.no_repeat_ngram - 1) {
        TokenSeq gram(nb.seq.end() - (cfg.no_repeat_ngram - 1), nb.seq.end());
        gram.push_back(c.token);
        nb.ngrams.insert(detail::ngram_key(gram));
      }
      nb.seq.push_back(c.token);
      nb.next_lp = detail::log_probs(nn::decode_step(session, nb.state, c.token));
      next.push_back(std::move(nb));
    }
    live = std::move(next);

    // a live beam's normalized score can only approach log_prob / max_len^p,
    // so once nothing live can beat the best finished sequence we are done
    if (have_finished && !live.empty()) {
      double best_bound = -std::numeric_limits<double>::infinity();
      for (const auto& b : live)
        best_bound = std::max(
            b.log_prob >= 0.0
                ? detail::length_normalized(b.log_prob, b.seq.size(), cfg.length_penalty)
                : detail::length_normalized(b.log_prob,
                                            static_cast<std::size_t>(cfg.max_target_len) + 1,
                                            cfg.length_penalty),
            best_bound);
      if (best_bound <= best_finished.score) break;
    }
  }

  if (have_finished) return best_finished;

  // no beam reached EOS within the budget: return the best unfinished one
  require(!live.empty() || have_finished, Errc::invalid_config,
          "no viable continuation under the ngram constraint");
  BeamResult r;
  bool first = true;
  for (const auto& b : live) {
    BeamResult c;
    c.tokens.assign(b.seq.begin() + 1, b.seq.end());
    c.log_prob = b.log_prob;
    c.score = detail::length_normalized(b.log_prob, std::max<std::size_t>(c.tokens.size(), 1),
                                        cfg.length_penalty);
    c.finished = false;
    if (first || detail::better_result(c, r)) r = std::move(c);
    first = false;
  }
  return r;
}

// Greedy decoding: argmax continuation each step under the same constraint.
template <typename T>
BeamResult greedy_decode(const nn::ModelParamsT<T>& params, const TokenSeq& input,
                         const DecodeConfig& cfg) {
  cfg.validate();
  nn::DecodeSession<T> session(params, std::span<const int>(input.data(), input.size()));
  nn::DecodeState<T> state(params.config);
  TokenSeq seq{kBosId};
  std::unordered_set<std::uint64_t> ngrams;
  double log_prob = 0.0;
  BeamResult r;
  std::vector<double> lp = detail::log_probs(nn::decode_step(session, state, kBosId));
  for (int step = 0; step < cfg.max_target_len; ++step) {
    int best = -1;
    for (int t = 0; t < params.config.vocab_size; ++t) {
      if (detail::would_repeat_ngram(seq, t, cfg.no_repeat_ngram, ngrams)) continue;
      if (best < 0 || lp[static_cast<std::size_t>(t)] > lp[static_cast<std::size_t>(best)]) best = t;
    }
    if (best < 0) break;
    log_prob += lp[static_cast<std::size_t>(best)];
    if (best == kEosId) {
      r.tokens.assign(seq.begin() + 1, seq.end());
      r.tokens.push_back(kEosId);
      r.log_prob = log_prob;
      r.score = detail::length_normalized(log_prob, r.tokens.size(), cfg.length_penalty);
      r.finished = true;
      return r;
    }
    if (cfg.no_repeat_ngram > 0 && static_cast<int>(seq.size()) >= cfg.no_repeat_ngram - 1) {
      TokenSeq gram(seq.end() - (cfg.no_repeat_ngram - 1), seq.end());
      gram.push_back(best);
      ngrams.insert(detail::ngram_key(gram));
    }
    seq.push_back(best);
    lp = detail::log_probs(nn::decode_step(session, state, best));
  }
  r.tokens.assign(seq.begin() + 1, seq.end());
  r.log_prob = log_prob;
  r.score = detail::length_normalized(log_prob, std::max<std::size_t>(r.tokens.size(), 1),
                                      cfg.length_penalty);
  r.finished = false;
  return r;
}

// ---------------------------------------------------------------------------
// Stitching
// ---------------------------------------------------------------------------

struct StitchConfig {
  double hop = 5.0;         // inference window hop, seconds
  double tolerance = 0.035; // single-linkage merge threshold, seconds

  void validate() const {
    require(hop > 0, Errc::invalid_config, "stitch hop must be > 0");
    require(tolerance > 0, Errc::invalid_config, "merge tolerance must be > 0");
  }
};

// windows: (window start, predicted events in absolute time), sorted by start.
inline std::vector<BeatEvent> stitch_segment_predictions(
    const std::vector<std::pair<double, std::vector<BeatEvent>>>& windows,
    const StitchConfig& cfg) {
  cfg.validate();
  std::vector<BeatEvent> all;
  double prev_start = -std::numeric_limits<double>::infinity();
  for (const auto& [start, events] : windows) {
    require(start >= prev_start, Errc::unsorted_input, "windows must be sorted by start");
    prev_start = start;
    all.insert(all.end(), events.begin(), events.end());
  }
  sort_beats(all);

  std::vector<BeatEvent> out;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i + 1;
    while (j < all.size() && all[j].time - all[j - 1].time <= cfg.tolerance) ++j;
    double sum = 0.0;
    int downbeat_votes = 0;
    std::map<int, int> counter_votes;
    for (std::size_t k = i; k < j; ++k) {
      sum += all[k].time;
      if (all[k].counter == 1) ++downbeat_votes;
      else ++counter_votes[all[k].counter];
    }
    const int other_votes = static_cast<int>(j - i) - downbeat_votes;
    int counter = 1;
    if (downbeat_votes <= other_votes) {  // ties resolve to beat, not downbeat
      int best_count = -1;
      counter = 0;
      for (const auto& [value, count] : counter_votes) {
        if (count > best_count) {
          best_count = count;
          counter = value;
        }
      }
    }
    out.push_back({sum / static_cast<double>(j - i), counter});
    i = j;
  }
  return out;
}

// Full-piece inference: window the notes, run beam search per window, decode
// leniently, stitch. The piece's own beat annotations (if any) are ignored.
template <typename T>
std::vector<BeatEvent> track_beats_end_to_end(const Piece& piece,
                                              const nn::ModelParamsT<T>& params,
                                              const Vocabulary& vocab, const DecodeConfig& dcfg,
                                              const StitchConfig& scfg, unsigned threads = 1) {
  scfg.validate();
  Piece notes_only;
  notes_only.id = piece.id;
  notes_only.notes = piece.notes;
  PipelineConfig pcfg;
  pcfg.segment_length = vocab.config().segment_length;
  pcfg.hop = scfg.hop;
  pcfg.min_beats = 0;
  std::vector<Segment> segs = segment_piece(notes_only, pcfg);
  // cover the tail: the window grid stops at the last full hop, so append an
  // end-aligned window whenever notes would otherwise fall outside every window
  const double duration = piece_duration(notes_only);
  const double L = pcfg.segment_length;
  if (!segs.empty() && duration > segs.back().start + L) {
    segs.push_back(
        extract_window(notes_only, duration - L, L, static_cast<int>(segs.size())));
  }

  std::vector<std::pair<double, std::vector<BeatEvent>>> windows(segs.size());
  parallel_for(segs.size(), threads, [&](std::size_t i) {
    windows[i].first = segs[i].start;
    if (segs[i].notes.empty()) return;
    const TokenSeq input = encode_input(segs[i], vocab);
    if (input.empty()) return;
    const BeamResult result = beam_search_decode(params, input, dcfg);
    const DecodedBeats decoded = decode_beat_tokens(result.tokens, vocab);
    auto& events = windows[i].second;
    events.reserve(decoded.beats.size());
    for (const auto& b : decoded.beats) events.push_back({b.time + segs[i].start, b.counter});
  });
  return stitch_segment_predictions(windows, scfg);
}

}  // namespace beatgrid
