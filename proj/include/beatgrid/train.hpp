#pragma once

// Teacher-forced training over encoded segments. Batches follow a seeded
// shuffle; augmentation params are re-drawn per (piece, segment, epoch) so
// parallel workers stay deterministic; gradients accumulate into per-worker
// buffers that are reduced in a fixed order.

#include <chrono>
#include <functional>
#include <ostream>

#include "beatgrid/augment.hpp"
#include "beatgrid/codec.hpp"
#include "beatgrid/model.hpp"
#include "beatgrid/optimizer.hpp"

namespace beatgrid::nn {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::adafactor;
  double label_smoothing = 0.0;
  std::uint64_t rng_seed = 0;
  long checkpoint_every = 0;  // steps; 0 = only at the end
  long max_steps = 0;         // 0 = bounded by epochs only
  long adam_warmup = 4000;

  void validate() const {
    require(batch_size >= 1, Errc::invalid_config, "batch_size must be >= 1");
    require(epochs >= 1, Errc::invalid_config, "epochs must be >= 1");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0, Errc::invalid_config,
            "label_smoothing outside [0, 1)");
  }
};

struct TrainHooks {
  unsigned threads = 1;
  std::ostream* metrics = nullptr;  // one JSON object per step
  long eval_every = 0;
  std::function<bool(long step, const ModelParams&)> on_eval;  // true stops training
  std::function<void(long step, const ModelParams&)> on_checkpoint;
};

struct TrainSummary {
  long steps = 0;
  double last_loss = 0.0;
  long skipped_examples = 0;  // too long or augmented empty
};

namespace detail {

template <typename T>
void accumulate(ModelParamsT<T>& into, const ModelParamsT<T>& from) {
  std::vector<Mat<T>*> dst;
  visit_tensors(into, [&](const std::string&, Mat<T>& m) { dst.push_back(&m); });
  std::size_t i = 0;
  visit_tensors(from, [&](const std::string&, const Mat<T>& m) { *dst[i++] += m; });
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_u64(rng, i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace detail

// Draws augmentation params until the transformed segment still has notes and
// beats (up to 8 attempts), else reports failure for this epoch.
inline bool augment_for_epoch(const Segment& seg, const AugmentConfig& acfg, Rng& rng,
                              double segment_length, Segment& out) {
  if (!acfg.enable_transpose && !acfg.enable_shift && !acfg.enable_scale) {
    out = seg;
    return true;
  }
  for (int attempt = 0; attempt < 8; ++attempt) {
    const AugmentParams p = sample_augmentation_params(seg, acfg, rng);
    Segment cand = apply_augmentation(seg, p, segment_length);
    if (!cand.notes.empty() && !cand.beats.empty()) {
      out = std::move(cand);
      return true;
    }
  }
  return false;
}

inline TrainSummary train_model(ModelParams& params, const std::vector<Segment>& segments,
                                const Vocabulary& vocab, const TrainConfig& tcfg,
                                const AugmentConfig& acfg, const TrainHooks& hooks = {}) {
  tcfg.validate();
  require(!segments.empty(), Errc::empty_corpus, "no training segments");
  const double L = vocab.config().segment_length;

  Optimizer<float> opt(tcfg.optimizer, params.config.d_model, tcfg.adam_warmup);
  TrainSummary summary;
  const unsigned threads = std::max(1u, hooks.threads);

  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  long step = 0;
  bool stop = false;

  for (int epoch = 0; epoch < tcfg.epochs && !stop; ++epoch) {
    Rng shuffle_rng(hash_combine_u64(fnv1a64("epoch-shuffle"),
                                     tcfg.rng_seed * 2654435761ULL + static_cast<std::uint64_t>(epoch)));
    const auto order = detail::shuffled_indices(segments.size(), shuffle_rng);

    for (std::size_t pos = 0; pos < order.size() && !stop;) {
      // assemble one batch of encoded examples
      std::vector<EncodedExample> batch;
      std::vector<Rng> example_rngs;
      while (pos < order.size() && static_cast<int>(batch.size()) < tcfg.batch_size) {
        const Segment& seg = segments[order[pos]];
        ++pos;
        Rng ex_rng = derive_rng(tcfg.rng_seed, seg.piece_id, seg.index, epoch);
        Segment aug;
        if (!augment_for_epoch(seg, acfg, ex_rng, L, aug)) {
          ++summary.skipped_examples;
          continue;
        }
        EncodedExample ex = encode_example(aug, vocab);
        if (static_cast<int>(ex.input.size()) > params.config.max_input_len ||
            static_cast<int>(ex.target.size()) - 1 > params.config.max_target_len ||
            ex.input.empty()) {
          ++summary.skipped_examples;
          continue;
        }
        batch.push_back(std::move(ex));
        example_rngs.push_back(ex_rng);
      }
      if (batch.empty()) continue;

      long total_tokens = 0;
      for (const auto& ex : batch) total_tokens += static_cast<long>(ex.target.size()) - 1;
      const double weight = 1.0 / static_cast<double>(total_tokens);

      std::vector<ModelParams> grad_pool;
      grad_pool.reserve(threads);
      for (unsigned w = 0; w < threads; ++w) grad_pool.push_back(zeros_like(params));
      std::vector<LossStats> stats(batch.size());
      parallel_for(batch.size(), threads, [&](std::size_t i) {
        DropoutCtx<float> drop;
        Rng drop_rng = example_rngs[i];
        if (params.config.dropout > 0.0) {
          drop.p = params.config.dropout;
          drop.rng = &drop_rng;
        }
        stats[i] = example_loss_and_grad(params, batch[i].input, batch[i].target,
                                         tcfg.label_smoothing, weight,
                                         grad_pool[i % threads], drop);
      });
      for (unsigned w = 1; w < threads; ++w) detail::accumulate(grad_pool[0], grad_pool[w]);

      double loss_sum = 0.0;
      for (const auto& s : stats) loss_sum += s.loss_sum;
      const double loss = loss_sum / static_cast<double>(total_tokens);
      require(std::isfinite(loss), Errc::non_finite_loss, "training loss diverged");

      const double lr = opt.step(params, grad_pool[0]);
      ++step;
      summary.steps = step;
      summary.last_loss = loss;

      if (hooks.metrics) {
        const auto wall =
            std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();
        (*hooks.metrics) << "{\"step\":" << step << ",\"loss\":" << loss << ",\"lr\":" << lr
                         << ",\"wall_ms\":" << wall << "}\n";
      }
      if (tcfg.checkpoint_every > 0 && hooks.on_checkpoint && step % tcfg.checkpoint_every == 0)
        hooks.on_checkpoint(step, params);
      if (hooks.eval_every > 0 && hooks.on_eval && step % hooks.eval_every == 0 &&
          hooks.on_eval(step, params))
        stop = true;
      if (tcfg.max_steps > 0 && step >= tcfg.max_steps) stop = true;
    }
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(step, params);
  return summary;
}

}  // namespace beatgrid::nn
