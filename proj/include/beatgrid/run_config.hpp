#pragma once

// The JSON run configuration shared by all CLI subcommands. One file mirrors
// every module's config; cross-section consistency is checked up front so a
// bad config fails before any work starts.

#include <json.hpp>

#include "beatgrid/augment.hpp"
#include "beatgrid/codec.hpp"
#include "beatgrid/decode.hpp"
#include "beatgrid/eval.hpp"
#include "beatgrid/synth.hpp"
#include "beatgrid/train.hpp"

namespace beatgrid {

inline constexpr int kConfigVersion = 1;

struct RunPaths {
  std::string midi_dir;
  std::string beats_dir;       // optional TSV sidecars overriding MIDI-derived beats
  std::string dataset_csv = "dataset.csv";
  std::string checkpoint = "model.ckpt";
  std::string metrics = "metrics.jsonl";
  std::string predictions_dir = "predictions";
  std::string report_csv = "report.csv";
  std::string report_json = "report.json";
};

struct RunConfig {
  int config_version = kConfigVersion;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0 = hardware concurrency
  RunPaths paths;
  PipelineConfig pipeline;
  AugmentConfig augment;
  CodecConfig codec;
  nn::ModelConfig model;
  nn::TrainConfig train;
  DecodeConfig decode;
  StitchConfig stitch;
  EvalConfig eval;
  bool eval_weighted = false;
  SynthConfig synth;

  unsigned effective_threads() const { return threads == 0 ? default_threads() : threads; }

  // Cross-section consistency; also fills the derived vocab size.
  void validate() {
    require(config_version == kConfigVersion, Errc::invalid_config,
            "unsupported config_version " + std::to_string(config_version));
    pipeline.validate();
    augment.validate();
    codec.validate();
    require(std::abs(codec.segment_length - pipeline.segment_length) < 1e-9,
            Errc::invalid_config, "codec.segment_length must equal pipeline.segment_length");
    const int vocab_size = build_vocabulary(codec).size();
    if (model.vocab_size == 0) model.vocab_size = vocab_size;
    require(model.vocab_size == vocab_size, Errc::invalid_config,
            "model.vocab_size does not match the vocabulary implied by the codec (" +
                std::to_string(vocab_size) + ")");
    model.validate();
    train.validate();
    decode.validate();
    require(decode.max_target_len <= model.max_target_len, Errc::invalid_config,
            "decode.max_target_len exceeds model.max_target_len");
    stitch.validate();
    require(stitch.hop <= pipeline.segment_length, Errc::invalid_config,
            "stitch.hop must not exceed the segment length");
    eval.validate();
  }
};

// ---- JSON bindings; absent fields keep their defaults -----------------------

inline void from_json_section(const nlohmann::json& j, PipelineConfig& c) {
  c.segment_length = j.value("segment_length", c.segment_length);
  c.hop = j.value("hop", c.hop);
  c.min_beats = j.value("min_beats", c.min_beats);
}
inline nlohmann::json to_json_section(const PipelineConfig& c) {
  return {{"segment_length", c.segment_length}, {"hop", c.hop}, {"min_beats", c.min_beats}};
}

inline void from_json_section(const nlohmann::json& j, AugmentConfig& c) {
  c.enable_transpose = j.value("transpose", c.enable_transpose);
  c.pitch_low = j.value("pitch_low", c.pitch_low);
  c.pitch_high = j.value("pitch_high", c.pitch_high);
  c.enable_shift = j.value("shift", c.enable_shift);
  c.shift_range = j.value("shift_range", c.shift_range);
  c.enable_scale = j.value("scale", c.enable_scale);
  c.scale_low = j.value("scale_low", c.scale_low);
  c.scale_high = j.value("scale_high", c.scale_high);
}
inline nlohmann::json to_json_section(const AugmentConfig& c) {
  return {{"transpose", c.enable_transpose}, {"pitch_low", c.pitch_low},
          {"pitch_high", c.pitch_high},      {"shift", c.enable_shift},
          {"shift_range", c.shift_range},    {"scale", c.enable_scale},
          {"scale_low", c.scale_low},        {"scale_high", c.scale_high}};
}

inline void from_json_section(const nlohmann::json& j, CodecConfig& c) {
  if (j.contains("scheme")) c.scheme = scheme_from_name(j.at("scheme").get<std::string>());
  c.step = j.value("step", c.step);
  c.segment_length = j.value("segment_length", c.segment_length);
  c.max_counter = j.value("max_counter", c.max_counter);
}
inline nlohmann::json to_json_section(const CodecConfig& c) {
  return {{"scheme", scheme_name(c.scheme)},
          {"step", c.step},
          {"segment_length", c.segment_length},
          {"max_counter", c.max_counter}};
}

inline void from_json_section(const nlohmann::json& j, nn::ModelConfig& c) {
  c.d_model = j.value("d_model", c.d_model);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_input_len = j.value("max_input_len", c.max_input_len);
  c.max_target_len = j.value("max_target_len", c.max_target_len);
  c.dropout = j.value("dropout", c.dropout);
  c.rel_pos_buckets = j.value("rel_pos_buckets", c.rel_pos_buckets);
  c.rel_pos_max_distance = j.value("rel_pos_max_distance", c.rel_pos_max_distance);
}

inline void from_json_section(const nlohmann::json& j, nn::TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("optimizer"))
    c.optimizer = nn::optimizer_from_name(j.at("optimizer").get<std::string>());
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.adam_warmup = j.value("adam_warmup", c.adam_warmup);
}
inline nlohmann::json to_json_section(const nn::TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"optimizer", nn::optimizer_name(c.optimizer)},
          {"label_smoothing", c.label_smoothing},
          {"checkpoint_every", c.checkpoint_every},
          {"max_steps", c.max_steps},
          {"adam_warmup", c.adam_warmup}};
}

inline void from_json_section(const nlohmann::json& j, DecodeConfig& c) {
  c.beam_size = j.value("beam_size", c.beam_size);
  c.no_repeat_ngram = j.value("no_repeat_ngram", c.no_repeat_ngram);
  c.max_target_len = j.value("max_target_len", c.max_target_len);
  c.length_penalty = j.value("length_penalty", c.length_penalty);
}

inline void from_json_section(const nlohmann::json& j, StitchConfig& c) {
  c.hop = j.value("hop", c.hop);
  c.tolerance = j.value("tolerance", c.tolerance);
}

inline void from_json_section(const nlohmann::json& j, EvalConfig& c) {
  c.tolerance = j.value("tolerance", c.tolerance);
  c.skip_intro = j.value("skip_intro", c.skip_intro);
}

inline void from_json_section(const nlohmann::json& j, SynthConfig& c) {
  c.seed = j.value("seed", c.seed);
  c.num_pieces = j.value("pieces", c.num_pieces);
  c.tempo_low = j.value("tempo_low", c.tempo_low);
  c.tempo_high = j.value("tempo_high", c.tempo_high);
  c.duration_low = j.value("duration_low", c.duration_low);
  c.duration_high = j.value("duration_high", c.duration_high);
  c.pattern_on_beat_prob = j.value("pattern_on_beat_prob", c.pattern_on_beat_prob);
  c.pattern_off_beat_prob = j.value("pattern_off_beat_prob", c.pattern_off_beat_prob);
}

inline void from_json_section(const nlohmann::json& j, RunPaths& p) {
  p.midi_dir = j.value("midi_dir", p.midi_dir);
  p.beats_dir = j.value("beats_dir", p.beats_dir);
  p.dataset_csv = j.value("dataset_csv", p.dataset_csv);
  p.checkpoint = j.value("checkpoint", p.checkpoint);
  p.metrics = j.value("metrics", p.metrics);
  p.predictions_dir = j.value("predictions_dir", p.predictions_dir);
  p.report_csv = j.value("report_csv", p.report_csv);
  p.report_json = j.value("report_json", p.report_json);
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  try {
    cfg.config_version = j.value("config_version", kConfigVersion);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.threads = j.value("threads", cfg.threads);
    if (j.contains("paths")) from_json_section(j.at("paths"), cfg.paths);
    if (j.contains("pipeline")) from_json_section(j.at("pipeline"), cfg.pipeline);
    if (j.contains("augment")) from_json_section(j.at("augment"), cfg.augment);
    if (j.contains("codec")) from_json_section(j.at("codec"), cfg.codec);
    if (j.contains("model")) from_json_section(j.at("model"), cfg.model);
    if (j.contains("train")) from_json_section(j.at("train"), cfg.train);
    if (j.contains("decode")) from_json_section(j.at("decode"), cfg.decode);
    if (j.contains("stitch")) from_json_section(j.at("stitch"), cfg.stitch);
    if (j.contains("eval")) {
      from_json_section(j.at("eval"), cfg.eval);
      cfg.eval_weighted = j.at("eval").value("weighted", cfg.eval_weighted);
    }
    if (j.contains("synth")) from_json_section(j.at("synth"), cfg.synth);
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::invalid_config, std::string("bad run config: ") + e.what());
  }
  // keep codec and pipeline window lengths in lockstep when only one is given
  const bool codec_len_set = j.contains("codec") && j.at("codec").contains("segment_length");
  const bool pipe_len_set = j.contains("pipeline") && j.at("pipeline").contains("segment_length");
  if (pipe_len_set && !codec_len_set) cfg.codec.segment_length = cfg.pipeline.segment_length;
  if (codec_len_set && !pipe_len_set) cfg.pipeline.segment_length = cfg.codec.segment_length;
  cfg.validate();
  return cfg;
}

inline RunConfig parse_run_config_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::invalid_config, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

}  // namespace beatgrid
