// beatgrid CLI: preprocess | tokenize | train | infer | evaluate | sweep | synth
//
// All subcommands read the JSON run config (see README) and are deterministic
// given identical inputs and seed. Exit codes: 1 usage, 2 config validation,
// 3 runtime failure; errors are also emitted as JSON on stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "beatgrid/checkpoint.hpp"
#include "beatgrid/decode.hpp"
#include "beatgrid/eval.hpp"
#include "beatgrid/io.hpp"
#include "beatgrid/midi.hpp"
#include "beatgrid/run_config.hpp"
#include "beatgrid/synth.hpp"
#include "beatgrid/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace beatgrid;

std::string sanitize_id(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.' && c != '-') c = '_';
  return s;
}

std::vector<fs::path> sorted_files(const fs::path& dir, std::initializer_list<const char*> exts) {
  std::vector<fs::path> out;
  require(fs::is_directory(dir), Errc::io_error, "not a directory: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    for (const char* want : exts)
      if (ext == want) {
        out.push_back(e.path());
        break;
      }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string piece_stem(const fs::path& p) {
  std::string stem = p.stem().string();
  // strip a trailing ".beats" from annotation sidecars
  if (stem.size() > 6 && stem.ends_with(".beats")) stem.resize(stem.size() - 6);
  return sanitize_id(stem);
}

std::vector<Piece> load_pieces(const RunConfig& cfg, std::vector<std::string>& warnings) {
  require(!cfg.paths.midi_dir.empty(), Errc::invalid_config, "paths.midi_dir is not set");
  std::vector<Piece> pieces;
  for (const auto& path : sorted_files(cfg.paths.midi_dir, {".mid", ".midi"})) {
    const auto bytes = read_file(path.string());
    Piece piece = midi::parse_midi_file(bytes, &warnings);
    piece.id = piece_stem(path);

    // a TSV sidecar (same stem, ".beats.tsv") overrides the MIDI-derived grid
    fs::path sidecar = path;
    sidecar.replace_extension("");
    sidecar += ".beats.tsv";
    if (!cfg.paths.beats_dir.empty())
      sidecar = fs::path(cfg.paths.beats_dir) / (path.stem().string() + ".beats.tsv");
    if (fs::exists(sidecar))
      piece.beats = midi::load_beat_tsv(read_text_file(sidecar.string()), cfg.codec.max_counter);
    validate_piece(piece);
    pieces.push_back(std::move(piece));
  }
  return pieces;
}

std::vector<Segment> load_dataset(const RunConfig& cfg) {
  return read_dataset_csv(read_text_file(cfg.paths.dataset_csv));
}

void save_checkpoint_file(const RunConfig& cfg, const nn::ModelParams& params, long step,
                          const std::string& path) {
  nn::Checkpoint ckpt;
  ckpt.params = params;
  ckpt.step = step;
  ckpt.extra["codec"] = to_json_section(cfg.codec);
  ckpt.extra["train"] = to_json_section(cfg.train);
  ckpt.extra["seed"] = cfg.seed;
  write_file(path, nn::save_checkpoint(ckpt));
}

// The codec that a checkpoint was trained with wins over the run config; a
// disagreement on vocabulary size is a hard error either way.
CodecConfig checkpoint_codec(const nn::Checkpoint& ckpt, const RunConfig& cfg) {
  CodecConfig codec = cfg.codec;
  if (ckpt.extra.contains("codec")) from_json_section(ckpt.extra.at("codec"), codec);
  const int vocab_size = build_vocabulary(codec).size();
  require(vocab_size == ckpt.params.config.vocab_size, Errc::version_mismatch,
          "checkpoint vocabulary (" + std::to_string(ckpt.params.config.vocab_size) +
              ") does not match codec (" + std::to_string(vocab_size) + ")");
  return codec;
}

int cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const auto corpus = synth_corpus(cfg.synth);
  for (const auto& sp : corpus) {
    write_file((fs::path(out_dir) / (sp.piece.id + ".mid")).string(), synth_to_midi(sp));
    write_file((fs::path(out_dir) / (sp.piece.id + ".beats.tsv")).string(),
               midi::save_beat_tsv(sp.piece.beats));
  }
  std::cout << "wrote " << corpus.size() << " pieces to " << out_dir << "\n";
  return 0;
}

int cmd_preprocess(const RunConfig& cfg) {
  std::vector<std::string> warnings;
  const auto pieces = load_pieces(cfg, warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  std::vector<Segment> all;
  for (const auto& piece : pieces) {
    auto segs = clean_segments(segment_piece(piece, cfg.pipeline), cfg.pipeline);
    all.insert(all.end(), std::make_move_iterator(segs.begin()),
               std::make_move_iterator(segs.end()));
  }
  write_file(cfg.paths.dataset_csv, write_dataset_csv(all));
  std::cout << "pieces: " << pieces.size() << "\nsegments: " << all.size() << "\nwrote "
            << cfg.paths.dataset_csv << "\n";
  return 0;
}

int cmd_tokenize(const RunConfig& cfg, const std::string& out_path, int golden) {
  const auto segments = load_dataset(cfg);
  const Vocabulary vocab = build_vocabulary(cfg.codec);
  json stats;
  stats["examples"] = segments.size();
  stats["vocab_size"] = vocab.size();
  stats["time_tokens"] = cfg.codec.num_time_tokens();
  long in_min = std::numeric_limits<long>::max(), in_max = 0, in_sum = 0;
  long tg_min = std::numeric_limits<long>::max(), tg_max = 0, tg_sum = 0;
  json samples = json::array();
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto ex = encode_example(segments[i], vocab);
    const long il = static_cast<long>(ex.input.size());
    const long tl = static_cast<long>(ex.target.size());
    in_min = std::min(in_min, il);
    in_max = std::max(in_max, il);
    in_sum += il;
    tg_min = std::min(tg_min, tl);
    tg_max = std::max(tg_max, tl);
    tg_sum += tl;
    if (static_cast<int>(samples.size()) < golden) {
      samples.push_back({{"piece_id", segments[i].piece_id},
                         {"segment_index", segments[i].index},
                         {"input", vocab.render(ex.input)},
                         {"target", vocab.render(ex.target)}});
    }
  }
  if (!segments.empty()) {
    stats["input_len"] = {{"min", in_min},
                          {"max", in_max},
                          {"mean", static_cast<double>(in_sum) / segments.size()}};
    stats["target_len"] = {{"min", tg_min},
                           {"max", tg_max},
                           {"mean", static_cast<double>(tg_sum) / segments.size()}};
  }
  stats["golden_samples"] = samples;
  const std::string text = stats.dump(2) + "\n";
  if (out_path.empty()) std::cout << text;
  else write_file(out_path, text);
  return 0;
}

int cmd_train(RunConfig& cfg) {
  const auto segments = load_dataset(cfg);
  require(!segments.empty(), Errc::empty_corpus, "dataset is empty: " + cfg.paths.dataset_csv);
  const Vocabulary vocab = build_vocabulary(cfg.codec);
  cfg.train.rng_seed = cfg.seed;
  nn::ModelParams params = nn::init_parameters<float>(cfg.model, cfg.seed);

  std::ofstream metrics(cfg.paths.metrics, std::ios::trunc);
  require(metrics.good(), Errc::io_error, "cannot open metrics log: " + cfg.paths.metrics);
  nn::TrainHooks hooks;
  hooks.threads = cfg.effective_threads();
  hooks.metrics = &metrics;
  hooks.on_checkpoint = [&](long step, const nn::ModelParams& p) {
    save_checkpoint_file(cfg, p, step, cfg.paths.checkpoint);
  };
  const auto summary = nn::train_model(params, segments, vocab, cfg.train, cfg.augment, hooks);
  std::cout << "steps: " << summary.steps << "\nfinal_loss: " << summary.last_loss
            << "\nskipped: " << summary.skipped_examples << "\nwrote " << cfg.paths.checkpoint
            << "\n";
  return 0;
}

int cmd_infer(const RunConfig& cfg, const std::string& midi_arg) {
  const auto ckpt = nn::load_checkpoint(read_file(cfg.paths.checkpoint));
  const CodecConfig codec = checkpoint_codec(ckpt, cfg);
  const Vocabulary vocab = build_vocabulary(codec);

  std::vector<fs::path> files;
  if (fs::is_directory(midi_arg)) files = sorted_files(midi_arg, {".mid", ".midi"});
  else files.push_back(midi_arg);
  fs::create_directories(cfg.paths.predictions_dir);

  for (const auto& path : files) {
    std::vector<std::string> warnings;
    Piece piece = midi::parse_midi_file(read_file(path.string()), &warnings);
    piece.id = piece_stem(path);
    const auto beats = track_beats_end_to_end(piece, ckpt.params, vocab, cfg.decode, cfg.stitch,
                                              cfg.effective_threads());
    const fs::path out = fs::path(cfg.paths.predictions_dir) / (piece.id + ".beats.tsv");
    write_file(out.string(), midi::save_beat_tsv(beats));
    std::cout << piece.id << ": " << beats.size() << " beats -> " << out.string() << "\n";
  }
  return 0;
}

std::vector<std::pair<std::string, fs::path>> tsv_set(const std::string& arg) {
  std::vector<std::pair<std::string, fs::path>> out;
  if (fs::is_directory(arg)) {
    for (const auto& p : sorted_files(arg, {".tsv"})) out.emplace_back(piece_stem(p), p);
  } else {
    out.emplace_back(piece_stem(fs::path(arg)), fs::path(arg));
  }
  return out;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& ref_arg, const std::string& est_arg) {
  const auto refs = tsv_set(ref_arg);
  const auto ests = tsv_set(est_arg);
  std::vector<std::tuple<std::string, std::vector<BeatEvent>, std::vector<BeatEvent>>> pairs;
  for (const auto& [id, ref_path] : refs) {
    for (const auto& [eid, est_path] : ests) {
      if (eid != id) continue;
      pairs.emplace_back(id,
                         midi::load_beat_tsv(read_text_file(ref_path.string()), 1 << 20),
                         midi::load_beat_tsv(read_text_file(est_path.string()), 1 << 20));
      break;
    }
  }
  require(!pairs.empty(), Errc::empty_corpus, "no (reference, estimate) pairs matched by stem");
  const auto result = evaluate_corpus(pairs, cfg.eval, cfg.eval_weighted);

  std::string csv = "piece_id,f_b,p_b,r_b,f_db,p_db,r_db\n";
  char row[256];
  for (const auto& p : result.pieces) {
    std::snprintf(row, sizeof(row), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", p.piece_id.c_str(),
                  p.result.f_b, p.result.p_b, p.result.r_b, p.result.f_db, p.result.p_db,
                  p.result.r_db);
    csv += row;
  }
  write_file(cfg.paths.report_csv, csv);

  json summary = {{"pieces", result.pieces.size()},
                  {"tolerance", cfg.eval.tolerance},
                  {"weighted", cfg.eval_weighted},
                  {"f_b", result.corpus.f_b},
                  {"p_b", result.corpus.p_b},
                  {"r_b", result.corpus.r_b},
                  {"f_db", result.corpus.f_db},
                  {"p_db", result.corpus.p_db},
                  {"r_db", result.corpus.r_db}};
  write_file(cfg.paths.report_json, summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// Ablation grid over encoding x segment length x quantization x augmentation.
// Axes and budget come from the sweep config; each cell trains from scratch
// on the synthetic corpus (or paths.midi_dir when set) and evaluates
// end-to-end on a held-out quarter of the pieces.
int cmd_sweep(const std::string& sweep_path) {
  const json sj = json::parse(read_text_file(sweep_path));
  const json base = sj.value("base", json::object());
  const std::string out_csv = sj.value("out_csv", std::string("sweep.csv"));
  const json axes = sj.value("axes", json::object());

  std::vector<std::string> schemes = axes.value("scheme", std::vector<std::string>{"v3"});
  std::vector<double> lengths = axes.value("segment_length", std::vector<double>{10.0});
  std::vector<double> steps = axes.value("step", std::vector<double>{0.01});
  std::vector<std::string> augments = axes.value("augment", std::vector<std::string>{"none"});

  std::string csv = "scheme,segment_length,step,augment,train_segments,steps,f_b,f_db\n";
  for (const auto& scheme : schemes)
    for (double L : lengths)
      for (double step : steps)
        for (const auto& augment : augments) {
          json j = base;
          j["codec"]["scheme"] = scheme;
          j["codec"]["segment_length"] = L;
          j["codec"]["step"] = step;
          j["pipeline"]["segment_length"] = L;
          j["augment"]["transpose"] = augment.find("transpose") != std::string::npos;
          j["augment"]["shift"] = augment.find("shift") != std::string::npos;
          j["augment"]["scale"] = augment.find("scale") != std::string::npos;
          RunConfig cfg = parse_run_config(j);

          std::vector<Piece> pieces;
          if (!cfg.paths.midi_dir.empty()) {
            std::vector<std::string> warnings;
            pieces = load_pieces(cfg, warnings);
          } else {
            for (const auto& sp : synth_corpus(cfg.synth)) pieces.push_back(sp.piece);
          }
          require(pieces.size() >= 4, Errc::empty_corpus, "sweep needs at least 4 pieces");
          const std::size_t held = std::max<std::size_t>(1, pieces.size() / 4);
          std::vector<Piece> eval_pieces(pieces.end() - static_cast<long>(held), pieces.end());
          pieces.resize(pieces.size() - held);

          std::vector<Segment> train_segments;
          for (const auto& piece : pieces) {
            auto segs = clean_segments(segment_piece(piece, cfg.pipeline), cfg.pipeline);
            train_segments.insert(train_segments.end(), std::make_move_iterator(segs.begin()),
                                  std::make_move_iterator(segs.end()));
          }
          const Vocabulary vocab = build_vocabulary(cfg.codec);
          cfg.train.rng_seed = cfg.seed;
          nn::ModelParams params = nn::init_parameters<float>(cfg.model, cfg.seed);
          nn::TrainHooks hooks;
          hooks.threads = cfg.effective_threads();
          const auto summary =
              nn::train_model(params, train_segments, vocab, cfg.train, cfg.augment, hooks);

          std::vector<std::tuple<std::string, std::vector<BeatEvent>, std::vector<BeatEvent>>>
              pairs;
          for (const auto& piece : eval_pieces) {
            const auto est = track_beats_end_to_end(piece, params, vocab, cfg.decode, cfg.stitch,
                                                    cfg.effective_threads());
            pairs.emplace_back(piece.id, piece.beats, est);
          }
          const auto result = evaluate_corpus(pairs, cfg.eval, cfg.eval_weighted);
          char row[256];
          std::snprintf(row, sizeof(row), "%s,%g,%g,%s,%zu,%ld,%.6f,%.6f\n", scheme.c_str(), L,
                        step, augment.c_str(), train_segments.size(), summary.steps,
                        result.corpus.f_b, result.corpus.f_db);
          csv += row;
          std::cout << row;
        }
  write_file(out_csv, csv);
  std::cout << "wrote " << out_csv << "\n";
  return 0;
}

RunConfig load_config(const std::string& config_path, std::uint64_t seed_override, bool seed_set,
                      unsigned threads_override) {
  RunConfig cfg;
  if (!config_path.empty()) {
    cfg = parse_run_config_text(read_text_file(config_path));
  } else {
    cfg.validate();
  }
  if (seed_set) cfg.seed = seed_override;
  if (threads_override != 0) cfg.threads = threads_override;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symbolic-music beat and downbeat tracking toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  unsigned threads_override = 0;
  app.add_option("--config", config_path, "JSON run config")->capture_default_str();
  app.add_option("--seed", seed_override, "override the config seed")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--threads", threads_override, "worker threads (0 = hardware)");

  auto* synth = app.add_subcommand("synth", "generate the synthetic metronome corpus");
  std::string synth_out = "synth";
  int synth_pieces = -1;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--pieces", synth_pieces, "number of pieces");

  auto* preprocess = app.add_subcommand("preprocess", "MIDI directory -> dataset CSV");
  std::string midi_dir_override;
  preprocess->add_option("--midi-dir", midi_dir_override, "override paths.midi_dir");

  auto* tokenize = app.add_subcommand("tokenize", "dataset CSV -> token statistics");
  std::string tokenize_out;
  int golden = 3;
  tokenize->add_option("--out", tokenize_out, "write JSON here instead of stdout");
  tokenize->add_option("--golden", golden, "number of rendered sample sequences");

  auto* train = app.add_subcommand("train", "dataset CSV -> checkpoint + metrics log");

  auto* infer = app.add_subcommand("infer", "MIDI + checkpoint -> beat TSV");
  std::string infer_midi;
  infer->add_option("--midi", infer_midi, "MIDI file or directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "predicted TSV vs reference -> report");
  std::string ref_arg, est_arg;
  evaluate->add_option("--ref", ref_arg, "reference TSV file or directory")->required();
  evaluate->add_option("--est", est_arg, "estimate TSV file or directory")->required();

  auto* sweep = app.add_subcommand("sweep", "run an ablation grid from a sweep config");
  std::string sweep_config;
  sweep->add_option("--sweep-config", sweep_config, "sweep JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    RunConfig cfg = load_config(config_path, seed_override, seed_set, threads_override);
    if (synth->parsed()) {
      if (synth_pieces >= 0) cfg.synth.num_pieces = synth_pieces;
      if (seed_set) cfg.synth.seed = seed_override;
      return cmd_synth(cfg, synth_out);
    }
    if (preprocess->parsed()) {
      if (!midi_dir_override.empty()) cfg.paths.midi_dir = midi_dir_override;
      return cmd_preprocess(cfg);
    }
    if (tokenize->parsed()) return cmd_tokenize(cfg, tokenize_out, golden);
    if (train->parsed()) return cmd_train(cfg);
    if (infer->parsed()) return cmd_infer(cfg, infer_midi);
    if (evaluate->parsed()) return cmd_evaluate(cfg, ref_arg, est_arg);
    if (sweep->parsed()) return cmd_sweep(sweep_config);
    return 1;
  } catch (const beatgrid::Error& e) {
    const json err = {{"error", beatgrid::errc_name(e.code())}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return e.code() == beatgrid::Errc::invalid_config ? 2 : 3;
  } catch (const std::exception& e) {
    const json err = {{"error", "Internal"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 3;
  }
}
