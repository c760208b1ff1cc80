#include "tdit/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tdit/evalsuite.hpp"

namespace tdit {

namespace fs = std::filesystem;

// --- run config ----------------------------------------------------------------

namespace {

nlohmann::json sample_to_json(const SampleConfig& s) {
  return {{"steps", s.steps},
          {"cfg_scale", s.cfg_scale},
          {"interval", {s.interval_lo, s.interval_hi}},
          {"seed", s.seed}};
}

SampleConfig sample_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("sample config: expected an object");
  SampleConfig s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "steps") s.steps = v.get<std::size_t>();
    else if (k == "cfg_scale") s.cfg_scale = v.get<double>();
    else if (k == "interval") {
      if (!v.is_array() || v.size() != 2) throw std::invalid_argument("sample config: interval must be [lo, hi]");
      s.interval_lo = v[0].get<std::size_t>();
      s.interval_hi = v[1].get<std::size_t>();
    } else if (k == "seed") s.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("sample config: unknown field \"" + k + "\"");
  }
  return s;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

}  // namespace

nlohmann::json to_json(const RunConfig& rc) {
  return {{"model", to_json(rc.model)},
          {"corpus", to_json(rc.corpus)},
          {"sample", sample_to_json(rc.sample)},
          {"train", to_json(rc.train)}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("run config: expected an object");
  RunConfig rc;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "model") rc.model = model_config_from_json(it.value());
    else if (k == "corpus") rc.corpus = corpus_config_from_json(it.value());
    else if (k == "sample") rc.sample = sample_from_json(it.value());
    else if (k == "train") rc.train = train_config_from_json(it.value());
    else if (k == "command" || k == "options") continue;
    else throw std::invalid_argument("run config: unknown section \"" + k + "\"");
  }
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  const auto j = read_json_file(path);
  try {
    return run_config_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

// --- command plumbing ---------------------------------------------------------------

namespace {

/// Removes everything it created unless commit() is called.
class OutputGuard {
 public:
  void track(const fs::path& p) {
    if (!fs::exists(p)) created_.push_back(p);
  }
  void commit() { committed_ = true; }
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = created_.rbegin(); it != created_.rend(); ++it) fs::remove_all(*it, ec);
  }

 private:
  std::vector<fs::path> created_;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

/// Writes through a temporary name so readers never see a partial file.
void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  write_text(tmp, text);
  fs::rename(tmp, path);
}

void write_run_config(const fs::path& path, const std::string& command, const RunConfig& rc,
                      const nlohmann::json& options) {
  nlohmann::json j = to_json(rc);
  j["command"] = command;
  j["options"] = options;
  write_atomic(path, j.dump(2) + "\n");
}

fs::path sidecar(const fs::path& output) { return output.string() + ".run_config.json"; }

std::pair<std::size_t, std::size_t> parse_interval(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("--interval must look like lo:hi");
  try {
    std::size_t used = 0;
    const auto lo = std::stoul(s.substr(0, colon), &used);
    if (used != colon) throw std::invalid_argument("");
    const std::string rest = s.substr(colon + 1);
    const auto hi = std::stoul(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("");
    return {lo, hi};
  } catch (const std::exception&) {
    throw std::invalid_argument("--interval must look like lo:hi with integer steps, got \"" + s + "\"");
  }
}

EventScript read_script(const std::string& path, const ScriptLimits& limits) {
  const auto j = read_json_file(path);
  try {
    return validate_script(script_from_json(j), limits);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void check_model_fits_corpus(const ModelConfig& m, const CorpusConfig& c) {
  if (m.grid != c.grid)
    throw std::invalid_argument("model grid " + std::to_string(m.grid) + " differs from corpus grid " +
                                std::to_string(c.grid));
  if (m.vocab_size <= static_cast<int>(c.num_patterns))
    throw std::invalid_argument("model vocab_size must exceed the corpus pattern count");
  if (m.max_events < c.max_events)
    throw std::invalid_argument("model max_events is below the corpus max_events");
}

std::vector<TrainExample> training_examples(const Corpus& corpus, const ModelConfig& m) {
  std::vector<TrainExample> data;
  for (const auto& r : corpus.records) {
    TrainExample ex{pixels_to_latent(r.video, m.patch), r.script, std::nullopt};
    if (m.first_frame) {
      Tensor f = ex.latent;
      f.reshape({ex.latent.dim(0), m.patches_per_frame() * m.patch_dim()});
      ex.first_frame = Tensor({m.patches_per_frame(), m.patch_dim()},
                              std::vector<double>(f.data(), f.data() + f.dim(1)));
    }
    data.push_back(std::move(ex));
  }
  return data;
}

ProbeKind parse_probe(const std::string& s) {
  if (s == "gaussian") return ProbeKind::kGaussian;
  if (s == "flat") return ProbeKind::kFlat;
  throw std::invalid_argument("--probe must be gaussian or flat");
}

std::string fmt_g(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

// --- CLI -----------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal-caption toy video diffusion: data, training, sampling and checks", "tdit"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path;
  RunConfig rc;
  nlohmann::json options = nlohmann::json::object();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus directory");
  std::string gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_num;
  gen->add_option("--config", config_path, "Run config JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output corpus directory")->required();
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("--num-videos", gen_num, "Number of videos");

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a corpus");
  std::string tr_data, tr_out, tr_mode;
  bool tr_resume = false;
  std::optional<std::size_t> tr_steps, tr_batch, tr_warmup;
  std::optional<double> tr_lr, tr_clip;
  std::optional<std::uint64_t> tr_seed;
  std::size_t tr_save_every = 500, tr_log_every = 100;
  tr->add_option("--config", config_path, "Run config JSON")->check(CLI::ExistingFile);
  tr->add_option("--data", tr_data, "Corpus directory")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--mode", tr_mode, "rerope | vanilla-rope | hard-mask | concat-time");
  tr->add_flag("--resume", tr_resume, "Continue from the checkpoint in --out");
  tr->add_option("--steps", tr_steps, "Total training steps");
  tr->add_option("--batch-size", tr_batch, "Minibatch size");
  tr->add_option("--warmup", tr_warmup, "Linear warmup steps");
  tr->add_option("--lr", tr_lr, "Learning rate");
  tr->add_option("--grad-clip", tr_clip, "Global gradient-norm clip");
  tr->add_option("--seed", tr_seed, "Training seed");
  tr->add_option("--save-every", tr_save_every, "Checkpoint period in steps (0: only at the end)");
  tr->add_option("--log-every", tr_log_every, "Progress print period in steps (0: silent)");

  // sample
  auto* sm = app.add_subcommand("sample", "Generate a video for an event script");
  std::string sm_ckpt, sm_script, sm_out, sm_interval, sm_pgm, sm_first;
  std::optional<std::size_t> sm_steps;
  std::optional<double> sm_cfg;
  std::optional<std::uint64_t> sm_seed;
  bool sm_no_cuts = false;
  sm->add_option("--ckpt", sm_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  sm->add_option("--script", sm_script, "Event script JSON")->required()->check(CLI::ExistingFile);
  sm->add_option("--out", sm_out, "Output video JSON")->required();
  sm->add_option("--config", config_path, "Run config JSON (sample section)")->check(CLI::ExistingFile);
  sm->add_option("--steps", sm_steps, "Euler steps");
  sm->add_option("--cfg-scale", sm_cfg, "Guidance scale");
  sm->add_option("--interval", sm_interval, "Guided step indices lo:hi");
  sm->add_option("--seed", sm_seed, "Noise seed");
  sm->add_flag("--no-cuts", sm_no_cuts, "Drop cut conditioning");
  sm->add_option("--pgm-dir", sm_pgm, "Also write one PGM per frame here");
  sm->add_option("--first-frame", sm_first, "Video JSON whose first frame conditions the sample")
      ->check(CLI::ExistingFile);

  // viz-attn
  auto* vz = app.add_subcommand("viz-attn", "Write positional-bias heatmaps for a script");
  std::string vz_script, vz_mode = "rerope", vz_format = "csv", vz_out, vz_probe = "flat";
  std::vector<double> vz_L{4.0, 8.0, 16.0};
  int vz_dim = 64;
  std::uint64_t vz_seed = 0;
  vz->add_option("--script", vz_script, "Event script JSON")->required()->check(CLI::ExistingFile);
  vz->add_option("--mode", vz_mode, "Conditioning mode")->capture_default_str();
  vz->add_option("--L", vz_L, "Rescale lengths")->capture_default_str();
  vz->add_option("--format", vz_format, "csv | pgm")->capture_default_str();
  vz->add_option("--out", vz_out, "Output directory")->required();
  vz->add_option("--dim", vz_dim, "Probe dimension")->capture_default_str();
  vz->add_option("--probe", vz_probe, "gaussian | flat")->capture_default_str();
  vz->add_option("--seed", vz_seed, "Probe seed")->capture_default_str();

  // check-properties
  auto* cp = app.add_subcommand("check-properties", "Randomized check of the event-binding properties");
  std::size_t cp_trials = 1000;
  std::uint64_t cp_seed = 0;
  std::string cp_mode = "rerope", cp_report, cp_probe = "gaussian";
  std::vector<double> cp_L{4.0, 8.0, 16.0};
  std::vector<int> cp_dims{32, 64};
  double cp_ratio = 10.0;
  cp->add_option("--trials", cp_trials, "Number of random trials")->capture_default_str();
  cp->add_option("--seed", cp_seed, "Trial seed")->capture_default_str();
  cp->add_option("--mode", cp_mode, "rerope | vanilla-rope")->capture_default_str();
  cp->add_option("--report", cp_report, "Write the JSON report here");
  cp->add_option("--probe", cp_probe, "gaussian | flat")->capture_default_str();
  cp->add_option("--L", cp_L, "Rescale lengths")->capture_default_str();
  cp->add_option("--dims", cp_dims, "Probe dimensions")->capture_default_str();
  cp->add_option("--max-ratio", cp_ratio, "Largest event-length ratio")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Sample every corpus script and score the outputs");
  std::string ev_ckpt, ev_data, ev_report, ev_interval;
  std::optional<std::size_t> ev_steps;
  std::optional<double> ev_cfg;
  std::optional<std::uint64_t> ev_seed;
  std::size_t ev_limit = 0, ev_prop_trials = 200;
  ev->add_option("--ckpt", ev_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--report", ev_report, "Output report JSON")->required();
  ev->add_option("--config", config_path, "Run config JSON (sample section)")->check(CLI::ExistingFile);
  ev->add_option("--steps", ev_steps, "Euler steps");
  ev->add_option("--cfg-scale", ev_cfg, "Guidance scale");
  ev->add_option("--interval", ev_interval, "Guided step indices lo:hi");
  ev->add_option("--seed", ev_seed, "Sampling seed");
  ev->add_option("--limit", ev_limit, "Only the first N records (0: all)");
  ev->add_option("--property-trials", ev_prop_trials, "Trials for the property section");

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    // Path checks (missing input files) are validation errors, not usage errors.
    if (dynamic_cast<const CLI::ValidationError*>(&e)) return kExitValidation;
    return code == 0 ? kExitOk : kExitUsage;
  }

  OutputGuard guard;
  try {
    if (!config_path.empty()) rc = load_run_config(config_path);
    auto apply_sample_flags = [&](const std::optional<std::size_t>& steps, const std::optional<double>& cfg,
                                  const std::string& interval, const std::optional<std::uint64_t>& seed) {
      if (steps) rc.sample.steps = *steps;
      if (cfg) rc.sample.cfg_scale = *cfg;
      if (!interval.empty()) std::tie(rc.sample.interval_lo, rc.sample.interval_hi) = parse_interval(interval);
      if (seed) rc.sample.seed = *seed;
      if (rc.sample.interval_hi > rc.sample.steps && interval.empty()) {
        // Default interval on a short schedule: clip to the schedule.
        rc.sample.interval_hi = rc.sample.steps;
        rc.sample.interval_lo = std::min(rc.sample.interval_lo, rc.sample.steps);
      }
      rc.sample.validate();
    };

    if (*gen) {
      if (gen_seed) rc.corpus.seed = *gen_seed;
      if (gen_num) rc.corpus.num_videos = *gen_num;
      rc.corpus.validate();
      guard.track(gen_out);
      const Corpus corpus = generate_corpus(rc.corpus);
      write_corpus(corpus, gen_out);
      options = {{"out", gen_out}};
      write_run_config(fs::path(gen_out) / "run_config.json", "gen-data", rc, options);
      out << "wrote " << corpus.records.size() << " videos to " << gen_out << "\n";
    } else if (*tr) {
      const fs::path prior = fs::path(tr_out) / "run_config.json";
      if (tr_resume && config_path.empty() && fs::exists(prior)) rc = load_run_config(prior.string());
      if (!fs::is_directory(tr_data)) throw std::invalid_argument("--data: no corpus directory " + tr_data);
      if (!tr_mode.empty()) rc.model.mode = parse_mode(tr_mode);
      if (tr_steps) rc.train.total_steps = *tr_steps;
      if (tr_batch) rc.train.batch_size = *tr_batch;
      if (tr_warmup) rc.train.warmup_steps = *tr_warmup;
      if (tr_lr) rc.train.lr = *tr_lr;
      if (tr_clip) rc.train.grad_clip = *tr_clip;
      if (tr_seed) rc.train.seed = *tr_seed;
      const Corpus corpus = read_corpus(tr_data);
      rc.corpus = corpus.config;
      rc.model.validate();
      rc.train.validate();
      check_model_fits_corpus(rc.model, rc.corpus);
      const auto data = training_examples(corpus, rc.model);
      const fs::path dir(tr_out);
      const fs::path model_path = dir / "model.ckpt", opt_path = dir / "optimizer.ckpt",
                     log_path = dir / "loss.csv";
      std::string log_text = "step,loss,grad_norm\n";
      if (!tr_resume) guard.track(dir);
      TrainState state = [&] {
        if (!tr_resume) {
          Rng rng(rc.train.seed);
          return TrainState{ToyDiT::init(rc.model, rng), AdamW{}, 0};
        }
        if (!fs::exists(model_path) || !fs::exists(opt_path))
          throw std::invalid_argument("--resume: no checkpoint in " + tr_out);
        try {
          return load_train_state(model_path.string(), opt_path.string());
        } catch (const std::runtime_error& e) {
          throw std::invalid_argument(e.what());
        }
      }();
      if (tr_resume) {
        if (config_hash(state.model.config()) != config_hash(rc.model))
          throw std::invalid_argument("--resume: checkpoint model config differs from the resolved config");
        // Keep the log rows up to the checkpointed step.
        std::ifstream in(log_path);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          if (std::stoul(line.substr(0, line.find(','))) > state.step) break;
          log_text += line + "\n";
        }
      }
      fs::create_directories(dir);
      for (const auto& p : {model_path, opt_path, log_path}) guard.track(p);
      options = {{"data", tr_data}, {"out", tr_out}, {"resume", tr_resume}};
      write_run_config(dir / "run_config.json", "train", rc, options);
      const nlohmann::json meta = {{"train", to_json(rc.train)}, {"corpus", to_json(rc.corpus)}};
      std::ofstream log(log_path, std::ios::trunc);
      log << log_text;
      const auto t0 = std::chrono::steady_clock::now();
      train(state, data, rc.train, [&](const StepLog& l) {
        char row[96];
        std::snprintf(row, sizeof row, "%zu,%.17g,%.17g\n", l.step, l.loss, l.grad_norm);
        log << row;
        if (tr_log_every && l.step % tr_log_every == 0) {
          const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          out << "step " << l.step << " loss " << fmt_g(l.loss) << " grad_norm " << fmt_g(l.grad_norm)
              << " (" << fmt_g(s) << " s)\n";
          out.flush();
        }
        if (tr_save_every && l.step % tr_save_every == 0 && l.step < rc.train.total_steps) {
          log.flush();
          save_train_state(state, model_path.string(), opt_path.string(), meta);
        }
      });
      log.close();
      save_train_state(state, model_path.string(), opt_path.string(), meta);
      out << "trained to step " << state.step << "; checkpoint " << model_path.string() << "\n";
    } else if (*sm) {
      nlohmann::json meta;
      const ToyDiT model = [&] {
        try {
          return load_checkpoint(sm_ckpt, &meta);
        } catch (const std::runtime_error& e) {
          throw std::invalid_argument(e.what());
        }
      }();
      rc.model = model.config();
      if (meta.contains("corpus")) rc.corpus = corpus_config_from_json(meta["corpus"]);
      if (meta.contains("train")) rc.train = train_config_from_json(meta["train"]);
      apply_sample_flags(sm_steps, sm_cfg, sm_interval, sm_seed);
      const EventScript script = read_script(sm_script, {rc.model.max_events, rc.model.vocab_size});
      SampleOptions so;
      so.no_cuts = sm_no_cuts;
      if (!sm_first.empty()) {
        const Tensor v = load_video(sm_first);
        if (v.dim(0) == 0 || v.dim(1) != rc.model.grid || v.dim(2) != rc.model.grid)
          throw std::invalid_argument("--first-frame: video frames must be " + std::to_string(rc.model.grid) +
                                      "x" + std::to_string(rc.model.grid));
        so.first_frame = Tensor({v.dim(1), v.dim(2)}, std::vector<double>(v.data(), v.data() + v.dim(1) * v.dim(2)));
      }
      const Tensor video = sample(model, script, rc.sample, so);
      guard.track(sm_out);
      write_atomic(sm_out, video_to_json(video, script.fps).dump() + "\n");
      if (!sm_pgm.empty()) {
        guard.track(sm_pgm);
        save_video_pgm_frames(video, sm_pgm);
      }
      options = {{"ckpt", sm_ckpt}, {"script", sm_script}, {"out", sm_out}, {"no_cuts", sm_no_cuts},
                 {"pgm_dir", sm_pgm}, {"first_frame", sm_first}};
      guard.track(sidecar(sm_out));
      write_run_config(sidecar(sm_out), "sample", rc, options);
      out << "wrote " << video.dim(0) << " frames to " << sm_out << "\n";
    } else if (*vz) {
      const ConditioningMode mode = parse_mode(vz_mode);
      const ProbeKind probe_kind = parse_probe(vz_probe);
      if (vz_format != "csv" && vz_format != "pgm") throw std::invalid_argument("--format must be csv or pgm");
      if (vz_dim <= 0 || vz_dim % 2 != 0) throw std::invalid_argument("--dim must be even and positive");
      const EventScript script = read_script(vz_script, {});
      Rng rng = Rng(vz_seed).split("probe");
      const auto probe = make_probe(probe_kind, static_cast<std::size_t>(vz_dim), rng);
      const RotaryEncoder enc(vz_dim);
      guard.track(vz_out);
      fs::create_directories(vz_out);
      for (double L : vz_L) {
        if (!(L > 0.0)) throw std::invalid_argument("--L values must be > 0");
        const Tensor map = bias_map(script, L, mode, probe, enc);
        const fs::path p = fs::path(vz_out) / ("bias_" + std::string(to_string(mode)) + "_L" + fmt_g(L) + "." + vz_format);
        emit_heatmap(map, p.string(), vz_format);
        out << "wrote " << p.string() << "\n";
      }
      options = {{"script", vz_script}, {"mode", vz_mode}, {"L", vz_L}, {"format", vz_format},
                 {"dim", vz_dim}, {"probe", vz_probe}, {"seed", vz_seed}};
      write_run_config(fs::path(vz_out) / "run_config.json", "viz-attn", rc, options);
    } else if (*cp) {
      PropertySuiteConfig pc;
      pc.mode = parse_mode(cp_mode);
      if (!uses_rotation(pc.mode)) throw std::invalid_argument("--mode must be rerope or vanilla-rope");
      if (cp_trials == 0) throw std::invalid_argument("--trials must be >= 1");
      pc.trials = cp_trials;
      pc.seed = cp_seed;
      pc.probe = parse_probe(cp_probe);
      pc.rescale_lengths = cp_L;
      pc.dims = cp_dims;
      pc.max_length_ratio = cp_ratio;
      for (int d : cp_dims)
        if (d <= 0 || d % 2 != 0) throw std::invalid_argument("--dims values must be even and positive");
      if (!(cp_ratio >= 1.0)) throw std::invalid_argument("--max-ratio must be >= 1");
      const PropertyReport rep = verify_properties(pc);
      const auto j = to_json(rep);
      if (!cp_report.empty()) {
        guard.track(cp_report);
        write_atomic(cp_report, j.dump(2) + "\n");
        options = {{"trials", cp_trials}, {"seed", cp_seed}, {"mode", cp_mode}, {"probe", cp_probe},
                   {"L", cp_L}, {"dims", cp_dims}, {"max_ratio", cp_ratio}};
        write_run_config(sidecar(cp_report), "check-properties", rc, options);
      }
      for (const char* name : {"argmax", "unimodal", "boundary"}) {
        const auto& r = j["bias"][name];
        out << name << ": " << (r["passed"].get<bool>() ? "pass" : "FAIL") << " (" << r["failures"] << "/"
            << r["checks"] << " failing)\n";
      }
      if (!rep.passed()) {
        if (cp_report.empty()) {
          for (const char* name : {"argmax", "unimodal", "boundary"}) {
            const auto& ce = j["bias"][name]["counterexamples"];
            if (!ce.empty()) out << name << " counterexample: " << ce[0].dump() << "\n";
          }
          if (!rep.vanilla_violation.is_null()) out << "violation: " << rep.vanilla_violation.dump() << "\n";
        }
        guard.commit();
        return kExitPropertyFailure;
      }
    } else if (*ev) {
      nlohmann::json meta;
      const ToyDiT model = [&] {
        try {
          return load_checkpoint(ev_ckpt, &meta);
        } catch (const std::runtime_error& e) {
          throw std::invalid_argument(e.what());
        }
      }();
      rc.model = model.config();
      if (meta.contains("train")) rc.train = train_config_from_json(meta["train"]);
      apply_sample_flags(ev_steps, ev_cfg, ev_interval, ev_seed);
      Corpus corpus = read_corpus(ev_data);
      rc.corpus = corpus.config;
      check_model_fits_corpus(rc.model, rc.corpus);
      if (ev_limit && ev_limit < corpus.records.size()) corpus.records.resize(ev_limit);
      EvalOptions eo;
      eo.sample = rc.sample;
      eo.property_seed = rc.sample.seed;
      eo.property_trials = ev_prop_trials;
      const EvalReport rep = evaluate_model(model, corpus, eo);
      guard.track(ev_report);
      write_atomic(ev_report, to_json(rep).dump(2) + "\n");
      options = {{"ckpt", ev_ckpt}, {"data", ev_data}, {"report", ev_report}, {"limit", ev_limit},
                 {"property_trials", ev_prop_trials}};
      guard.track(sidecar(ev_report));
      write_run_config(sidecar(ev_report), "eval", rc, options);
      out << "timing_accuracy " << fmt_g(rep.timing_accuracy) << " zero_cut_fraction_no_cuts "
          << fmt_g(rep.zero_cut_fraction_no_cuts) << " cut_hit_fraction " << fmt_g(rep.cut_hit_fraction) << "\n";
    }
    guard.commit();
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace tdit
