#include "tdit/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace tdit {

namespace fs = std::filesystem;

// --- config ------------------------------------------------------------------

void CorpusConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("corpus config: " + m); };
  if (!(min_duration > 0.0 && min_duration <= max_duration)) fail("need 0 < min_duration <= max_duration");
  if (!(fps > 0.0)) fail("fps must be > 0");
  if (min_events == 0 || min_events > max_events) fail("need 1 <= min_events <= max_events");
  if (!(min_event_length > 0.0)) fail("min_event_length must be > 0");
  if (min_event_length * static_cast<double>(max_events) > min_duration)
    fail("min_event_length * max_events exceeds min_duration");
  if (!(cut_probability >= 0.0 && cut_probability <= 1.0)) fail("cut_probability must lie in [0, 1]");
  if (max_events > 1 && num_patterns < 2) fail("multi-event videos need at least 2 patterns");
  if (num_patterns == 0 || num_patterns > 8) fail("num_patterns must lie in [1, 8]");
  if (grid < 4) fail("grid must be >= 4");
}

nlohmann::json to_json(const CorpusConfig& c) {
  return {{"num_videos", c.num_videos},       {"min_duration", c.min_duration},
          {"max_duration", c.max_duration},   {"fps", c.fps},
          {"min_events", c.min_events},       {"max_events", c.max_events},
          {"min_event_length", c.min_event_length},
          {"cut_probability", c.cut_probability},
          {"num_patterns", c.num_patterns},   {"grid", c.grid},
          {"seed", c.seed}};
}

CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("corpus config: expected an object");
  CorpusConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "num_videos") c.num_videos = v.get<std::size_t>();
    else if (k == "min_duration") c.min_duration = v.get<double>();
    else if (k == "max_duration") c.max_duration = v.get<double>();
    else if (k == "fps") c.fps = v.get<double>();
    else if (k == "min_events") c.min_events = v.get<std::size_t>();
    else if (k == "max_events") c.max_events = v.get<std::size_t>();
    else if (k == "min_event_length") c.min_event_length = v.get<double>();
    else if (k == "cut_probability") c.cut_probability = v.get<double>();
    else if (k == "num_patterns") c.num_patterns = v.get<std::size_t>();
    else if (k == "grid") c.grid = v.get<std::size_t>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("corpus config: unknown field \"" + k + "\"");
  }
  return c;
}

int event_token(std::size_t id) { return static_cast<int>(id) + 1; }

std::size_t event_pattern_id(const TemporalCaption& caption) {
  if (caption.tokens.empty() || caption.tokens[0] < 1)
    throw std::invalid_argument("caption does not name a pattern");
  return static_cast<std::size_t>(caption.tokens[0] - 1);
}

// --- patterns ----------------------------------------------------------------

PatternLibrary::PatternLibrary(std::size_t num_patterns, std::size_t grid)
    : count_(num_patterns), grid_(grid) {
  if (num_patterns == 0 || num_patterns > 8)
    throw std::invalid_argument("PatternLibrary: num_patterns must lie in [1, 8]");
  if (grid < 4) throw std::invalid_argument("PatternLibrary: grid must be >= 4");
}

namespace {

/// Anti-aliased 1-D box of half-width hw centred at ctr, sampled at x.
double box1(double x, double ctr, double hw) {
  return std::clamp(hw + 0.5 - std::abs(x - ctr), 0.0, 1.0);
}

double triangle(double phase) { return 1.0 - std::abs(2.0 * phase - 1.0); }

}  // namespace

void PatternLibrary::render_into(std::size_t id, double phase, std::span<double> out) const {
  if (id >= count_) throw std::out_of_range("unknown pattern id " + std::to_string(id));
  const std::size_t g = grid_;
  if (out.size() != g * g) throw ShapeError("render_into: output size mismatch");
  const double G = static_cast<double>(g), s = G / 8.0;
  phase = std::clamp(phase, 0.0, 1.0);
  auto px = [&](std::size_t r, std::size_t c) -> double& { return out[r * g + c]; };
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c) {
      double v = 0.0;
      if (id < 4) {
        // Sliding block; id selects a quarter-turn of the base path, which
        // runs left to right along the upper part of the frame.
        std::size_t sr = r, sc = c;
        switch (id) {
          case 1: sr = c; sc = g - 1 - r; break;
          case 2: sr = g - 1 - r; sc = g - 1 - c; break;
          case 3: sr = g - 1 - c; sc = r; break;
          default: break;
        }
        const double cx = s + 6.0 * s * phase;
        v = box1(static_cast<double>(sr) + 0.5, 2.0 * s, s) *
            box1(static_cast<double>(sc) + 0.5, cx, s);
      } else if (id == 4) {
        const double radius = (1.0 + 2.0 * phase) * s;
        const double dr = std::hypot(static_cast<double>(c) + 0.5 - G / 2.0,
                                     static_cast<double>(r) + 0.5 - G / 2.0);
        v = std::clamp(1.0 - 2.0 * std::abs(dr - radius) / s, 0.0, 1.0);
      } else if (id == 5) {
        v = 0.8 * box1(static_cast<double>(c) + 0.5, G - 0.5 - (G - 1.0) * phase, 0.5);
      } else if (id == 6) {
        v = 0.8 * box1(static_cast<double>(r) + 0.5, G - 0.5 - (G - 1.0) * phase, 0.5);
      } else {
        v = triangle(phase) * box1(static_cast<double>(r) + 0.5, G / 2.0, s) *
            box1(static_cast<double>(c) + 0.5, G / 2.0, s);
      }
      px(r, c) = v;
    }
  }
}

Tensor PatternLibrary::frame(std::size_t id, double phase) const {
  Tensor f({grid_, grid_});
  render_into(id, phase, f.values());
  return f;
}

double PatternLibrary::min_pairwise_distance(std::size_t samples) const {
  if (samples < 2) throw std::invalid_argument("min_pairwise_distance: need >= 2 samples");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < count_; ++a)
    for (std::size_t b = a + 1; b < count_; ++b) {
      double acc = 0.0;
      for (std::size_t k = 0; k < samples; ++k) {
        const double ph = static_cast<double>(k) / static_cast<double>(samples - 1);
        const Tensor fa = frame(a, ph), fb = frame(b, ph);
        double sq = 0.0;
        for (std::size_t i = 0; i < fa.size(); ++i) sq += (fa[i] - fb[i]) * (fa[i] - fb[i]);
        acc += std::sqrt(sq / static_cast<double>(fa.size()));
      }
      best = std::min(best, acc / static_cast<double>(samples));
    }
  return best;
}

// --- scripts and rendering ------------------------------------------------------

EventScript gen_script(Rng& rng, const CorpusConfig& cfg) {
  cfg.validate();
  EventScript s;
  s.fps = cfg.fps;
  s.duration = cfg.min_duration == cfg.max_duration
                   ? cfg.min_duration
                   : rng.uniform(cfg.min_duration, cfg.max_duration);
  const auto ne = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(cfg.min_events), static_cast<std::int64_t>(cfg.max_events)));
  // Each event gets the minimum length plus a share of the slack; the shares
  // come from sorted uniform cut points of [0, slack].
  const double slack = s.duration - static_cast<double>(ne) * cfg.min_event_length;
  std::vector<double> points(ne - 1);
  for (double& p : points) p = rng.uniform(0.0, slack);
  std::sort(points.begin(), points.end());
  std::vector<double> bounds(ne + 1, 0.0);
  for (std::size_t n = 1; n < ne; ++n)
    bounds[n] = static_cast<double>(n) * cfg.min_event_length + points[n - 1];
  bounds[ne] = s.duration;
  std::size_t prev = cfg.num_patterns;
  for (std::size_t n = 0; n < ne; ++n) {
    std::size_t id;
    if (prev == cfg.num_patterns) {
      id = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.num_patterns) - 1));
    } else {
      id = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.num_patterns) - 2));
      if (id >= prev) ++id;
    }
    prev = id;
    s.events.push_back({{event_token(id)}, bounds[n], bounds[n + 1]});
    s.global_tokens.push_back(event_token(id));
  }
  if (rng.uniform() < cfg.cut_probability) s.cuts.push_back({rng.uniform(0.1, 0.9) * s.duration});
  ScriptLimits limits;
  limits.max_events = cfg.max_events;
  return validate_script(s, limits);
}

Tensor render_video(const EventScript& script, const PatternLibrary& lib) {
  const auto ts = frame_timestamps(script);
  const std::size_t g = lib.grid();
  Tensor video({ts.size(), g, g});
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const double t = ts[k];
    const std::size_t n = locate_event(t, script);
    const auto& e = script.events[n];
    const std::size_t id = event_pattern_id(e);
    if (id >= lib.size())
      throw std::invalid_argument("event " + std::to_string(n) + " uses unknown pattern id " +
                                  std::to_string(id));
    auto frame = video.values().subspan(k * g * g, g * g);
    lib.render_into(id, (t - e.t_start) / (e.t_end - e.t_start), frame);
    std::size_t flips = 0;
    for (const auto& c : script.cuts) flips += t >= c.t_cut ? 1 : 0;
    if (flips % 2 == 1)
      for (double& v : frame) v = 1.0 - v;
  }
  return video;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  const PatternLibrary lib(cfg.num_patterns, cfg.grid);
  Corpus corpus;
  corpus.config = cfg;
  const Rng root = Rng(cfg.seed).split("corpus");
  for (std::size_t i = 0; i < cfg.num_videos; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    CorpusRecord rec;
    rec.script = gen_script(rng, cfg);
    char name[32];
    std::snprintf(name, sizeof name, "videos/%06zu.json", i);
    rec.video_path = name;
    rec.video = render_video(rec.script, lib);
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

// --- video files -----------------------------------------------------------------

nlohmann::json video_to_json(const Tensor& video, double fps) {
  if (video.rank() != 3) throw ShapeError("video_to_json: expected [T, H, W]");
  nlohmann::json frames = nlohmann::json::array();
  const std::size_t h = video.dim(1), w = video.dim(2);
  for (std::size_t f = 0; f < video.dim(0); ++f) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < h; ++r) {
      std::vector<double> row(video.data() + (f * h + r) * w, video.data() + (f * h + r + 1) * w);
      rows.push_back(row);
    }
    frames.push_back(std::move(rows));
  }
  return {{"fps", fps}, {"frames", std::move(frames)}};
}

Tensor video_from_json(const nlohmann::json& j, double* fps) {
  if (!j.is_object() || !j.contains("fps") || !j.contains("frames"))
    throw std::invalid_argument("video JSON needs \"fps\" and \"frames\"");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "fps" && it.key() != "frames")
      throw std::invalid_argument("video JSON: unknown field \"" + it.key() + "\"");
  const auto& frames = j.at("frames");
  if (!frames.is_array()) throw std::invalid_argument("video JSON: frames must be an array");
  const std::size_t t = frames.size();
  std::size_t h = 0, w = 0;
  if (t > 0) {
    h = frames[0].size();
    w = h > 0 ? frames[0][0].size() : 0;
  }
  Tensor v({t, h, w});
  for (std::size_t f = 0; f < t; ++f) {
    if (frames[f].size() != h) throw std::invalid_argument("video JSON: ragged frame " + std::to_string(f));
    for (std::size_t r = 0; r < h; ++r) {
      const auto& row = frames[f][r];
      if (!row.is_array() || row.size() != w)
        throw std::invalid_argument("video JSON: ragged row in frame " + std::to_string(f));
      for (std::size_t c = 0; c < w; ++c) v[(f * h + r) * w + c] = row[c].get<double>();
    }
  }
  v.require_finite("video pixels");
  if (fps) *fps = j.at("fps").get<double>();
  return v;
}

void save_video(const Tensor& video, double fps, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << video_to_json(video, fps).dump() << '\n';
  if (!out) throw std::runtime_error("write failed for " + path);
}

Tensor load_video(const std::string& path, double* fps) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open video " + path);
  try {
    return video_from_json(nlohmann::json::parse(in), fps);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void save_video_pgm_frames(const Tensor& video, const std::string& dir) {
  fs::create_directories(dir);
  const std::size_t h = video.dim(1), w = video.dim(2);
  for (std::size_t f = 0; f < video.dim(0); ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.pgm", f);
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write frames into " + dir);
    out << "P5\n" << w << ' ' << h << "\n255\n";
    for (std::size_t i = 0; i < h * w; ++i) {
      const double v = std::clamp(video[f * h * w + i], 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  }
}

// --- corpus files ------------------------------------------------------------------

void write_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "videos");
  {
    std::ofstream cfg(fs::path(dir) / "corpus_config.json");
    if (!cfg) throw std::runtime_error("cannot write corpus config into " + dir);
    cfg << to_json(corpus.config).dump(2) << '\n';
  }
  std::ofstream index(fs::path(dir) / "corpus.jsonl");
  if (!index) throw std::runtime_error("cannot write corpus index into " + dir);
  for (const auto& rec : corpus.records) {
    save_video(rec.video, rec.script.fps, (fs::path(dir) / rec.video_path).string());
    nlohmann::json line = {{"script", script_to_json(rec.script)}, {"video_path", rec.video_path}};
    index << line.dump() << '\n';
  }
  if (!index) throw std::runtime_error("write failed for corpus index in " + dir);
}

Corpus read_corpus(const std::string& dir) {
  Corpus corpus;
  const fs::path cfg_path = fs::path(dir) / "corpus_config.json";
  if (fs::exists(cfg_path)) {
    std::ifstream in(cfg_path);
    try {
      corpus.config = corpus_config_from_json(nlohmann::json::parse(in));
    } catch (const std::exception& e) {
      throw std::runtime_error(cfg_path.string() + ": " + e.what());
    }
  }
  std::ifstream index(fs::path(dir) / "corpus.jsonl");
  if (!index) throw std::runtime_error("cannot open " + (fs::path(dir) / "corpus.jsonl").string());
  std::string line;
  std::size_t i = 0;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    const std::string where = "corpus record " + std::to_string(i);
    try {
      const auto j = nlohmann::json::parse(line);
      for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "script" && it.key() != "video_path")
          throw std::invalid_argument("unknown field \"" + it.key() + "\"");
      CorpusRecord rec;
      rec.script = validate_script(script_from_json(j.at("script")));
      rec.video_path = j.at("video_path").get<std::string>();
      double fps = 0.0;
      rec.video = load_video((fs::path(dir) / rec.video_path).string(), &fps);
      if (rec.video.dim(0) != rec.script.num_frames())
        throw std::invalid_argument("video has " + std::to_string(rec.video.dim(0)) +
                                    " frames, script implies " +
                                    std::to_string(rec.script.num_frames()));
      corpus.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    ++i;
  }
  return corpus;
}

}  // namespace tdit
