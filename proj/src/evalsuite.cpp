#include "tdit/evalsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace tdit {

// --- video metrics -------------------------------------------------------------

double mean_abs_frame_diff(const Tensor& video, std::size_t k) {
  if (video.rank() != 3) throw ShapeError("video must be [T, H, W]");
  if (k == 0 || k >= video.dim(0)) throw std::out_of_range("frame difference index out of range");
  const std::size_t n = video.dim(1) * video.dim(2);
  const double* a = video.data() + (k - 1) * n;
  const double* b = video.data() + k * n;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(b[i] - a[i]);
  return acc / static_cast<double>(n);
}

std::vector<std::size_t> detect_cuts(const Tensor& video, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("detect_cuts: tau must be > 0");
  std::vector<std::size_t> cuts;
  bool prev = false;
  for (std::size_t k = 1; k < video.dim(0); ++k) {
    const bool hit = mean_abs_frame_diff(video, k) > tau;
    if (hit && !prev) cuts.push_back(k);
    prev = hit;
  }
  return cuts;
}

std::vector<std::size_t> classify_frames(const Tensor& video, const EventScript& script,
                                         const PatternLibrary& lib, double tau) {
  const auto ts = frame_timestamps(script);
  const std::size_t g = lib.grid();
  if (video.rank() != 3 || video.dim(0) != ts.size() || video.dim(1) != g || video.dim(2) != g)
    throw ShapeError("classify_frames: video " + shape_string(video.shape()) +
                     " does not match the script and library");
  const auto cuts = detect_cuts(video, tau);
  std::vector<std::size_t> ids(ts.size());
  std::vector<double> ref(g * g);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const std::size_t n = locate_event(ts[k], script);
    const auto& e = script.events[n];
    const double phase = (ts[k] - e.t_start) / (e.t_end - e.t_start);
    const std::size_t flips = static_cast<std::size_t>(
        std::upper_bound(cuts.begin(), cuts.end(), k) - cuts.begin());
    const bool inverted = flips % 2 == 1;
    const double* px = video.data() + k * g * g;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t id = 0; id < lib.size(); ++id) {
      lib.render_into(id, phase, ref);
      double d = 0.0;
      for (std::size_t i = 0; i < g * g; ++i) {
        const double v = inverted ? 1.0 - px[i] : px[i];
        d += (v - ref[i]) * (v - ref[i]);
      }
      if (d < best) {
        best = d;
        ids[k] = id;
      }
    }
  }
  return ids;
}

double timing_accuracy(const Tensor& video, const EventScript& script, const PatternLibrary& lib,
                       double tau) {
  const auto ids = classify_frames(video, script, lib, tau);
  if (ids.empty()) return 1.0;
  const auto ts = frame_timestamps(script);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ids.size(); ++k)
    hits += ids[k] == event_pattern_id(script.events[locate_event(ts[k], script)]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ids.size());
}

double measure_smoothness(const CorpusConfig& cfg_in, std::size_t samples, std::uint64_t seed) {
  CorpusConfig cfg = cfg_in;
  cfg.cut_probability = 0.0;
  const PatternLibrary lib(cfg.num_patterns, cfg.grid);
  Rng rng = Rng(seed).split("smoothness");
  double worst = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Tensor v = render_video(gen_script(rng, cfg), lib);
    for (std::size_t k = 1; k < v.dim(0); ++k) worst = std::max(worst, mean_abs_frame_diff(v, k));
  }
  return worst;
}

double measure_min_cut_change(const CorpusConfig& cfg_in, std::size_t samples, std::uint64_t seed) {
  CorpusConfig cfg = cfg_in;
  cfg.cut_probability = 1.0;
  const PatternLibrary lib(cfg.num_patterns, cfg.grid);
  Rng rng = Rng(seed).split("cut-change");
  double least = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples; ++i) {
    const EventScript s = gen_script(rng, cfg);
    const Tensor v = render_video(s, lib);
    const auto k = static_cast<std::size_t>(std::ceil(s.cuts[0].t_cut * s.fps - 1e-9));
    if (k == 0 || k >= v.dim(0)) continue;
    least = std::min(least, mean_abs_frame_diff(v, k));
  }
  return least;
}

double measure_chance_level(const CorpusConfig& cfg, std::size_t trials, std::uint64_t seed) {
  const PatternLibrary lib(cfg.num_patterns, cfg.grid);
  Rng rng = Rng(seed).split("chance");
  double acc = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    const EventScript s = gen_script(rng, cfg);
    Tensor v({s.num_frames(), cfg.grid, cfg.grid});
    for (double& x : v.storage()) x = rng.uniform();
    acc += timing_accuracy(v, s, lib);
  }
  return acc / static_cast<double>(trials);
}

std::optional<int> cut_timing_error(const std::vector<std::size_t>& detections,
                                    const EventScript& script, std::size_t cut_index) {
  if (cut_index >= script.cuts.size()) throw std::out_of_range("cut index out of range");
  if (detections.empty()) return std::nullopt;
  // The first frame shown after the cut is the first one at or after t_cut.
  const auto target = static_cast<long>(std::ceil(script.cuts[cut_index].t_cut * script.fps - 1e-9));
  long best = 0;
  bool have = false;
  for (std::size_t d : detections) {
    const long off = static_cast<long>(d) - target;
    if (!have || std::abs(off) < std::abs(best)) {
      best = off;
      have = true;
    }
  }
  return static_cast<int>(best);
}

// --- probes and properties --------------------------------------------------------

std::vector<double> make_probe(ProbeKind kind, std::size_t dim, Rng& rng) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("probe dimension must be even and > 0");
  std::vector<double> q(dim);
  if (kind == ProbeKind::kGaussian) {
    for (double& v : q) v = rng.normal();
  } else {
    constexpr double kTwoPi = 6.283185307179586;
    for (std::size_t l = 0; l < dim / 2; ++l) {
      const double a = kTwoPi * rng.uniform();
      q[2 * l] = std::cos(a);
      q[2 * l + 1] = std::sin(a);
    }
  }
  return q;
}

void PropertyResult::merge(const PropertyResult& other, std::size_t cap) {
  checks += other.checks;
  failures += other.failures;
  for (const auto& c : other.counterexamples) {
    if (counterexamples.size() >= cap) break;
    counterexamples.push_back(c);
  }
}

namespace {

void merge_all(PropertyResults& into, const PropertyResults& from, std::size_t cap) {
  into.argmax.merge(from.argmax, cap);
  into.unimodal.merge(from.unimodal, cap);
  into.boundary.merge(from.boundary, cap);
}

void record(PropertyResult& r, bool ok, const PropertyCheckOptions& opts,
            const std::function<nlohmann::json()>& detail) {
  ++r.checks;
  if (ok) return;
  ++r.failures;
  if (r.counterexamples.size() < opts.max_counterexamples) r.counterexamples.push_back(detail());
}

/// Rotation positions of frames, event keys and boundaries for rotating modes.
struct Geometry {
  std::vector<double> times;       ///< frame timestamps
  std::vector<double> frame_pos;   ///< rotation position per frame
  std::vector<double> key_pos;     ///< per event
  std::vector<double> bound_pos;   ///< per interior boundary
};

Geometry geometry(const EventScript& script, double rescale_length, ConditioningMode mode) {
  if (!uses_rotation(mode))
    throw std::invalid_argument("property checks need a rotating mode, got " +
                                std::string(to_string(mode)));
  Geometry g;
  g.times = frame_timestamps(script);
  const auto qpos = query_positions(g.times, script, mode, rescale_length);
  for (const auto& p : qpos) g.frame_pos.push_back(*p);
  for (const auto& e : script.events)
    g.key_pos.push_back(key_position(e.t_start, e.t_end, script, mode, rescale_length));
  for (std::size_t n = 0; n + 1 < script.events.size(); ++n) {
    const double b = script.events[n].t_end;
    g.bound_pos.push_back(mode == ConditioningMode::kReRoPE
                              ? rescale_timestamp(b, script, rescale_length)
                              : b);
  }
  return g;
}

/// Generic property check on a score s(position, event).
PropertyResults check_scores(const EventScript& script, const Geometry& g,
                             const std::function<double(double, std::size_t)>& score,
                             double boundary_tol, const PropertyCheckOptions& opts) {
  PropertyResults r;
  const std::size_t ne = script.events.size();
  if (ne < 2) return r;
  const std::size_t nf = g.times.size();
  // (i) frames strictly inside an event.
  for (std::size_t f = 0; f < nf; ++f) {
    const double t = g.times[f];
    const std::size_t n = locate_event(t, script);
    const auto& e = script.events[n];
    if (!(t > e.t_start && t < e.t_end)) continue;
    const double own = score(g.frame_pos[f], n);
    std::size_t worst = n;
    double worst_score = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < ne; ++m) {
      if (m == n) continue;
      const double s = score(g.frame_pos[f], m);
      if (s > worst_score) {
        worst_score = s;
        worst = m;
      }
    }
    record(r.argmax, own > worst_score, opts, [&] {
      return nlohmann::json{{"frame", f}, {"t", t}, {"event", n}, {"own", own},
                            {"competitor", worst}, {"competitor_score", worst_score}};
    });
  }
  // (ii) along each event's closed span.
  for (std::size_t n = 0; n < ne; ++n) {
    const auto& e = script.events[n];
    std::vector<std::size_t> frames;
    for (std::size_t f = 0; f < nf; ++f)
      if (g.times[f] >= e.t_start && g.times[f] <= e.t_end) frames.push_back(f);
    if (frames.size() < 2) continue;
    const double mid = g.key_pos[n];
    bool ok = true;
    nlohmann::json detail;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t f : frames) best_dist = std::min(best_dist, std::abs(g.frame_pos[f] - mid));
    double peak = -std::numeric_limits<double>::infinity(), peak_near = peak;
    for (std::size_t f : frames) {
      const double s = score(g.frame_pos[f], n);
      peak = std::max(peak, s);
      if (std::abs(g.frame_pos[f] - mid) <= best_dist + 1e-12) peak_near = std::max(peak_near, s);
    }
    if (peak > peak_near) {
      ok = false;
      detail = {{"event", n}, {"reason", "peak away from midpoint"}, {"peak", peak},
                {"at_midpoint", peak_near}};
    }
    for (std::size_t i = 0; ok && i + 1 < frames.size(); ++i) {
      const double p0 = g.frame_pos[frames[i]], p1 = g.frame_pos[frames[i + 1]];
      const double s0 = score(p0, n), s1 = score(p1, n);
      const bool rising_side = p1 <= mid;
      const bool falling_side = p0 >= mid;
      if ((rising_side && !(s1 > s0)) || (falling_side && !(s0 > s1))) {
        ok = false;
        detail = {{"event", n}, {"reason", "not monotone"}, {"frames", {frames[i], frames[i + 1]}},
                  {"scores", {s0, s1}}};
      }
    }
    record(r.unimodal, ok, opts, [&] { return detail; });
  }
  // (iii) at interior boundaries.
  for (std::size_t n = 0; n + 1 < ne; ++n) {
    const double a = score(g.bound_pos[n], n), b = score(g.bound_pos[n], n + 1);
    record(r.boundary, std::abs(a - b) <= boundary_tol, opts, [&] {
      return nlohmann::json{{"boundary", n}, {"t", script.events[n].t_end},
                            {"left", a}, {"right", b}, {"gap", std::abs(a - b)}};
    });
  }
  return r;
}

double ratio_of(const EventScript& s) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& e : s.events) {
    lo = std::min(lo, e.length());
    hi = std::max(hi, e.length());
  }
  return hi / lo;
}

}  // namespace

PropertyResults check_bias_properties(const EventScript& script, double rescale_length,
                                      ConditioningMode mode, std::span<const double> probe,
                                      const RotaryEncoder& enc, const PropertyCheckOptions& opts) {
  if (probe.size() != static_cast<std::size_t>(enc.dim()))
    throw ShapeError("probe length does not match the encoder dimension");
  const Geometry g = geometry(script, rescale_length, mode);
  const auto w = pair_weights(probe);
  return check_scores(
      script, g,
      [&](double pos, std::size_t n) { return self_bias(w, pos - g.key_pos[n], enc); },
      opts.boundary_tol, opts);
}

PropertyResults check_distance_properties(const EventScript& script, double rescale_length,
                                          ConditioningMode mode, const PropertyCheckOptions& opts) {
  const Geometry g = geometry(script, rescale_length, mode);
  return check_scores(
      script, g, [&](double pos, std::size_t n) { return -std::abs(pos - g.key_pos[n]); },
      opts.boundary_tol, opts);
}

EventScript random_property_script(Rng& rng, const PropertySuiteConfig& cfg) {
  const auto ne = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(cfg.min_events), static_cast<std::int64_t>(cfg.max_events)));
  const double base = cfg.min_event_length * rng.uniform(1.0, 2.0);
  const double log_r = std::log(cfg.max_length_ratio);
  std::vector<double> lengths(ne);
  for (double& l : lengths) l = base * std::exp(rng.uniform(0.0, log_r));
  if (ne >= 2 && cfg.max_length_ratio > 1.0) {
    const auto a = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(ne) - 1));
    auto b = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(ne) - 2));
    if (b >= a) ++b;
    for (double& l : lengths) l = std::clamp(l, base, base * cfg.max_length_ratio);
    lengths[a] = base;
    lengths[b] = base * cfg.max_length_ratio;
  }
  EventScript s;
  s.fps = cfg.fps;
  double t = 0.0;
  for (std::size_t n = 0; n < ne; ++n) {
    const double end = t + lengths[n];
    s.events.push_back({{static_cast<int>(n) + 1}, t, end});
    s.global_tokens.push_back(static_cast<int>(n) + 1);
    t = end;
  }
  s.duration = t;
  ScriptLimits limits;
  limits.max_events = std::max<std::size_t>(cfg.max_events, 1);
  return validate_script(s, limits);
}

nlohmann::json find_vanilla_violation(const EventScript& script, std::span<const double> probe,
                                      const RotaryEncoder& enc, double boundary_tol) {
  PropertyCheckOptions opts;
  opts.max_counterexamples = 1;
  opts.boundary_tol = boundary_tol;
  const auto r =
      check_bias_properties(script, 0.0, ConditioningMode::kVanillaRoPE, probe, enc, opts);
  nlohmann::json out = {{"argmax", nullptr}, {"boundary", nullptr}};
  if (!r.argmax.counterexamples.empty()) out["argmax"] = r.argmax.counterexamples.front();
  if (!r.boundary.counterexamples.empty()) out["boundary"] = r.boundary.counterexamples.front();
  return out;
}

PropertyReport verify_properties(const PropertySuiteConfig& cfg) {
  if (cfg.trials == 0) throw std::invalid_argument("verify_properties: trials must be >= 1");
  if (cfg.rescale_lengths.empty() || cfg.dims.empty())
    throw std::invalid_argument("verify_properties: need at least one L and one d");
  const auto t0 = std::chrono::steady_clock::now();
  PropertyReport rep;
  rep.config = cfg;
  rep.vanilla_violation = nullptr;
  const Rng root = Rng(cfg.seed).split("properties");
  const std::size_t cap = cfg.check.max_counterexamples;
  for (std::size_t i = 0; i < cfg.trials; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const EventScript s = random_property_script(rng, cfg);
    const double L = cfg.rescale_lengths[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(cfg.rescale_lengths.size()) - 1))];
    const int d = cfg.dims[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(cfg.dims.size()) - 1))];
    const RotaryEncoder enc(d);
    const auto probe = make_probe(cfg.probe, static_cast<std::size_t>(d), rng);
    auto tag = [&](PropertyResults r) {
      for (PropertyResult* p : {&r.argmax, &r.unimodal, &r.boundary})
        for (auto& c : p->counterexamples) {
          c["trial"] = i;
          c["L"] = L;
          c["d"] = d;
          c["script"] = script_to_json(s);
          c["length_ratio"] = ratio_of(s);
        }
      return r;
    };
    merge_all(rep.bias, tag(check_bias_properties(s, L, cfg.mode, probe, enc, cfg.check)), cap);
    merge_all(rep.distance, tag(check_distance_properties(s, L, cfg.mode, cfg.check)), cap);
    if (cfg.mode == ConditioningMode::kVanillaRoPE && rep.vanilla_violation.is_null()) {
      auto v = find_vanilla_violation(s, probe, enc, cfg.check.boundary_tol);
      if (!v["argmax"].is_null() && !v["boundary"].is_null()) {
        v["trial"] = i;
        v["script"] = script_to_json(s);
        rep.vanilla_violation = std::move(v);
      }
    }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

double concentration_ratio(const EventScript& script, double rescale_length,
                           std::span<const double> probe, const RotaryEncoder& enc) {
  const Geometry g = geometry(script, rescale_length, ConditioningMode::kReRoPE);
  const auto w = pair_weights(probe);
  double acc = 0.0;
  for (std::size_t n = 0; n < script.events.size(); ++n) {
    const auto& e = script.events[n];
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < g.times.size(); ++f) {
      const double d = std::abs(g.frame_pos[f] - g.key_pos[n]);
      if (d < best_d) {
        best_d = d;
        best = f;
      }
    }
    const double peak = self_bias(w, g.frame_pos[best] - g.key_pos[n], enc);
    const double lo = rescale_timestamp(e.t_start, script, rescale_length);
    const double hi = rescale_timestamp(e.t_end, script, rescale_length);
    const double edge = 0.5 * (self_bias(w, lo - g.key_pos[n], enc) + self_bias(w, hi - g.key_pos[n], enc));
    acc += peak / edge;
  }
  return acc / static_cast<double>(script.events.size());
}

void emit_heatmap(const Tensor& map, const std::string& path, const std::string& format) {
  std::string body;
  if (format == "csv") body = bias_map_csv(map);
  else if (format == "pgm") body = bias_map_pgm(map);
  else throw std::invalid_argument("heatmap format must be csv or pgm, got \"" + format + "\"");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write heatmap " + path);
  out << body;
  if (!out) throw std::runtime_error("write failed for heatmap " + path);
}

// --- reports ------------------------------------------------------------------------

nlohmann::json to_json(const PropertyResult& r) {
  return {{"passed", r.passed()}, {"checks", r.checks}, {"failures", r.failures},
          {"counterexamples", r.counterexamples}};
}

nlohmann::json to_json(const PropertyResults& r) {
  return {{"argmax", to_json(r.argmax)},
          {"unimodal", to_json(r.unimodal)},
          {"boundary", to_json(r.boundary)},
          {"passed", r.passed()}};
}

nlohmann::json to_json(const PropertyReport& r) {
  return {{"mode", std::string(to_string(r.config.mode))},
          {"trials", r.config.trials},
          {"L", r.config.rescale_lengths},
          {"d", r.config.dims},
          {"probe", r.config.probe == ProbeKind::kGaussian ? "gaussian" : "flat"},
          {"max_length_ratio", r.config.max_length_ratio},
          {"boundary_tol", r.config.check.boundary_tol},
          {"seed", r.config.seed},
          {"bias", to_json(r.bias)},
          {"distance", to_json(r.distance)},
          {"vanilla_violation", r.vanilla_violation},
          {"seconds", r.seconds},
          {"passed", r.passed()}};
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json errors = nlohmann::json::array();
  for (int e : r.cut_timing_errors)
    errors.push_back(e == std::numeric_limits<int>::max() ? nlohmann::json(nullptr) : nlohmann::json(e));
  return {{"timing_accuracy", r.timing_accuracy},
          {"timing_accuracy_no_cuts", r.timing_accuracy_no_cuts},
          {"mean_cuts_per_video", r.mean_cuts_per_video},
          {"mean_cuts_per_video_no_cuts", r.mean_cuts_per_video_no_cuts},
          {"zero_cut_fraction_no_cuts", r.zero_cut_fraction_no_cuts},
          {"cut_timing_errors", errors},
          {"cut_hit_fraction", r.cut_hit_fraction},
          {"videos", r.videos},
          {"cut_videos", r.cut_videos},
          {"mode", std::string(to_string(r.mode))},
          {"L", r.rescale_length},
          {"seeds", {{"sample", r.sample_seed}, {"properties", r.property_seed}}},
          {"properties", to_json(r.properties)}};
}

EvalReport evaluate_model(const ToyDiT& model, const Corpus& corpus, const EvalOptions& opts) {
  const auto& mc = model.config();
  const PatternLibrary lib(corpus.config.num_patterns, corpus.config.grid);
  if (lib.grid() != mc.grid) throw std::invalid_argument("corpus grid does not match the model");
  EvalReport rep;
  rep.mode = mc.mode;
  rep.rescale_length = mc.rescale_length;
  rep.sample_seed = opts.sample.seed;
  rep.property_seed = opts.property_seed;
  rep.videos = corpus.records.size();
  std::size_t hits = 0, zero_cut = 0;
  double acc = 0.0, acc_nc = 0.0, cuts = 0.0, cuts_nc = 0.0;
  const std::size_t total = 2 * corpus.records.size();
  std::size_t done = 0;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const auto& rec = corpus.records[i];
    SampleConfig sc = opts.sample;
    sc.seed = Rng(opts.sample.seed).split(static_cast<std::uint64_t>(i)).next_u64();
    SampleOptions so;
    if (mc.first_frame) {
      const std::size_t g = rec.video.dim(1);
      so.first_frame = Tensor({g, g}, std::vector<double>(rec.video.data(), rec.video.data() + g * g));
    }
    const Tensor v = sample(model, rec.script, sc, so);
    if (opts.progress) opts.progress(++done, total);
    so.no_cuts = true;
    const Tensor v_nc = sample(model, rec.script, sc, so);
    if (opts.progress) opts.progress(++done, total);
    const auto det = detect_cuts(v, opts.tau);
    const auto det_nc = detect_cuts(v_nc, opts.tau);
    acc += timing_accuracy(v, rec.script, lib, opts.tau);
    acc_nc += timing_accuracy(v_nc, zero_cut_inference(rec.script), lib, opts.tau);
    cuts += static_cast<double>(det.size());
    cuts_nc += static_cast<double>(det_nc.size());
    zero_cut += det_nc.empty() ? 1 : 0;
    if (!rec.script.cuts.empty()) {
      ++rep.cut_videos;
      for (std::size_t c = 0; c < rec.script.cuts.size(); ++c) {
        const auto err = cut_timing_error(det, rec.script, c);
        rep.cut_timing_errors.push_back(err ? *err : std::numeric_limits<int>::max());
        hits += (err && std::abs(*err) <= 1) ? 1 : 0;
      }
    }
  }
  const double n = std::max<double>(1.0, static_cast<double>(corpus.records.size()));
  rep.timing_accuracy = acc / n;
  rep.timing_accuracy_no_cuts = acc_nc / n;
  rep.mean_cuts_per_video = cuts / n;
  rep.mean_cuts_per_video_no_cuts = cuts_nc / n;
  rep.zero_cut_fraction_no_cuts = static_cast<double>(zero_cut) / n;
  rep.cut_hit_fraction = rep.cut_timing_errors.empty()
                             ? 1.0
                             : static_cast<double>(hits) /
                                   static_cast<double>(rep.cut_timing_errors.size());
  if (uses_rotation(mc.mode)) {
    PropertySuiteConfig pc;
    pc.mode = mc.mode;
    pc.trials = opts.property_trials;
    pc.rescale_lengths = {mc.rescale_length};
    pc.dims = {static_cast<int>(mc.head_dim)};
    pc.seed = opts.property_seed;
    rep.properties = verify_properties(pc).bias;
  }
  return rep;
}

}  // namespace tdit
