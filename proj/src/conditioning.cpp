#include "tdit/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "tdit/kernels.hpp"

namespace tdit {

std::string_view to_string(ConditioningMode mode) {
  switch (mode) {
    case ConditioningMode::kReRoPE: return "rerope";
    case ConditioningMode::kVanillaRoPE: return "vanilla-rope";
    case ConditioningMode::kHardMask: return "hard-mask";
    case ConditioningMode::kConcatTime: return "concat-time";
  }
  return "unknown";
}

ConditioningMode parse_mode(std::string_view name) {
  for (auto m : {ConditioningMode::kReRoPE, ConditioningMode::kVanillaRoPE,
                 ConditioningMode::kHardMask, ConditioningMode::kConcatTime})
    if (name == to_string(m)) return m;
  throw std::invalid_argument("unknown conditioning mode \"" + std::string(name) +
                              "\" (expected rerope, vanilla-rope, hard-mask, concat-time)");
}

bool uses_rotation(ConditioningMode mode) {
  return mode == ConditioningMode::kReRoPE || mode == ConditioningMode::kVanillaRoPE;
}

// --- TimeMlp -----------------------------------------------------------------

namespace {
double silu(double x) { return x / (1.0 + std::exp(-x)); }
double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}
}  // namespace

TimeMlp TimeMlp::init(std::size_t hidden, std::size_t out, Rng& rng) {
  TimeMlp m;
  m.w1 = randn({2, hidden}, rng, 1.0);
  m.b1 = Tensor({hidden});
  m.w2 = randn({hidden, out}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
  m.b2 = Tensor({out});
  return m;
}

std::vector<double> TimeMlp::forward(double t0, double t1, Cache* cache) const {
  const std::size_t hidden = w1.cols(), out = w2.cols();
  std::vector<double> pre(hidden), act(hidden), y(out);
  for (std::size_t h = 0; h < hidden; ++h) {
    pre[h] = t0 * w1.at(0, h) + t1 * w1.at(1, h) + b1[h];
    act[h] = silu(pre[h]);
  }
  for (std::size_t o = 0; o < out; ++o) y[o] = b2[o];
  kernels::gemm_nn_acc(act.data(), w2.data(), y.data(), 1, hidden, out);
  if (cache != nullptr) {
    cache->in[0] = t0;
    cache->in[1] = t1;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

void TimeMlp::backward(std::span<const double> dout, const Cache& cache, Grads& g) const {
  const std::size_t hidden = w1.cols(), out = w2.cols();
  for (std::size_t o = 0; o < out; ++o) g.b2[o] += dout[o];
  kernels::gemm_tn_acc(cache.act.data(), dout.data(), g.w2.data(), 1, hidden, out);
  std::vector<double> dact(hidden, 0.0);
  kernels::gemm_nt_acc(dout.data(), w2.data(), dact.data(), 1, out, hidden);
  for (std::size_t h = 0; h < hidden; ++h) {
    const double dpre = dact[h] * silu_grad(cache.pre[h]);
    g.b1[h] += dpre;
    g.w1.at(0, h) += cache.in[0] * dpre;
    g.w1.at(1, h) += cache.in[1] * dpre;
  }
}

// --- encoding ----------------------------------------------------------------

void rotate_heads(std::span<double> x, double t, const RotaryEncoder& enc) {
  const auto d = static_cast<std::size_t>(enc.dim());
  if (x.size() % d != 0)
    throw ShapeError("rotate_heads: width " + std::to_string(x.size()) +
                     " not divisible by head dim " + std::to_string(d));
  for (std::size_t off = 0; off < x.size(); off += d) enc.rotate_inplace(x.subspan(off, d), t);
}

double key_position(double t_start, double t_end, const EventScript& script,
                    ConditioningMode mode, double rescale_length) {
  const double mid = 0.5 * (t_start + t_end);
  switch (mode) {
    case ConditioningMode::kReRoPE: return rescale_timestamp(mid, script, rescale_length);
    case ConditioningMode::kVanillaRoPE: return mid;
    default: return 0.0;
  }
}

namespace {

EncodedConditioning finish(Tensor features, std::vector<std::optional<double>> positions,
                           const RotaryEncoder& enc, bool rotate) {
  EncodedConditioning c;
  c.tokens = features;
  if (rotate) {
    for (std::size_t r = 0; r < features.rows(); ++r)
      if (positions[r]) rotate_heads(c.tokens.row(r), *positions[r], enc);
    c.positions = std::move(positions);
  }
  c.features = std::move(features);
  return c;
}

}  // namespace

EncodedConditioning encode_events(const Tensor& event_embeddings, const EventScript& script,
                                  const RotaryEncoder& enc, const EncodeOptions& opts) {
  const std::size_t ne = script.events.size();
  if (ne == 0) throw ShapeError("encode_events: script has no events");
  if (event_embeddings.rows() % ne != 0)
    throw ShapeError("encode_events: " + std::to_string(event_embeddings.rows()) +
                     " embedding rows do not split over " + std::to_string(ne) + " events");
  if (event_embeddings.rank() == 3 && event_embeddings.dim(0) != ne)
    throw ShapeError("encode_events: embedding event count mismatch");
  event_embeddings.require_finite("event embeddings");
  const std::size_t per_event = event_embeddings.rows() / ne;
  const std::size_t dc = event_embeddings.cols();
  const bool concat_time = opts.mode == ConditioningMode::kConcatTime;
  if (concat_time && opts.time_mlp == nullptr)
    throw std::invalid_argument("encode_events: ConcatTime requires a time MLP");
  const std::size_t width = concat_time ? dc + opts.time_mlp->out_dim() : dc;

  Tensor features = Tensor::matrix(ne * per_event, width);
  std::vector<std::optional<double>> positions(features.rows());
  EncodedConditioning meta;
  for (std::size_t n = 0; n < ne; ++n) {
    const auto& ev = script.events[n];
    const double t0 = opts.drop_temporal ? 0.0 : ev.t_start;
    const double t1 = opts.drop_temporal ? 0.0 : ev.t_end;
    std::vector<double> time_feat;
    if (concat_time) time_feat = opts.time_mlp->forward(t0 / script.duration, t1 / script.duration);
    double pos = 0.0;
    if (!opts.drop_temporal) {
      if (opts.mode == ConditioningMode::kReRoPE)
        pos = (static_cast<double>(n) + 0.5) * opts.rescale_length;
      else if (opts.mode == ConditioningMode::kVanillaRoPE)
        pos = ev.midpoint();
    }
    for (std::size_t k = 0; k < per_event; ++k) {
      const std::size_t r = n * per_event + k;
      if (!opts.drop_temporal)
        std::copy_n(event_embeddings.data() + r * dc, dc, features.data() + r * width);
      if (concat_time) std::copy(time_feat.begin(), time_feat.end(), features.data() + r * width + dc);
      positions[r] = pos;
      meta.spans.emplace_back(ev.t_start, ev.t_end);
      meta.source_index.push_back({false, n});
    }
  }
  EncodedConditioning out = finish(std::move(features), std::move(positions), enc,
                                   uses_rotation(opts.mode));
  out.spans = std::move(meta.spans);
  out.source_index = std::move(meta.source_index);
  out.event_rows = out.source_index.size();
  out.dropped = opts.drop_temporal;
  return out;
}

EncodedConditioning encode_cuts(std::span<const double> cut_vector, const EventScript& script,
                                const RotaryEncoder& enc, const EncodeOptions& opts, bool drop) {
  const std::size_t dc = cut_vector.size();
  const bool concat_time = opts.mode == ConditioningMode::kConcatTime;
  if (concat_time && opts.time_mlp == nullptr)
    throw std::invalid_argument("encode_cuts: ConcatTime requires a time MLP");
  const std::size_t width = concat_time ? dc + opts.time_mlp->out_dim() : dc;
  const std::size_t nc = script.cuts.size();
  Tensor features = Tensor::matrix(nc, width);
  std::vector<std::optional<double>> positions(nc);
  EncodedConditioning meta;
  for (std::size_t c = 0; c < nc; ++c) {
    const double t = script.cuts[c].t_cut;
    if (!drop) std::copy(cut_vector.begin(), cut_vector.end(), features.data() + c * width);
    if (concat_time) {
      const double tn = drop ? 0.0 : t / script.duration;
      const auto tf = opts.time_mlp->forward(tn, tn);
      std::copy(tf.begin(), tf.end(), features.data() + c * width + dc);
    }
    positions[c] = drop ? 0.0 : key_position(t, t, script, opts.mode, opts.rescale_length);
    meta.spans.emplace_back(t, t);
    meta.source_index.push_back({true, c});
  }
  EncodedConditioning out = finish(std::move(features), std::move(positions), enc,
                                   uses_rotation(opts.mode));
  out.spans = std::move(meta.spans);
  out.source_index = std::move(meta.source_index);
  out.cut_rows = nc;
  out.dropped = drop;
  return out;
}

EncodedConditioning concat(const EncodedConditioning& events, const EncodedConditioning& cuts) {
  if (cuts.rows() > 0 && events.rows() > 0 && events.features.cols() != cuts.features.cols())
    throw ShapeError("concat: event and cut widths differ");
  if (cuts.rows() == 0) {
    EncodedConditioning out = events;
    return out;
  }
  EncodedConditioning out;
  const std::size_t width = events.features.cols();
  const std::size_t rows = events.rows() + cuts.rows();
  out.features = Tensor::matrix(rows, width);
  out.tokens = Tensor::matrix(rows, width);
  std::copy(events.features.storage().begin(), events.features.storage().end(),
            out.features.storage().begin());
  std::copy(cuts.features.storage().begin(), cuts.features.storage().end(),
            out.features.storage().begin() + static_cast<std::ptrdiff_t>(events.features.size()));
  std::copy(events.tokens.storage().begin(), events.tokens.storage().end(),
            out.tokens.storage().begin());
  std::copy(cuts.tokens.storage().begin(), cuts.tokens.storage().end(),
            out.tokens.storage().begin() + static_cast<std::ptrdiff_t>(events.tokens.size()));
  out.positions = events.positions;
  out.positions.insert(out.positions.end(), cuts.positions.begin(), cuts.positions.end());
  out.spans = events.spans;
  out.spans.insert(out.spans.end(), cuts.spans.begin(), cuts.spans.end());
  out.source_index = events.source_index;
  out.source_index.insert(out.source_index.end(), cuts.source_index.begin(),
                          cuts.source_index.end());
  out.event_rows = events.event_rows;
  out.cut_rows = cuts.cut_rows;
  out.dropped = events.dropped;
  return out;
}

std::vector<std::optional<double>> query_positions(std::span<const double> timestamps,
                                                   const EventScript& script,
                                                   ConditioningMode mode, double rescale_length) {
  std::vector<std::optional<double>> pos(timestamps.size());
  if (mode == ConditioningMode::kReRoPE) {
    const RescaleMap map(script, rescale_length);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = map(timestamps[i]);
  } else if (mode == ConditioningMode::kVanillaRoPE) {
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = timestamps[i];
  }
  return pos;
}

AttentionMask temporal_mask(std::span<const double> timestamps, std::size_t tokens_per_frame,
                            const EncodedConditioning& cond, ConditioningMode mode, double fps) {
  AttentionMask mask;
  mask.queries = timestamps.size() * tokens_per_frame;
  mask.keys = cond.rows();
  mask.attendable.assign(mask.queries * mask.keys, 1);
  if (mode != ConditioningMode::kHardMask || cond.dropped) return mask;
  const double window = 1.0 / fps;
  for (std::size_t f = 0; f < timestamps.size(); ++f) {
    const double t = timestamps[f];
    for (std::size_t j = 0; j < cond.rows(); ++j) {
      const auto [lo, hi] = cond.spans[j];
      const bool ok = cond.source_index[j].is_cut ? std::abs(t - lo) <= window * (1.0 + 1e-12)
                                                  : (t >= lo && t <= hi);
      if (ok) continue;
      for (std::size_t s = 0; s < tokens_per_frame; ++s)
        mask.attendable[(f * tokens_per_frame + s) * mask.keys + j] = 0;
    }
  }
  return mask;
}

CrossAttentionWeights CrossAttentionWeights::identity(std::size_t width) {
  CrossAttentionWeights w;
  auto eye = [width] {
    Tensor t = Tensor::matrix(width, width);
    for (std::size_t i = 0; i < width; ++i) t.at(i, i) = 1.0;
    return t;
  };
  w.wq = eye();
  w.wk = eye();
  w.wv = eye();
  w.wo = eye();
  w.bo = Tensor({width});
  return w;
}

Tensor temporal_xattn(const Tensor& video_tokens, std::span<const double> timestamps,
                      const EventScript& script, const EncodedConditioning& cond,
                      ConditioningMode mode, double rescale_length,
                      const CrossAttentionWeights& w, std::size_t heads,
                      const RotaryEncoder& enc) {
  if (video_tokens.rank() != 3) throw ShapeError("temporal_xattn: video tokens must be [T, S, D]");
  const std::size_t frames = video_tokens.dim(0), per_frame = video_tokens.dim(1),
                    width = video_tokens.dim(2);
  if (timestamps.size() != frames) throw ShapeError("temporal_xattn: one timestamp per frame");
  if (cond.rows() == 0) throw std::invalid_argument("temporal_xattn: empty conditioning");
  if (w.wq.rows() != width || w.wk.rows() != cond.features.cols())
    throw ShapeError("temporal_xattn: projection shapes do not match inputs");
  const std::size_t n = frames * per_frame, inner = w.wq.cols();

  Tensor q = Tensor::matrix(n, inner);
  kernels::linear(video_tokens.data(), w.wq.data(), nullptr, q.data(), n, width, inner);
  Tensor k = Tensor::matrix(cond.rows(), inner);
  kernels::linear(cond.features.data(), w.wk.data(), nullptr, k.data(), cond.rows(),
                  cond.features.cols(), inner);
  Tensor v = Tensor::matrix(cond.rows(), inner);
  kernels::linear(cond.features.data(), w.wv.data(), nullptr, v.data(), cond.rows(),
                  cond.features.cols(), inner);

  if (uses_rotation(mode)) {
    const auto frame_pos = query_positions(timestamps, script, mode, rescale_length);
    std::vector<std::optional<double>> row_pos(n);
    for (std::size_t r = 0; r < n; ++r) row_pos[r] = frame_pos[r / per_frame];
    RotaryTable::temporal(row_pos, enc).apply(q, heads);
    RotaryTable::temporal(cond.positions, enc).apply(k, heads);
  }
  const AttentionMask mask = temporal_mask(timestamps, per_frame, cond, mode, script.fps);
  Tensor attended = attention_forward(q, k, v, heads, &mask, nullptr);
  Tensor out({frames, per_frame, w.wo.cols()});
  kernels::linear(attended.data(), w.wo.data(), w.bo.data(), out.data(), n, inner, w.wo.cols());
  out.require_finite("temporal cross-attention output");
  return out;
}

// --- bias maps ---------------------------------------------------------------

Tensor bias_map(const EventScript& script, double rescale_length, ConditioningMode mode,
                std::span<const double> probe, const RotaryEncoder& enc) {
  const auto ts = frame_timestamps(script);
  const std::size_t ne = script.events.size(), nc = script.cuts.size();
  Tensor map = Tensor::matrix(ts.size(), ne + nc);
  if (mode == ConditioningMode::kHardMask) {
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    const double window = 1.0 / script.fps;
    for (std::size_t f = 0; f < ts.size(); ++f) {
      for (std::size_t n = 0; n < ne; ++n) {
        const auto& e = script.events[n];
        map.at(f, n) = (ts[f] >= e.t_start && ts[f] <= e.t_end) ? 0.0 : kNegInf;
      }
      for (std::size_t c = 0; c < nc; ++c)
        map.at(f, ne + c) =
            std::abs(ts[f] - script.cuts[c].t_cut) <= window * (1.0 + 1e-12) ? 0.0 : kNegInf;
    }
    return map;
  }
  if (mode == ConditioningMode::kConcatTime) {
    map.fill(dot(probe, probe));
    return map;
  }
  std::vector<double> key_pos(ne + nc);
  for (std::size_t n = 0; n < ne; ++n)
    key_pos[n] = mode == ConditioningMode::kReRoPE
                     ? (static_cast<double>(n) + 0.5) * rescale_length
                     : script.events[n].midpoint();
  for (std::size_t c = 0; c < nc; ++c)
    key_pos[ne + c] = key_position(script.cuts[c].t_cut, script.cuts[c].t_cut, script, mode,
                                   rescale_length);
  const auto qpos = query_positions(ts, script, mode, rescale_length);
  for (std::size_t f = 0; f < ts.size(); ++f) {
    const auto q = enc.rotate(probe, *qpos[f]);
    for (std::size_t j = 0; j < key_pos.size(); ++j) map.at(f, j) = dot(q, enc.rotate(probe, key_pos[j]));
  }
  return map;
}

std::string bias_map_csv(const Tensor& map) {
  std::ostringstream os;
  char buf[64];
  for (std::size_t r = 0; r < map.rows(); ++r) {
    for (std::size_t c = 0; c < map.cols(); ++c) {
      if (c) os << ',';
      const double v = map.at(r, c);
      if (std::isinf(v)) {
        os << (v < 0 ? "-inf" : "inf");
      } else {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf;
      }
    }
    os << '\n';
  }
  return os.str();
}

std::string bias_map_pgm(const Tensor& map) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : map.storage())
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  std::ostringstream os;
  os << "P5\n" << map.cols() << ' ' << map.rows() << "\n255\n";
  for (double v : map.storage()) {
    int px = 0;
    if (std::isfinite(v)) px = hi > lo ? static_cast<int>(std::lround(255.0 * (v - lo) / (hi - lo))) : 255;
    os.put(static_cast<char>(static_cast<unsigned char>(px)));
  }
  return os.str();
}

}  // namespace tdit
