#include "tdit/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tdit/attention.hpp"
#include "tdit/kernels.hpp"

namespace tdit {

// --- config ------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (blocks == 0) fail("blocks must be >= 1");
  if (heads == 0 || head_dim == 0) fail("heads and head_dim must be >= 1");
  if (model_dim != heads * head_dim) fail("model_dim must equal heads * head_dim");
  if (head_dim % 4 != 0) fail("head_dim must be divisible by 4 (factorized RoPE halves)");
  if (text_dim == 0 || text_dim % head_dim != 0) fail("text_dim must be a multiple of head_dim");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (patch == 0 || grid == 0 || grid % patch != 0) fail("grid must be divisible by patch");
  if (caption_len == 0) fail("caption_len must be >= 1");
  if (max_events == 0) fail("max_events must be >= 1");
  if (!(rescale_length > 0.0)) fail("rescale_length must be > 0");
  if (mlp_ratio == 0) fail("mlp_ratio must be >= 1");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"blocks", c.blocks},
          {"model_dim", c.model_dim},
          {"heads", c.heads},
          {"head_dim", c.head_dim},
          {"text_dim", c.text_dim},
          {"vocab_size", c.vocab_size},
          {"grid", c.grid},
          {"patch", c.patch},
          {"caption_len", c.caption_len},
          {"max_events", c.max_events},
          {"rescale_length", c.rescale_length},
          {"mode", std::string(to_string(c.mode))},
          {"mlp_ratio", c.mlp_ratio},
          {"first_frame", c.first_frame},
          {"spatial_rope", c.spatial_rope}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("model config: expected an object");
  ModelConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "blocks") c.blocks = v.get<std::size_t>();
    else if (k == "model_dim") c.model_dim = v.get<std::size_t>();
    else if (k == "heads") c.heads = v.get<std::size_t>();
    else if (k == "head_dim") c.head_dim = v.get<std::size_t>();
    else if (k == "text_dim") c.text_dim = v.get<std::size_t>();
    else if (k == "vocab_size") c.vocab_size = v.get<int>();
    else if (k == "grid") c.grid = v.get<std::size_t>();
    else if (k == "patch") c.patch = v.get<std::size_t>();
    else if (k == "caption_len") c.caption_len = v.get<std::size_t>();
    else if (k == "max_events") c.max_events = v.get<std::size_t>();
    else if (k == "rescale_length") c.rescale_length = v.get<double>();
    else if (k == "mode") c.mode = parse_mode(v.get<std::string>());
    else if (k == "mlp_ratio") c.mlp_ratio = v.get<std::size_t>();
    else if (k == "first_frame") c.first_frame = v.get<bool>();
    else if (k == "spatial_rope") c.spatial_rope = v.get<bool>();
    else throw std::invalid_argument("model config: unknown field \"" + k + "\"");
  }
  return c;
}

std::uint64_t config_hash(const ModelConfig& cfg) {
  const std::string s = to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// --- parameters --------------------------------------------------------------

std::size_t ParamStore::add(std::string name, Tensor value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name " + name);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> out;
  out.reserve(count());
  for (const auto& t : tensors_) out.insert(out.end(), t.storage().begin(), t.storage().end());
  return out;
}

void ParamStore::unflatten(std::span<const double> flat) {
  if (flat.size() != count()) throw ShapeError("ParamStore::unflatten: size mismatch");
  std::size_t off = 0;
  for (auto& t : tensors_) {
    std::copy_n(flat.data() + off, t.size(), t.data());
    off += t.size();
  }
}

ParamStore ParamStore::zeros_like() const {
  ParamStore z;
  for (std::size_t i = 0; i < size(); ++i) z.add(names_[i], Tensor(tensors_[i].shape()));
  return z;
}

void ParamStore::zero() {
  for (auto& t : tensors_) t.fill(0.0);
}

ToyDiT::ToyDiT(ModelConfig cfg) : config_(std::move(cfg)) {
  config_.validate();
  const auto& c = config_;
  const std::size_t D = c.model_dim, Dc = c.text_dim, V = static_cast<std::size_t>(c.vocab_size);
  const std::size_t Dk = c.cond_width(), H = c.mlp_ratio * D;
  auto& p = params_;
  ids_.global_embed = p.add("text.global_embed", Tensor({V, Dc}));
  ids_.event_embed = p.add("text.event_embed", Tensor({V, Dc}));
  ids_.cut_vector = p.add("text.cut_vector", Tensor({Dc}));
  if (c.mode == ConditioningMode::kConcatTime) {
    ids_.tm_w1 = p.add("text.time_mlp.w1", Tensor({2, Dc}));
    ids_.tm_b1 = p.add("text.time_mlp.b1", Tensor({Dc}));
    ids_.tm_w2 = p.add("text.time_mlp.w2", Tensor({Dc, Dc}));
    ids_.tm_b2 = p.add("text.time_mlp.b2", Tensor({Dc}));
  }
  ids_.patch_w = p.add("patch.w", Tensor({c.in_channels(), D}));
  ids_.patch_b = p.add("patch.b", Tensor({D}));
  ids_.temb_w1 = p.add("time_embed.w1", Tensor({D, D}));
  ids_.temb_b1 = p.add("time_embed.b1", Tensor({D}));
  ids_.temb_w2 = p.add("time_embed.w2", Tensor({D, D}));
  ids_.temb_b2 = p.add("time_embed.b2", Tensor({D}));
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    BlockParamIds ib{};
    ib.mod_w = p.add(pre + "mod.w", Tensor({D, 8 * D}));
    ib.mod_b = p.add(pre + "mod.b", Tensor({8 * D}));
    ib.sa_q = p.add(pre + "self_attn.wq", Tensor({D, D}));
    ib.sa_k = p.add(pre + "self_attn.wk", Tensor({D, D}));
    ib.sa_v = p.add(pre + "self_attn.wv", Tensor({D, D}));
    ib.sa_o = p.add(pre + "self_attn.wo", Tensor({D, D}));
    ib.sa_ob = p.add(pre + "self_attn.bo", Tensor({D}));
    ib.tx_q = p.add(pre + "temporal_xattn.wq", Tensor({D, D}));
    ib.tx_k = p.add(pre + "temporal_xattn.wk", Tensor({Dk, D}));
    ib.tx_v = p.add(pre + "temporal_xattn.wv", Tensor({Dk, D}));
    ib.tx_o = p.add(pre + "temporal_xattn.wo", Tensor({D, D}));
    ib.tx_ob = p.add(pre + "temporal_xattn.bo", Tensor({D}));
    ib.gate = p.add(pre + "temporal_xattn.gate", Tensor({1}));
    ib.gx_q = p.add(pre + "global_xattn.wq", Tensor({D, D}));
    ib.gx_k = p.add(pre + "global_xattn.wk", Tensor({Dc, D}));
    ib.gx_v = p.add(pre + "global_xattn.wv", Tensor({Dc, D}));
    ib.gx_o = p.add(pre + "global_xattn.wo", Tensor({D, D}));
    ib.gx_ob = p.add(pre + "global_xattn.bo", Tensor({D}));
    ib.mlp_w1 = p.add(pre + "mlp.w1", Tensor({D, H}));
    ib.mlp_b1 = p.add(pre + "mlp.b1", Tensor({H}));
    ib.mlp_w2 = p.add(pre + "mlp.w2", Tensor({H, D}));
    ib.mlp_b2 = p.add(pre + "mlp.b2", Tensor({D}));
    ids_.blocks.push_back(ib);
  }
  ids_.final_mod_w = p.add("final.mod.w", Tensor({D, 2 * D}));
  ids_.final_mod_b = p.add("final.mod.b", Tensor({2 * D}));
  ids_.final_w = p.add("final.w", Tensor({D, c.patch_dim()}));
  ids_.final_b = p.add("final.b", Tensor({c.patch_dim()}));
}

ToyDiT ToyDiT::zeros(const ModelConfig& cfg) { return ToyDiT(cfg); }

ToyDiT ToyDiT::init(const ModelConfig& cfg, Rng& rng_in) {
  ToyDiT m(cfg);
  Rng rng = rng_in.split("model-init");
  auto& p = m.params_;
  auto fill = [&](std::size_t id, double stddev) {
    for (double& v : p[id].storage()) v = stddev * rng.normal();
  };
  auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  const auto& c = m.config_;
  const std::size_t D = c.model_dim, Dc = c.text_dim, H = c.mlp_ratio * D;
  const auto& ids = m.ids_;
  fill(ids.global_embed, 1.0);
  fill(ids.event_embed, 1.0);
  fill(ids.cut_vector, 1.0);
  if (ids.tm_w1) {
    fill(*ids.tm_w1, 1.0);
    fill(*ids.tm_w2, inv_sqrt(Dc));
  }
  fill(ids.patch_w, inv_sqrt(c.in_channels()));
  fill(ids.temb_w1, inv_sqrt(D));
  fill(ids.temb_w2, inv_sqrt(D));
  for (const auto& b : ids.blocks) {
    fill(b.mod_w, 0.1 * inv_sqrt(D));
    for (auto id : {b.sa_q, b.sa_k, b.sa_v, b.sa_o, b.gx_q, b.gx_o}) fill(id, inv_sqrt(D));
    fill(b.gx_k, inv_sqrt(Dc));
    fill(b.gx_v, inv_sqrt(Dc));
    fill(b.mlp_w1, inv_sqrt(D));
    fill(b.mlp_w2, inv_sqrt(H));
    // Temporal layer starts as a copy of the global cross-attention; extra
    // ConcatTime input rows start at zero.
    p[b.tx_q] = p[b.gx_q];
    p[b.tx_o] = p[b.gx_o];
    p[b.tx_ob] = p[b.gx_ob];
    std::copy(p[b.gx_k].storage().begin(), p[b.gx_k].storage().end(), p[b.tx_k].data());
    std::copy(p[b.gx_v].storage().begin(), p[b.gx_v].storage().end(), p[b.tx_v].data());
    p[b.gate][0] = 0.0;
  }
  fill(ids.final_mod_w, 0.1 * inv_sqrt(D));
  fill(ids.final_w, inv_sqrt(D));
  return m;
}

std::size_t count_params(const ToyDiT& model) { return model.params().count(); }

// --- patches -----------------------------------------------------------------

Tensor patchify(const Tensor& video, std::size_t patch) {
  if (video.rank() != 3 || video.dim(1) != video.dim(2))
    throw ShapeError("patchify: expected a [T, G, G] video, got " + shape_string(video.shape()));
  const std::size_t frames = video.dim(0), g = video.dim(1);
  if (patch == 0 || g % patch != 0)
    throw ShapeError("patchify: grid " + std::to_string(g) + " not divisible by patch " +
                     std::to_string(patch));
  const std::size_t per_side = g / patch, s = per_side * per_side, c = patch * patch;
  Tensor out({frames, s, c});
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t py = 0; py < per_side; ++py)
      for (std::size_t px = 0; px < per_side; ++px)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            out[(f * s + py * per_side + px) * c + y * patch + x] =
                video[(f * g + py * patch + y) * g + px * patch + x];
  return out;
}

Tensor unpatchify(const Tensor& tokens, std::size_t grid, std::size_t patch) {
  if (patch == 0 || grid % patch != 0) throw ShapeError("unpatchify: grid not divisible by patch");
  const std::size_t per_side = grid / patch, s = per_side * per_side, c = patch * patch;
  if (tokens.rank() != 3 || tokens.dim(1) != s || tokens.dim(2) != c)
    throw ShapeError("unpatchify: expected [T, " + std::to_string(s) + ", " + std::to_string(c) +
                     "], got " + shape_string(tokens.shape()));
  const std::size_t frames = tokens.dim(0);
  Tensor out({frames, grid, grid});
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t py = 0; py < per_side; ++py)
      for (std::size_t px = 0; px < per_side; ++px)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            out[(f * grid + py * patch + y) * grid + px * patch + x] =
                tokens[(f * s + py * per_side + px) * c + y * patch + x];
  return out;
}

// --- building blocks -----------------------------------------------------------

namespace {

constexpr double kLnEps = 1e-6;

double silu(double x) { return x / (1.0 + std::exp(-x)); }
double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}
double gelu_grad(double x) {
  const double th = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

/// out = x w (+ b)
Tensor lin(const Tensor& x, const Tensor& w, const Tensor* b) {
  Tensor out = Tensor::matrix(x.rows(), w.cols());
  kernels::linear(x.data(), w.data(), b ? b->data() : nullptr, out.data(), x.rows(), w.rows(),
                  w.cols());
  return out;
}

/// Backprop of y = x w + b: dw += x^T dy, db += colsum(dy), dx += dy w^T.
void lin_back(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor& dw,
              Tensor* db) {
  const std::size_t m = x.rows(), k = w.rows(), n = w.cols();
  kernels::gemm_tn_acc(x.data(), dy.data(), dw.data(), m, k, n);
  if (db) kernels::colsum_acc(dy.data(), db->data(), m, n);
  if (dx) kernels::gemm_nt_acc(dy.data(), w.data(), dx->data(), m, n, k);
}

struct LnCache {
  Tensor xhat;
  std::vector<double> rstd;
};

/// u = LayerNorm(x) * (1 + scale) + shift, no learned affine.
Tensor mod_ln(const Tensor& x, const double* shift, const double* scale, LnCache& cache) {
  const std::size_t n = x.rows(), d = x.cols();
  cache.xhat = Tensor::matrix(n, d);
  cache.rstd.resize(n);
  Tensor u = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = x.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd[i] = rstd;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (xr[j] - mean) * rstd;
      cache.xhat.at(i, j) = xh;
      u.at(i, j) = xh * (1.0 + scale[j]) + shift[j];
    }
  }
  return u;
}

void mod_ln_back(const Tensor& du, const LnCache& cache, const double* scale, Tensor& dx,
                 double* dshift, double* dscale) {
  const std::size_t n = du.rows(), d = du.cols();
  std::vector<double> dxh(d);
  for (std::size_t i = 0; i < n; ++i) {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = du.at(i, j);
      const double xh = cache.xhat.at(i, j);
      dshift[j] += g;
      dscale[j] += g * xh;
      dxh[j] = g * (1.0 + scale[j]);
      m1 += dxh[j];
      m2 += dxh[j] * xh;
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j)
      dx.at(i, j) += cache.rstd[i] * (dxh[j] - m1 - cache.xhat.at(i, j) * m2);
  }
}

void add_into(Tensor& a, const Tensor& b, double s = 1.0) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

std::vector<double> time_features(double t, std::size_t d) {
  const std::size_t half = d / 2;
  std::vector<double> f(d, 0.0);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    f[k] = std::cos(1000.0 * t * freq);
    f[half + k] = std::sin(1000.0 * t * freq);
  }
  return f;
}

TimeMlp time_mlp_view(const ToyDiT& m) {
  const auto& ids = m.ids();
  const auto& p = m.params();
  return TimeMlp{p[*ids.tm_w1], p[*ids.tm_b1], p[*ids.tm_w2], p[*ids.tm_b2]};
}

std::vector<int> padded_caption(const TemporalCaption& e, std::size_t len, int vocab) {
  if (e.tokens.size() > len)
    throw ShapeError("temporal caption has " + std::to_string(e.tokens.size()) +
                     " tokens, model accepts at most " + std::to_string(len));
  std::vector<int> out(len, 0);
  for (std::size_t i = 0; i < e.tokens.size(); ++i) {
    if (e.tokens[i] < 0 || e.tokens[i] >= vocab)
      throw std::invalid_argument("token id " + std::to_string(e.tokens[i]) + " outside vocab");
    out[i] = e.tokens[i];
  }
  return out;
}

}  // namespace

// --- tape ------------------------------------------------------------------------

struct BlockTape {
  std::vector<double> mod;
  LnCache ln[4];
  Tensor u[4];
  Tensor sa_q, sa_k, sa_v, sa_att;
  AttentionCache sa_cache;
  bool tx_active = false;
  double gate_tanh = 0.0;
  Tensor tx_q, tx_k, tx_v, tx_att, tx_out;
  AttentionCache tx_cache;
  Tensor gx_q, gx_k, gx_v, gx_att;
  AttentionCache gx_cache;
  Tensor mlp_pre, mlp_act;
};

struct Tape::Data {
  ConditioningInputs cond;
  std::size_t frames = 0, per_frame = 0;
  Tensor x;
  std::vector<double> tf, a1, s1, c, cs;
  EncodedConditioning enc;
  Tensor global_rows;
  std::vector<int> global_ids;  // -1 for rows that carry no embedding
  std::vector<int> event_ids;   // per event row, -1 when dropped
  RotaryTable sa_table, tq_table, tk_table;
  AttentionMask mask;
  bool masked = false;
  std::vector<BlockTape> blocks;
  std::vector<double> fmod;
  LnCache fln;
  Tensor fu;
};

Tape::Tape() : data_(std::make_unique<Data>()) {}
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;

namespace {

struct TextRows {
  Tensor global_rows;
  std::vector<int> global_ids;
  std::vector<int> event_ids;
  EncodedConditioning enc;
};

TextRows embed_text(const ToyDiT& model, const ConditioningInputs& cond) {
  const auto& cfg = model.config();
  const auto& p = model.params();
  const auto& ids = model.ids();
  const auto& script = cond.script;
  const std::size_t dc = cfg.text_dim;
  if (script.events.size() > cfg.max_events)
    throw std::invalid_argument("script has " + std::to_string(script.events.size()) +
                                " events, model accepts at most " +
                                std::to_string(cfg.max_events));
  TextRows out;
  // Global caption rows; an empty caption contributes one zero row.
  const std::size_t ng = std::max<std::size_t>(1, script.global_tokens.size());
  out.global_rows = Tensor::matrix(ng, dc);
  out.global_ids.assign(ng, -1);
  if (!cond.drop_global) {
    for (std::size_t i = 0; i < script.global_tokens.size(); ++i) {
      const int tok = script.global_tokens[i];
      if (tok < 0 || tok >= cfg.vocab_size)
        throw std::invalid_argument("global token id " + std::to_string(tok) + " outside vocab");
      out.global_ids[i] = tok;
      std::copy_n(p[ids.global_embed].data() + static_cast<std::size_t>(tok) * dc, dc,
                  out.global_rows.data() + i * dc);
    }
  }
  // Event rows.
  const std::size_t ne = script.events.size(), lc = cfg.caption_len;
  Tensor emb = Tensor::matrix(ne * lc, dc);
  out.event_ids.assign(ne * lc, -1);
  for (std::size_t n = 0; n < ne; ++n) {
    const auto toks = padded_caption(script.events[n], lc, cfg.vocab_size);
    for (std::size_t k = 0; k < lc; ++k) {
      const std::size_t r = n * lc + k;
      std::copy_n(p[ids.event_embed].data() + static_cast<std::size_t>(toks[k]) * dc, dc,
                  emb.data() + r * dc);
      if (!cond.drop_temporal) out.event_ids[r] = toks[k];
    }
  }
  const RotaryEncoder enc(static_cast<int>(cfg.head_dim));
  EncodeOptions opts;
  opts.mode = cfg.mode;
  opts.rescale_length = cfg.rescale_length;
  opts.drop_temporal = cond.drop_temporal;
  TimeMlp tm;
  if (cfg.mode == ConditioningMode::kConcatTime) {
    tm = time_mlp_view(model);
    opts.time_mlp = &tm;
  }
  out.enc = concat(encode_events(emb, script, enc, opts),
                   encode_cuts(p[ids.cut_vector].values(), script, enc, opts, cond.drop_cuts));
  return out;
}

}  // namespace

EncodedConditioning encode_conditioning(const ToyDiT& model, const ConditioningInputs& cond) {
  return embed_text(model, cond).enc;
}

Tensor forward(const ToyDiT& model, const Tensor& x_in, double t_diff,
               const ConditioningInputs& cond, const ForwardOptions& opts, Tape* tape) {
  const auto& cfg = model.config();
  const auto& p = model.params();
  const auto& ids = model.ids();
  const std::size_t D = cfg.model_dim, H = cfg.heads;
  if (x_in.rank() != 3 || x_in.dim(1) != cfg.patches_per_frame() ||
      x_in.dim(2) != cfg.in_channels())
    throw ShapeError("forward: expected input [T, " + std::to_string(cfg.patches_per_frame()) +
                     ", " + std::to_string(cfg.in_channels()) + "], got " +
                     shape_string(x_in.shape()));
  const std::size_t frames = x_in.dim(0), per_frame = x_in.dim(1), n = frames * per_frame;
  if (frames != cond.script.num_frames())
    throw ShapeError("forward: " + std::to_string(frames) + " frames but the script implies " +
                     std::to_string(cond.script.num_frames()));
  if (!std::isfinite(t_diff)) throw NumericError("forward: non-finite diffusion time");
  x_in.require_finite("model input");

  Tape local;
  Tape::Data& tp = tape ? tape->data() : local.data();
  tp = Tape::Data{};
  tp.cond = cond;
  tp.frames = frames;
  tp.per_frame = per_frame;
  tp.x = x_in;
  tp.x.reshape({n, cfg.in_channels()});

  // Diffusion-time embedding and the shared SiLU(c) used by every modulation.
  tp.tf = time_features(t_diff, D);
  tp.a1.assign(D, 0.0);
  kernels::linear(tp.tf.data(), p[ids.temb_w1].data(), p[ids.temb_b1].data(), tp.a1.data(), 1, D,
                  D);
  tp.s1.resize(D);
  for (std::size_t i = 0; i < D; ++i) tp.s1[i] = silu(tp.a1[i]);
  tp.c.assign(D, 0.0);
  kernels::linear(tp.s1.data(), p[ids.temb_w2].data(), p[ids.temb_b2].data(), tp.c.data(), 1, D,
                  D);
  tp.cs.resize(D);
  for (std::size_t i = 0; i < D; ++i) tp.cs[i] = silu(tp.c[i]);

  TextRows text = embed_text(model, cond);
  tp.enc = std::move(text.enc);
  tp.global_rows = std::move(text.global_rows);
  tp.global_ids = std::move(text.global_ids);
  tp.event_ids = std::move(text.event_ids);

  // Rotary tables.
  std::vector<double> fpos(n), spos(n);
  for (std::size_t r = 0; r < n; ++r) {
    fpos[r] = static_cast<double>(r / per_frame);
    spos[r] = cfg.spatial_rope ? static_cast<double>(r % per_frame) : 0.0;
  }
  tp.sa_table = RotaryTable::factorized(fpos, spos, static_cast<int>(cfg.head_dim));
  const auto timestamps = frame_timestamps(cond.script);
  const RotaryEncoder tenc(static_cast<int>(cfg.head_dim));
  if (uses_rotation(cfg.mode)) {
    const auto qpos = query_positions(timestamps, cond.script, cfg.mode, cfg.rescale_length);
    std::vector<std::optional<double>> row_pos(n);
    for (std::size_t r = 0; r < n; ++r) row_pos[r] = qpos[r / per_frame];
    tp.tq_table = RotaryTable::temporal(row_pos, tenc);
    tp.tk_table = RotaryTable::temporal(tp.enc.positions, tenc);
  }
  tp.masked = cfg.mode == ConditioningMode::kHardMask && !tp.enc.dropped;
  if (tp.masked) tp.mask = temporal_mask(timestamps, per_frame, tp.enc, cfg.mode, cond.script.fps);

  Tensor h = lin(tp.x, p[ids.patch_w], &p[ids.patch_b]);
  tp.blocks.resize(cfg.blocks);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const auto& ib = ids.blocks[b];
    BlockTape& bt = tp.blocks[b];
    bt.mod.assign(8 * D, 0.0);
    kernels::linear(tp.cs.data(), p[ib.mod_w].data(), p[ib.mod_b].data(), bt.mod.data(), 1, D,
                    8 * D);
    const double* mod = bt.mod.data();

    // Self-attention with factorized RoPE.
    bt.u[0] = mod_ln(h, mod + 0 * D, mod + 1 * D, bt.ln[0]);
    bt.sa_q = lin(bt.u[0], p[ib.sa_q], nullptr);
    bt.sa_k = lin(bt.u[0], p[ib.sa_k], nullptr);
    bt.sa_v = lin(bt.u[0], p[ib.sa_v], nullptr);
    tp.sa_table.apply(bt.sa_q, H);
    tp.sa_table.apply(bt.sa_k, H);
    bt.sa_att = attention_forward(bt.sa_q, bt.sa_k, bt.sa_v, H, nullptr, &bt.sa_cache);
    add_into(h, lin(bt.sa_att, p[ib.sa_o], &p[ib.sa_ob]));

    // Gated temporal cross-attention.
    bt.tx_active = !opts.skip_temporal;
    if (bt.tx_active) {
      bt.u[1] = mod_ln(h, mod + 2 * D, mod + 3 * D, bt.ln[1]);
      bt.tx_q = lin(bt.u[1], p[ib.tx_q], nullptr);
      bt.tx_k = lin(tp.enc.features, p[ib.tx_k], nullptr);
      bt.tx_v = lin(tp.enc.features, p[ib.tx_v], nullptr);
      if (uses_rotation(cfg.mode)) {
        tp.tq_table.apply(bt.tx_q, H);
        tp.tk_table.apply(bt.tx_k, H);
      }
      bt.tx_att = attention_forward(bt.tx_q, bt.tx_k, bt.tx_v, H, tp.masked ? &tp.mask : nullptr,
                                    &bt.tx_cache);
      bt.tx_out = lin(bt.tx_att, p[ib.tx_o], &p[ib.tx_ob]);
      bt.gate_tanh = std::tanh(p[ib.gate][0]);
      add_into(h, bt.tx_out, bt.gate_tanh);
    }

    // Global cross-attention, no positional encoding.
    bt.u[2] = mod_ln(h, mod + 4 * D, mod + 5 * D, bt.ln[2]);
    bt.gx_q = lin(bt.u[2], p[ib.gx_q], nullptr);
    bt.gx_k = lin(tp.global_rows, p[ib.gx_k], nullptr);
    bt.gx_v = lin(tp.global_rows, p[ib.gx_v], nullptr);
    bt.gx_att = attention_forward(bt.gx_q, bt.gx_k, bt.gx_v, H, nullptr, &bt.gx_cache);
    add_into(h, lin(bt.gx_att, p[ib.gx_o], &p[ib.gx_ob]));

    // MLP.
    bt.u[3] = mod_ln(h, mod + 6 * D, mod + 7 * D, bt.ln[3]);
    bt.mlp_pre = lin(bt.u[3], p[ib.mlp_w1], &p[ib.mlp_b1]);
    bt.mlp_act = bt.mlp_pre;
    for (double& v : bt.mlp_act.storage()) v = gelu(v);
    add_into(h, lin(bt.mlp_act, p[ib.mlp_w2], &p[ib.mlp_b2]));
    h.require_finite("block " + std::to_string(b) + " activations");
  }

  tp.fmod.assign(2 * D, 0.0);
  kernels::linear(tp.cs.data(), p[ids.final_mod_w].data(), p[ids.final_mod_b].data(),
                  tp.fmod.data(), 1, D, 2 * D);
  tp.fu = mod_ln(h, tp.fmod.data(), tp.fmod.data() + D, tp.fln);
  Tensor y = lin(tp.fu, p[ids.final_w], &p[ids.final_b]);
  y.reshape({frames, per_frame, cfg.patch_dim()});
  y.require_finite("model output");
  return y;
}

void backward(const ToyDiT& model, const Tape& tape, const Tensor& dout_in, ParamStore& g) {
  const auto& cfg = model.config();
  const auto& p = model.params();
  const auto& ids = model.ids();
  const Tape::Data& tp = tape.data();
  const std::size_t D = cfg.model_dim, n = tp.frames * tp.per_frame;
  if (dout_in.size() != n * cfg.patch_dim()) throw ShapeError("backward: output gradient shape");
  if (g.size() != p.size()) throw ShapeError("backward: gradient store layout mismatch");
  Tensor dy = dout_in;
  dy.reshape({n, cfg.patch_dim()});

  std::vector<double> dcs(D, 0.0);
  Tensor dh = Tensor::matrix(n, D);
  {
    Tensor dfu = Tensor::matrix(n, D);
    lin_back(tp.fu, p[ids.final_w], dy, &dfu, g[ids.final_w], &g[ids.final_b]);
    std::vector<double> dfmod(2 * D, 0.0);
    mod_ln_back(dfu, tp.fln, tp.fmod.data() + D, dh, dfmod.data(), dfmod.data() + D);
    kernels::gemm_tn_acc(tp.cs.data(), dfmod.data(), g[ids.final_mod_w].data(), 1, D, 2 * D);
    for (std::size_t i = 0; i < 2 * D; ++i) g[ids.final_mod_b][i] += dfmod[i];
    kernels::gemm_nt_acc(dfmod.data(), p[ids.final_mod_w].data(), dcs.data(), 1, 2 * D, D);
  }

  const std::size_t H = cfg.heads;
  Tensor dglobal = Tensor::matrix(tp.global_rows.rows(), tp.global_rows.cols());
  Tensor dfeat = Tensor::matrix(tp.enc.features.rows(), tp.enc.features.cols());
  for (std::size_t bi = cfg.blocks; bi-- > 0;) {
    const auto& ib = ids.blocks[bi];
    const BlockTape& bt = tp.blocks[bi];
    const double* mod = bt.mod.data();
    std::vector<double> dmod(8 * D, 0.0);

    // MLP.
    {
      Tensor dact = Tensor::matrix(n, bt.mlp_act.cols());
      lin_back(bt.mlp_act, p[ib.mlp_w2], dh, &dact, g[ib.mlp_w2], &g[ib.mlp_b2]);
      for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= gelu_grad(bt.mlp_pre[i]);
      Tensor du = Tensor::matrix(n, D);
      lin_back(bt.u[3], p[ib.mlp_w1], dact, &du, g[ib.mlp_w1], &g[ib.mlp_b1]);
      mod_ln_back(du, bt.ln[3], mod + 7 * D, dh, dmod.data() + 6 * D, dmod.data() + 7 * D);
    }
    // Global cross-attention.
    {
      Tensor datt = Tensor::matrix(n, D);
      lin_back(bt.gx_att, p[ib.gx_o], dh, &datt, g[ib.gx_o], &g[ib.gx_ob]);
      const auto ag = attention_backward(datt, bt.gx_q, bt.gx_k, bt.gx_v, bt.gx_cache);
      Tensor du = Tensor::matrix(n, D);
      lin_back(bt.u[2], p[ib.gx_q], ag.dq, &du, g[ib.gx_q], nullptr);
      lin_back(tp.global_rows, p[ib.gx_k], ag.dk, &dglobal, g[ib.gx_k], nullptr);
      lin_back(tp.global_rows, p[ib.gx_v], ag.dv, &dglobal, g[ib.gx_v], nullptr);
      mod_ln_back(du, bt.ln[2], mod + 5 * D, dh, dmod.data() + 4 * D, dmod.data() + 5 * D);
    }
    // Gated temporal cross-attention.
    if (bt.tx_active) {
      double dgate = 0.0;
      for (std::size_t i = 0; i < dh.size(); ++i) dgate += dh[i] * bt.tx_out[i];
      g[ib.gate][0] += dgate * (1.0 - bt.gate_tanh * bt.gate_tanh);
      Tensor dto = dh;
      for (double& v : dto.storage()) v *= bt.gate_tanh;
      Tensor datt = Tensor::matrix(n, D);
      lin_back(bt.tx_att, p[ib.tx_o], dto, &datt, g[ib.tx_o], &g[ib.tx_ob]);
      auto ag = attention_backward(datt, bt.tx_q, bt.tx_k, bt.tx_v, bt.tx_cache);
      if (uses_rotation(cfg.mode)) {
        tp.tq_table.apply(ag.dq, H, /*inverse=*/true);
        tp.tk_table.apply(ag.dk, H, /*inverse=*/true);
      }
      Tensor du = Tensor::matrix(n, D);
      lin_back(bt.u[1], p[ib.tx_q], ag.dq, &du, g[ib.tx_q], nullptr);
      lin_back(tp.enc.features, p[ib.tx_k], ag.dk, &dfeat, g[ib.tx_k], nullptr);
      lin_back(tp.enc.features, p[ib.tx_v], ag.dv, &dfeat, g[ib.tx_v], nullptr);
      mod_ln_back(du, bt.ln[1], mod + 3 * D, dh, dmod.data() + 2 * D, dmod.data() + 3 * D);
    }
    // Self-attention.
    {
      Tensor datt = Tensor::matrix(n, D);
      lin_back(bt.sa_att, p[ib.sa_o], dh, &datt, g[ib.sa_o], &g[ib.sa_ob]);
      auto ag = attention_backward(datt, bt.sa_q, bt.sa_k, bt.sa_v, bt.sa_cache);
      tp.sa_table.apply(ag.dq, H, true);
      tp.sa_table.apply(ag.dk, H, true);
      Tensor du = Tensor::matrix(n, D);
      lin_back(bt.u[0], p[ib.sa_q], ag.dq, &du, g[ib.sa_q], nullptr);
      lin_back(bt.u[0], p[ib.sa_k], ag.dk, &du, g[ib.sa_k], nullptr);
      lin_back(bt.u[0], p[ib.sa_v], ag.dv, &du, g[ib.sa_v], nullptr);
      mod_ln_back(du, bt.ln[0], mod + 1 * D, dh, dmod.data(), dmod.data() + D);
    }
    kernels::gemm_tn_acc(tp.cs.data(), dmod.data(), g[ib.mod_w].data(), 1, D, 8 * D);
    for (std::size_t i = 0; i < 8 * D; ++i) g[ib.mod_b][i] += dmod[i];
    kernels::gemm_nt_acc(dmod.data(), p[ib.mod_w].data(), dcs.data(), 1, 8 * D, D);
  }

  // Patch embedding.
  lin_back(tp.x, p[ids.patch_w], dh, nullptr, g[ids.patch_w], &g[ids.patch_b]);

  // Time embedding.
  {
    std::vector<double> dc(D), ds1(D, 0.0);
    for (std::size_t i = 0; i < D; ++i) dc[i] = dcs[i] * silu_grad(tp.c[i]);
    kernels::gemm_tn_acc(tp.s1.data(), dc.data(), g[ids.temb_w2].data(), 1, D, D);
    for (std::size_t i = 0; i < D; ++i) g[ids.temb_b2][i] += dc[i];
    kernels::gemm_nt_acc(dc.data(), p[ids.temb_w2].data(), ds1.data(), 1, D, D);
    for (std::size_t i = 0; i < D; ++i) ds1[i] *= silu_grad(tp.a1[i]);
    kernels::gemm_tn_acc(tp.tf.data(), ds1.data(), g[ids.temb_w1].data(), 1, D, D);
    for (std::size_t i = 0; i < D; ++i) g[ids.temb_b1][i] += ds1[i];
  }

  // Text embeddings.
  const std::size_t dc = cfg.text_dim;
  for (std::size_t r = 0; r < tp.global_ids.size(); ++r) {
    if (tp.global_ids[r] < 0) continue;
    double* dst = g[ids.global_embed].data() + static_cast<std::size_t>(tp.global_ids[r]) * dc;
    for (std::size_t j = 0; j < dc; ++j) dst[j] += dglobal.at(r, j);
  }
  if (dfeat.rows() == 0) return;
  const std::size_t width = dfeat.cols();
  for (std::size_t r = 0; r < tp.enc.rows(); ++r) {
    const auto src = tp.enc.source_index[r];
    const double* drow = dfeat.data() + r * width;
    if (!src.is_cut) {
      if (tp.event_ids[r] >= 0) {
        double* dst = g[ids.event_embed].data() + static_cast<std::size_t>(tp.event_ids[r]) * dc;
        for (std::size_t j = 0; j < dc; ++j) dst[j] += drow[j];
      }
    } else if (!tp.cond.drop_cuts) {
      for (std::size_t j = 0; j < dc; ++j) g[ids.cut_vector][j] += drow[j];
    }
  }
  if (cfg.mode != ConditioningMode::kConcatTime) return;
  const TimeMlp tm = time_mlp_view(model);
  TimeMlp::Grads tg{g[*ids.tm_w1], g[*ids.tm_b1], g[*ids.tm_w2], g[*ids.tm_b2]};
  const auto& script = tp.cond.script;
  TimeMlp::Cache cache;
  for (std::size_t r = 0; r < tp.enc.rows(); ++r) {
    const auto src = tp.enc.source_index[r];
    double t0 = 0.0, t1 = 0.0;
    if (!src.is_cut && !tp.cond.drop_temporal) {
      t0 = script.events[src.index].t_start / script.duration;
      t1 = script.events[src.index].t_end / script.duration;
    } else if (src.is_cut && !tp.cond.drop_cuts) {
      t0 = t1 = script.cuts[src.index].t_cut / script.duration;
    }
    tm.forward(t0, t1, &cache);
    tm.backward(std::span<const double>(dfeat.data() + r * width + dc, dc), cache, tg);
  }
  g[*ids.tm_w1] = std::move(tg.w1);
  g[*ids.tm_b1] = std::move(tg.b1);
  g[*ids.tm_w2] = std::move(tg.w2);
  g[*ids.tm_b2] = std::move(tg.b2);
}

// --- checkpoints -------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

constexpr char kMagic[8] = {'M', 'I', 'N', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
  return v;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void write_tensor_file(const std::string& path, const nlohmann::json& header,
                       const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kVersion);
  const std::string hs = header.dump();
  put<std::uint64_t>(os, hs.size());
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  put<std::uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, kDtypeF64);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t->data()),
             static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

std::pair<nlohmann::json, std::vector<std::pair<std::string, Tensor>>> read_tensor_file(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error(path + ": bad magic, not a checkpoint");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
  const auto hlen = get<std::uint64_t>(is, "header length");
  if (hlen > (1u << 30)) throw std::runtime_error(path + ": implausible header length");
  std::string hs(hlen, '\0');
  if (!is.read(hs.data(), static_cast<std::streamsize>(hlen)))
    throw std::runtime_error(path + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": header is not valid JSON: " + e.what());
  }
  const auto count = get<std::uint64_t>(is, "tensor count");
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = get<std::uint32_t>(is, "name length");
    if (nlen > 4096) throw std::runtime_error(path + ": implausible tensor name length");
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw std::runtime_error(path + ": truncated tensor name");
    if (get<std::uint8_t>(is, "dtype") != kDtypeF64)
      throw std::runtime_error(path + ": tensor " + name + " has an unsupported dtype");
    const auto rank = get<std::uint32_t>(is, "rank");
    if (rank > 8) throw std::runtime_error(path + ": tensor " + name + " has implausible rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is, "dims");
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw std::runtime_error(path + ": truncated data for tensor " + name);
    tensors.emplace_back(std::move(name), std::move(t));
  }
  return {std::move(header), std::move(tensors)};
}

void save_checkpoint(const ToyDiT& model, const std::string& path, const nlohmann::json& meta) {
  nlohmann::json header = {{"config", to_json(model.config())},
                           {"config_hash", hex64(config_hash(model.config()))},
                           {"param_count", count_params(model)},
                           {"meta", meta}};
  std::vector<std::pair<std::string, const Tensor*>> ts;
  const auto& p = model.params();
  for (std::size_t i = 0; i < p.size(); ++i) ts.emplace_back(p.name(i), &p[i]);
  write_tensor_file(path, header, ts);
}

ToyDiT load_checkpoint(const std::string& path, nlohmann::json* meta) {
  auto [header, tensors] = read_tensor_file(path);
  if (!header.contains("config") || !header.contains("config_hash") ||
      !header.contains("param_count"))
    throw std::runtime_error(path + ": header lacks config, config_hash or param_count");
  const ModelConfig cfg = model_config_from_json(header["config"]);
  const std::string want = hex64(config_hash(cfg));
  if (header["config_hash"].get<std::string>() != want)
    throw std::runtime_error(path + ": config hash mismatch (stored " +
                             header["config_hash"].get<std::string>() + ", computed " + want +
                             ")");
  ToyDiT model = ToyDiT::zeros(cfg);
  auto& p = model.params();
  if (header["param_count"].get<std::size_t>() != p.count())
    throw std::runtime_error(path + ": parameter count mismatch");
  if (tensors.size() != p.size())
    throw std::runtime_error(path + ": expected " + std::to_string(p.size()) + " tensors, found " +
                             std::to_string(tensors.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (tensors[i].first != p.name(i))
      throw std::runtime_error(path + ": tensor " + std::to_string(i) + " is " +
                               tensors[i].first + ", expected " + p.name(i));
    if (!tensors[i].second.same_shape(p[i]))
      throw std::runtime_error(path + ": shape mismatch for " + p.name(i));
    tensors[i].second.require_finite(p.name(i));
    p[i] = std::move(tensors[i].second);
  }
  if (meta) *meta = header.value("meta", nlohmann::json::object());
  return model;
}

}  // namespace tdit
