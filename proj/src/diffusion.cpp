#include "tdit/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tdit {

void SampleConfig::validate() const {
  if (steps == 0) throw std::invalid_argument("sample config: steps must be >= 1");
  if (!(cfg_scale >= 0.0) || !std::isfinite(cfg_scale))
    throw std::invalid_argument("sample config: cfg_scale must be finite and >= 0");
  if (interval_lo > interval_hi || interval_hi > steps)
    throw std::invalid_argument("sample config: guidance interval must satisfy 0 <= lo <= hi <= steps");
}

void CondDropout::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(p_global) || !prob(p_temporal))
    throw std::invalid_argument("dropout probabilities must lie in [0, 1]");
}

ConditioningInputs apply_cond_dropout(ConditioningInputs in, Rng& rng, const CondDropout& p) {
  p.validate();
  // Both coins are always drawn so the stream position does not depend on
  // the outcome.
  const bool g = rng.bernoulli(p.p_global);
  const bool t = rng.bernoulli(p.p_temporal);
  in.drop_global = in.drop_global || g;
  in.drop_temporal = in.drop_temporal || t;
  if (t && p.drop_cuts_with_temporal) in.drop_cuts = true;
  return in;
}

ConditioningInputs unconditional(const EventScript& script) {
  return ConditioningInputs{script, true, true, true};
}

EventScript zero_cut_inference(const EventScript& script) {
  EventScript s = script;
  s.cuts.clear();
  return s;
}

Tensor condition_on_first_frame(const Tensor& z_t, const Tensor* first_frame) {
  if (first_frame == nullptr) return z_t;
  if (z_t.rank() != 3) throw ShapeError("condition_on_first_frame: z_t must be [T, S, C]");
  const std::size_t frames = z_t.dim(0), s = z_t.dim(1), c = z_t.dim(2);
  if (first_frame->size() != s * c)
    throw ShapeError("condition_on_first_frame: first frame " + shape_string(first_frame->shape()) +
                     " does not match one frame of " + shape_string(z_t.shape()));
  Tensor out({frames, s, 2 * c});
  for (std::size_t r = 0; r < frames * s; ++r) {
    std::copy_n(z_t.data() + r * c, c, out.data() + r * 2 * c);
    std::copy_n(first_frame->data() + (r % s) * c, c, out.data() + r * 2 * c + c);
  }
  return out;
}

Tensor pixels_to_latent(const Tensor& video, std::size_t patch) {
  Tensor z = patchify(video, patch);
  for (double& v : z.storage()) v = 2.0 * v - 1.0;
  return z;
}

Tensor latent_to_pixels(const Tensor& latent, std::size_t grid, std::size_t patch) {
  Tensor v = unpatchify(latent, grid, patch);
  for (double& x : v.storage()) x = std::clamp(0.5 * (x + 1.0), 0.0, 1.0);
  return v;
}

Tensor rf_interpolate(const Tensor& z, const Tensor& eps, double t_diff) {
  if (!z.same_shape(eps)) throw ShapeError("rf_loss: noise shape differs from latent shape");
  Tensor z_t(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z_t[i] = (1.0 - t_diff) * z[i] + t_diff * eps[i];
  return z_t;
}

double rf_loss_at(const ToyDiT& model, const Tensor& z, const ConditioningInputs& cond,
                  double t_diff, const Tensor& eps, const Tensor* first_frame, ParamStore* grads,
                  double weight) {
  z.require_finite("clean latent");
  const Tensor z_t = rf_interpolate(z, eps, t_diff);
  Tape tape;
  const Tensor v = forward(model, condition_on_first_frame(z_t, first_frame), t_diff, cond, {},
                           grads ? &tape : nullptr);
  const double inv_n = 1.0 / static_cast<double>(z.size());
  double loss = 0.0;
  Tensor dv(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = v[i] - (eps[i] - z[i]);
    loss += r * r;
    dv[i] = 2.0 * r * inv_n * weight;
  }
  loss *= inv_n;
  if (!std::isfinite(loss)) throw NumericError("rf_loss: non-finite loss");
  if (grads) backward(model, tape, dv, *grads);
  return loss;
}

LossResult rf_loss(const ToyDiT& model, const Tensor& z, const ConditioningInputs& cond, Rng& rng,
                   const Tensor* first_frame, ParamStore* grads, double weight) {
  LossResult r;
  r.t_diff = rng.uniform();
  Tensor eps(z.shape());
  for (double& v : eps.storage()) v = rng.normal();
  r.loss = rf_loss_at(model, z, cond, r.t_diff, eps, first_frame, grads, weight);
  return r;
}

double guidance_scale_at(const SampleConfig& cfg, std::size_t step) {
  return (step >= cfg.interval_lo && step <= cfg.interval_hi) ? cfg.cfg_scale : 1.0;
}

Tensor guided_velocity(const Tensor& v_cond, const Tensor& v_uncond, double scale) {
  if (!v_cond.same_shape(v_uncond)) throw ShapeError("guided_velocity: shape mismatch");
  Tensor v(v_cond.shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = v_uncond[i] + scale * (v_cond[i] - v_uncond[i]);
  return v;
}

Tensor euler_sample(Tensor z, const SampleConfig& cfg, const VelocityFn& cond,
                    const VelocityFn& uncond) {
  cfg.validate();
  const double dt = 1.0 / static_cast<double>(cfg.steps);
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) * dt;
    const double s = guidance_scale_at(cfg, i);
    Tensor v = cond(z, t);
    if (s != 1.0) v = guided_velocity(v, uncond(z, t), s);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] -= dt * v[k];
    z.require_finite("sampler state at step " + std::to_string(i));
  }
  return z;
}

Tensor sample(const ToyDiT& model, const EventScript& script_in, const SampleConfig& cfg,
              const SampleOptions& opts) {
  cfg.validate();
  const auto& mc = model.config();
  const EventScript script = opts.no_cuts ? zero_cut_inference(script_in) : script_in;
  if (mc.first_frame != opts.first_frame.has_value())
    throw std::invalid_argument(mc.first_frame
                                    ? "sample: this model needs a first frame"
                                    : "sample: model was not trained with first-frame input");
  std::optional<Tensor> first_latent;
  if (opts.first_frame) {
    Tensor f = *opts.first_frame;
    if (f.rank() == 2) f.reshape({1, f.dim(0), f.dim(1)});
    first_latent = pixels_to_latent(f, mc.patch);
    first_latent->reshape({mc.patches_per_frame(), mc.patch_dim()});
  }
  const Tensor* ff = first_latent ? &*first_latent : nullptr;
  Rng rng = Rng(cfg.seed).split("sample-noise");
  Tensor z({script.num_frames(), mc.patches_per_frame(), mc.patch_dim()});
  for (double& v : z.storage()) v = rng.normal();
  const ConditioningInputs cond{script};
  const ConditioningInputs uncond = unconditional(script);
  const VelocityFn vc = [&](const Tensor& zt, double t) {
    return forward(model, condition_on_first_frame(zt, ff), t, cond);
  };
  const VelocityFn vu = [&](const Tensor& zt, double t) {
    return forward(model, condition_on_first_frame(zt, ff), t, uncond);
  };
  const Tensor z0 = euler_sample(std::move(z), cfg, vc, vu);
  return latent_to_pixels(z0, mc.grid, mc.patch);
}

}  // namespace tdit
