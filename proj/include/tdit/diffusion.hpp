#pragma once

// Rectified flow on the path z_t = (1 - t) z + t eps with target velocity
// v = eps - z, conditioning dropout, and the guided Euler sampler.
// Pixels in [0, 1] map to latents in [-1, 1].

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>

#include "tdit/model.hpp"
#include "tdit/numerics.hpp"
#include "tdit/timeline.hpp"

namespace tdit {

struct SampleConfig {
  std::size_t steps = 256;
  double cfg_scale = 8.0;
  /// Guidance applies at step indices lo..hi inclusive, counted from the
  /// noise end (step 0 is t = 1).
  std::size_t interval_lo = 25;
  std::size_t interval_hi = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CondDropout {
  double p_global = 0.1;
  double p_temporal = 0.1;
  /// Cut tokens are zeroed together with the temporal captions.
  bool drop_cuts_with_temporal = true;

  void validate() const;
};

/// Independent all-or-nothing drops of the global and temporal branches.
ConditioningInputs apply_cond_dropout(ConditioningInputs in, Rng& rng, const CondDropout& p);
/// Every branch dropped: the unconditional input used by guidance.
ConditioningInputs unconditional(const EventScript& script);

/// Script with every cut removed, so no cut rows are encoded.
EventScript zero_cut_inference(const EventScript& script);

/// z_t [T, S, C] and a clean first-frame latent [S, C] -> [T, S, 2C], the
/// first frame broadcast over T. Null first frame returns z_t unchanged.
Tensor condition_on_first_frame(const Tensor& z_t, const Tensor* first_frame);

Tensor pixels_to_latent(const Tensor& video, std::size_t patch);
/// Latent -> pixels clamped to [0, 1].
Tensor latent_to_pixels(const Tensor& latent, std::size_t grid, std::size_t patch);

/// z_t = (1 - t) z + t eps.
Tensor rf_interpolate(const Tensor& z, const Tensor& eps, double t_diff);

struct LossResult {
  double loss = 0.0;
  double t_diff = 0.0;
};

/// Loss at a given diffusion time and noise. If `grads` is set, adds
/// `weight` * d(loss)/d(params) into it.
double rf_loss_at(const ToyDiT& model, const Tensor& z, const ConditioningInputs& cond,
                  double t_diff, const Tensor& eps, const Tensor* first_frame, ParamStore* grads,
                  double weight = 1.0);

/// Draws t ~ U(0, 1) and eps ~ N(0, I) from `rng`.
LossResult rf_loss(const ToyDiT& model, const Tensor& z, const ConditioningInputs& cond, Rng& rng,
                   const Tensor* first_frame, ParamStore* grads, double weight = 1.0);

/// Guidance scale used at step i: cfg_scale inside the interval, else 1.
double guidance_scale_at(const SampleConfig& cfg, std::size_t step);
/// v_uncond + s (v_cond - v_uncond).
Tensor guided_velocity(const Tensor& v_cond, const Tensor& v_uncond, double scale);

using VelocityFn = std::function<Tensor(const Tensor& z_t, double t_diff)>;

/// Euler integration of dz/dt = v from t = 1 to 0 in cfg.steps uniform steps
/// starting from z1. Where the scale is exactly 1 only `cond` is evaluated,
/// so the trajectory equals the unguided one bit for bit.
Tensor euler_sample(Tensor z1, const SampleConfig& cfg, const VelocityFn& cond,
                    const VelocityFn& uncond);

struct SampleOptions {
  bool no_cuts = false;
  /// Clean first frame in pixels [G, G]; requires a first-frame model.
  std::optional<Tensor> first_frame;
};

/// Generates a pixel video [T, G, G] in [0, 1] for `script`.
Tensor sample(const ToyDiT& model, const EventScript& script, const SampleConfig& cfg,
              const SampleOptions& opts = {});

}  // namespace tdit
