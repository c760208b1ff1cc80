#pragma once

// Minibatch training of the toy DiT: AdamW with linear warmup to a constant
// learning rate and global-norm gradient clipping.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tdit/diffusion.hpp"
#include "tdit/model.hpp"

namespace tdit {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t warmup_steps = 100;
  std::size_t batch_size = 16;
  std::size_t total_steps = 3000;
  double grad_clip = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  CondDropout dropout;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Missing fields keep their defaults; unknown fields are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainExample {
  Tensor latent;  ///< [T, S, P*P] clean latent
  EventScript script;
  std::optional<Tensor> first_frame;  ///< [S, P*P], first-frame models only
};

class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const ParamStore& like) : m_(like.zeros_like()), v_(like.zeros_like()) {}

  /// One update with bias correction; `t` is the 1-based step number.
  void step(ParamStore& params, const ParamStore& grads, double lr, std::size_t t,
            const TrainConfig& cfg);

  ParamStore& first_moment() { return m_; }
  ParamStore& second_moment() { return v_; }
  const ParamStore& first_moment() const { return m_; }
  const ParamStore& second_moment() const { return v_; }

 private:
  ParamStore m_, v_;
};

/// Linear warmup from lr/warmup at step 1 to lr at step `warmup`, then flat.
double learning_rate(const TrainConfig& cfg, std::size_t step);

/// Scales grads to global L2 norm <= max_norm; returns the norm before clipping.
double clip_grad_norm(ParamStore& grads, double max_norm);

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainState {
  ToyDiT model;
  AdamW optimizer;
  std::size_t step = 0;  ///< completed steps
};

/// Runs steps state.step+1 .. cfg.total_steps. Batch composition, dropout,
/// diffusion times and noise for step k derive only from (seed, k), so a
/// resumed run matches an uninterrupted one exactly.
void train(TrainState& state, const std::vector<TrainExample>& data, const TrainConfig& cfg,
           const std::function<void(const StepLog&)>& on_step = {});

/// Mean rectified-flow loss of one minibatch step (exposed for tests).
StepLog train_step(TrainState& state, const std::vector<TrainExample>& data,
                   const TrainConfig& cfg);

/// Model checkpoint plus optimizer moments and the step counter.
void save_train_state(const TrainState& state, const std::string& model_path,
                      const std::string& optimizer_path, const nlohmann::json& meta);
TrainState load_train_state(const std::string& model_path, const std::string& optimizer_path);

}  // namespace tdit
