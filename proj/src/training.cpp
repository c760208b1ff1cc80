#include "tdit/training.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace tdit {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(grad_clip > 0.0)) fail("grad_clip must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  dropout.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"warmup_steps", c.warmup_steps},
          {"batch_size", c.batch_size},
          {"total_steps", c.total_steps},
          {"grad_clip", c.grad_clip},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay},
          {"p_global", c.dropout.p_global},
          {"p_temporal", c.dropout.p_temporal},
          {"drop_cuts_with_temporal", c.dropout.drop_cuts_with_temporal},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("train config: expected an object");
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "lr") c.lr = v.get<double>();
    else if (k == "warmup_steps") c.warmup_steps = v.get<std::size_t>();
    else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (k == "total_steps") c.total_steps = v.get<std::size_t>();
    else if (k == "grad_clip") c.grad_clip = v.get<double>();
    else if (k == "beta1") c.beta1 = v.get<double>();
    else if (k == "beta2") c.beta2 = v.get<double>();
    else if (k == "adam_eps") c.adam_eps = v.get<double>();
    else if (k == "weight_decay") c.weight_decay = v.get<double>();
    else if (k == "p_global") c.dropout.p_global = v.get<double>();
    else if (k == "p_temporal") c.dropout.p_temporal = v.get<double>();
    else if (k == "drop_cuts_with_temporal") c.dropout.drop_cuts_with_temporal = v.get<bool>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("train config: unknown field \"" + k + "\"");
  }
  return c;
}

void AdamW::step(ParamStore& params, const ParamStore& grads, double lr, std::size_t t,
                 const TrainConfig& cfg) {
  if (m_.size() != params.size()) {
    m_ = params.zeros_like();
    v_ = params.zeros_like();
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mh = m[k] / bc1, vh = v[k] / bc2;
      p[k] -= lr * (mh / (std::sqrt(vh) + cfg.adam_eps) + cfg.weight_decay * p[k]);
    }
  }
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.lr;
  return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

double clip_grad_norm(ParamStore& grads, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i)
    for (double v : grads[i].storage()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (std::size_t i = 0; i < grads.size(); ++i)
      for (double& v : grads[i].storage()) v *= s;
  }
  return norm;
}

StepLog train_step(TrainState& state, const std::vector<TrainExample>& data,
                   const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const std::size_t k = state.step + 1;
  Rng step_rng = Rng(cfg.seed).split("train").split(static_cast<std::uint64_t>(k));
  ParamStore grads = state.model.params().zeros_like();
  const double w = 1.0 / static_cast<double>(cfg.batch_size);
  double loss = 0.0;
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    Rng item = step_rng.split(static_cast<std::uint64_t>(b));
    Rng pick = item.split("pick");
    Rng drop = item.split("dropout");
    Rng noise = item.split("noise");
    const auto idx = static_cast<std::size_t>(
        pick.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
    const TrainExample& ex = data[idx];
    const ConditioningInputs cond = apply_cond_dropout({ex.script}, drop, cfg.dropout);
    const Tensor* ff = ex.first_frame ? &*ex.first_frame : nullptr;
    loss += w * rf_loss(state.model, ex.latent, cond, noise, ff, &grads, w).loss;
  }
  StepLog log;
  log.step = k;
  log.loss = loss;
  log.grad_norm = clip_grad_norm(grads, cfg.grad_clip);
  state.optimizer.step(state.model.params(), grads, learning_rate(cfg, k), k, cfg);
  state.step = k;
  return log;
}

void train(TrainState& state, const std::vector<TrainExample>& data, const TrainConfig& cfg,
           const std::function<void(const StepLog&)>& on_step) {
  cfg.validate();
  while (state.step < cfg.total_steps) {
    const StepLog log = train_step(state, data, cfg);
    if (on_step) on_step(log);
  }
}

void save_train_state(const TrainState& state, const std::string& model_path,
                      const std::string& optimizer_path, const nlohmann::json& meta) {
  nlohmann::json m = meta;
  m["step"] = state.step;
  save_checkpoint(state.model, model_path, m);
  std::vector<std::pair<std::string, const Tensor*>> ts;
  const auto& m1 = state.optimizer.first_moment();
  const auto& m2 = state.optimizer.second_moment();
  for (std::size_t i = 0; i < m1.size(); ++i) ts.emplace_back("m/" + m1.name(i), &m1[i]);
  for (std::size_t i = 0; i < m2.size(); ++i) ts.emplace_back("v/" + m2.name(i), &m2[i]);
  write_tensor_file(optimizer_path, {{"step", state.step}, {"kind", "adamw"}}, ts);
}

TrainState load_train_state(const std::string& model_path, const std::string& optimizer_path) {
  nlohmann::json meta;
  TrainState st{load_checkpoint(model_path, &meta), AdamW{}, 0};
  st.step = meta.value("step", std::size_t{0});
  auto [header, tensors] = read_tensor_file(optimizer_path);
  if (header.value("step", std::size_t{0}) != st.step)
    throw std::runtime_error(optimizer_path + ": step does not match the model checkpoint");
  st.optimizer = AdamW(st.model.params());
  auto& m1 = st.optimizer.first_moment();
  auto& m2 = st.optimizer.second_moment();
  if (tensors.size() != m1.size() + m2.size())
    throw std::runtime_error(optimizer_path + ": tensor count does not match the model");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const bool first = i < m1.size();
    const std::size_t j = first ? i : i - m1.size();
    ParamStore& dst = first ? m1 : m2;
    const std::string want = (first ? "m/" : "v/") + dst.name(j);
    if (tensors[i].first != want || !tensors[i].second.same_shape(dst[j]))
      throw std::runtime_error(optimizer_path + ": unexpected tensor " + tensors[i].first);
    dst[j] = std::move(tensors[i].second);
  }
  return st;
}

}  // namespace tdit
