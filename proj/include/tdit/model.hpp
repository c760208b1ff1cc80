#pragma once

// Toy video DiT predicting rectified-flow velocity.
//
// Latent tokens are non-overlapping P x P pixel patches (width P*P, doubled
// when the first frame is concatenated). Each block applies, in order:
//   self-attention with factorized RoPE (frame index on the first half of
//   every head, flattened patch index on the second half),
//   tanh(gate)-scaled temporal cross-attention onto events and cut tokens,
//   global cross-attention onto the caption tokens (no positional encoding),
//   GELU MLP,
// each as a pre-norm residual whose LayerNorm is shifted and scaled by an
// embedding of the diffusion time.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tdit/conditioning.hpp"
#include "tdit/numerics.hpp"
#include "tdit/timeline.hpp"

namespace tdit {

struct ModelConfig {
  std::size_t blocks = 4;
  std::size_t model_dim = 128;
  std::size_t heads = 4;
  std::size_t head_dim = 32;
  std::size_t text_dim = 64;
  int vocab_size = 64;
  std::size_t grid = 8;
  std::size_t patch = 4;
  std::size_t caption_len = 4;  ///< tokens per temporal caption (L^c)
  std::size_t max_events = 4;
  double rescale_length = 8.0;
  ConditioningMode mode = ConditioningMode::kReRoPE;
  std::size_t mlp_ratio = 4;
  bool first_frame = false;  ///< input carries the clean first frame (I2V)
  bool spatial_rope = true;

  std::size_t patch_dim() const { return patch * patch; }
  std::size_t in_channels() const { return patch_dim() * (first_frame ? 2 : 1); }
  std::size_t patches_per_frame() const { return (grid / patch) * (grid / patch); }
  std::size_t cond_width() const {
    return mode == ConditioningMode::kConcatTime ? 2 * text_dim : text_dim;
  }
  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing fields keep their defaults; unknown fields are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);
/// FNV-1a over the canonical JSON dump of the config.
std::uint64_t config_hash(const ModelConfig& cfg);

/// Ordered set of uniquely named tensors.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value);
  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;

  /// Total number of scalars.
  std::size_t count() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  /// Same names and shapes, all zeros.
  ParamStore zeros_like() const;
  void zero();
  bool operator==(const ParamStore&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

struct BlockParamIds {
  std::size_t mod_w, mod_b;
  std::size_t sa_q, sa_k, sa_v, sa_o, sa_ob;
  std::size_t tx_q, tx_k, tx_v, tx_o, tx_ob, gate;
  std::size_t gx_q, gx_k, gx_v, gx_o, gx_ob;
  std::size_t mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ModelParamIds {
  std::size_t global_embed, event_embed, cut_vector;
  std::optional<std::size_t> tm_w1, tm_b1, tm_w2, tm_b2;  ///< ConcatTime only
  std::size_t patch_w, patch_b;
  std::size_t temb_w1, temb_b1, temb_w2, temb_b2;
  std::size_t final_mod_w, final_mod_b, final_w, final_b;
  std::vector<BlockParamIds> blocks;
};

class ToyDiT {
 public:
  /// Random init. Gates start at 0 and the temporal cross-attention copies
  /// the global cross-attention weights of the same block.
  static ToyDiT init(const ModelConfig& cfg, Rng& rng);
  /// Same layout with every tensor zero (used by loaders).
  static ToyDiT zeros(const ModelConfig& cfg);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelParamIds& ids() const { return ids_; }

 private:
  ToyDiT(ModelConfig cfg);
  ModelConfig config_;
  ParamStore params_;
  ModelParamIds ids_;
};

std::size_t count_params(const ToyDiT& model);

/// Latent grid [T, S, P*P] with frame timestamps.
struct LatentVideo {
  Tensor tokens;
  std::vector<double> timestamps;
};

/// video [T, G, G] -> tokens [T, (G/P)^2, P*P], patches in row-major order,
/// pixels in row-major order within a patch.
Tensor patchify(const Tensor& video, std::size_t patch);
Tensor unpatchify(const Tensor& tokens, std::size_t grid, std::size_t patch);

/// Conditioning for one sample, with the classifier-free dropout flags.
struct ConditioningInputs {
  EventScript script;
  bool drop_global = false;
  bool drop_temporal = false;  ///< zero event embeddings and timestamps
  bool drop_cuts = false;      ///< zero the cut rows
};

/// Embedded, position-annotated temporal conditioning exactly as the
/// temporal cross-attention consumes it.
EncodedConditioning encode_conditioning(const ToyDiT& model, const ConditioningInputs& cond);

struct ForwardOptions {
  bool skip_temporal = false;  ///< drop the temporal cross-attention entirely
};

/// Intermediate values recorded by forward() for backward().
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(Tape&&) noexcept;
  Tape& operator=(Tape&&) noexcept;
  struct Data;
  Data& data() { return *data_; }
  const Data& data() const { return *data_; }

 private:
  std::unique_ptr<Data> data_;
};

/// x [T, S, in_channels] at diffusion time t -> velocity [T, S, P*P].
/// T must equal script.num_frames().
Tensor forward(const ToyDiT& model, const Tensor& x, double t_diff,
               const ConditioningInputs& cond, const ForwardOptions& opts = {},
               Tape* tape = nullptr);

/// Accumulates d(loss)/d(params) into `grads` (layout of model.params()) for
/// the output gradient `dout` of the forward pass recorded in `tape`.
void backward(const ToyDiT& model, const Tape& tape, const Tensor& dout, ParamStore& grads);

// --- checkpoints -------------------------------------------------------------

/// Container: magic "MINTCKPT", u32 version, u64 header length + JSON header,
/// u64 tensor count, then per tensor u32 name length + name, u8 dtype (1 = f64),
/// u32 rank, u64 dims, raw little-endian f64 data.
void write_tensor_file(const std::string& path, const nlohmann::json& header,
                       const std::vector<std::pair<std::string, const Tensor*>>& tensors);
/// Returns header and tensors; throws std::runtime_error with a reason on any
/// malformed input.
std::pair<nlohmann::json, std::vector<std::pair<std::string, Tensor>>> read_tensor_file(
    const std::string& path);

/// Header carries the config, its hash, the parameter count and `meta`.
void save_checkpoint(const ToyDiT& model, const std::string& path,
                     const nlohmann::json& meta);
/// Verifies the config hash, parameter count, names and shapes.
ToyDiT load_checkpoint(const std::string& path, nlohmann::json* meta = nullptr);

}  // namespace tdit
