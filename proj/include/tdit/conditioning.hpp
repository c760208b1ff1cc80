#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tdit/attention.hpp"
#include "tdit/numerics.hpp"
#include "tdit/rope.hpp"
#include "tdit/timeline.hpp"

namespace tdit {

/// How temporal captions are bound to time in the temporal cross-attention.
enum class ConditioningMode { kReRoPE, kVanillaRoPE, kHardMask, kConcatTime };

std::string_view to_string(ConditioningMode mode);
/// Accepts "rerope", "vanilla-rope", "hard-mask", "concat-time".
ConditioningMode parse_mode(std::string_view name);
bool uses_rotation(ConditioningMode mode);

/// Two-layer MLP (2 -> hidden -> out, SiLU in between) embedding an event's
/// (t_start, t_end) normalized by the video duration.
struct TimeMlp {
  Tensor w1;  // 2 x hidden
  Tensor b1;  // hidden
  Tensor w2;  // hidden x out
  Tensor b2;  // out

  static TimeMlp init(std::size_t hidden, std::size_t out, Rng& rng);
  std::size_t out_dim() const { return w2.cols(); }

  struct Cache {
    double in[2] = {0.0, 0.0};
    std::vector<double> pre;  // hidden pre-activation
    std::vector<double> act;  // SiLU(pre)
  };
  std::vector<double> forward(double t0, double t1, Cache* cache = nullptr) const;

  struct Grads {
    Tensor w1, b1, w2, b2;
  };
  /// Accumulates parameter gradients for output gradient `dout`.
  void backward(std::span<const double> dout, const Cache& cache, Grads& grads) const;
};

struct RowSource {
  bool is_cut = false;
  std::size_t index = 0;  ///< event index or cut index, 0-based
  bool operator==(const RowSource&) const = default;
};

/// Key/value rows for the temporal cross-attention, ordered events then cuts.
struct EncodedConditioning {
  /// Feature rows before positional rotation (values are always taken from
  /// these). In ConcatTime mode each row is [embedding | time-MLP features].
  Tensor features;
  /// Rows after positional encoding; identical to `features` for modes
  /// without rotation.
  Tensor tokens;
  /// Rotation position of each row (empty for modes without rotation).
  std::vector<std::optional<double>> positions;
  /// Time span each row may attend to under HardMask; cuts use [t_cut, t_cut].
  std::vector<std::pair<double, double>> spans;
  std::vector<RowSource> source_index;
  std::size_t event_rows = 0;
  std::size_t cut_rows = 0;
  /// Set when the temporal branch was dropped: rows are zero, positions are 0,
  /// and every row is attendable.
  bool dropped = false;

  std::size_t rows() const { return source_index.size(); }
};

/// Rotates each consecutive chunk of enc.dim() entries of x at position t.
void rotate_heads(std::span<double> x, double t, const RotaryEncoder& enc);

struct EncodeOptions {
  ConditioningMode mode = ConditioningMode::kReRoPE;
  double rescale_length = 8.0;
  const TimeMlp* time_mlp = nullptr;  ///< required for ConcatTime
  bool drop_temporal = false;         ///< zero embeddings and timestamps
};

/// Events part. `event_embeddings` is [N_e, L_c, D_c] (or [N_e * L_c, D_c]).
EncodedConditioning encode_events(const Tensor& event_embeddings, const EventScript& script,
                                  const RotaryEncoder& enc, const EncodeOptions& opts);

/// Cuts part: one row per cut holding `cut_vector` rotated at the position of
/// t_cut (zero-length event). With `drop` the rows are zero.
EncodedConditioning encode_cuts(std::span<const double> cut_vector, const EventScript& script,
                                const RotaryEncoder& enc, const EncodeOptions& opts,
                                bool drop = false);

/// Concatenates events then cuts.
EncodedConditioning concat(const EncodedConditioning& events, const EncodedConditioning& cuts);

/// Rotation position of each frame's queries: the rescaled timestamp for
/// ReRoPE, the raw timestamp for VanillaRoPE, none otherwise.
std::vector<std::optional<double>> query_positions(std::span<const double> timestamps,
                                                   const EventScript& script,
                                                   ConditioningMode mode, double rescale_length);
double key_position(double t_start, double t_end, const EventScript& script,
                    ConditioningMode mode, double rescale_length);

/// HardMask pattern over (frame, conditioning row). A frame attends to an event
/// row iff its timestamp lies in the closed event span, and to a cut row iff it
/// is within one frame period of t_cut. Other modes allow everything.
AttentionMask temporal_mask(std::span<const double> timestamps, std::size_t tokens_per_frame,
                            const EncodedConditioning& cond, ConditioningMode mode, double fps);

/// Learned projections for the temporal cross-attention.
struct CrossAttentionWeights {
  Tensor wq;  // D x H*d
  Tensor wk;  // Dc x H*d
  Tensor wv;  // Dc x H*d
  Tensor wo;  // H*d x D
  Tensor bo;  // D

  /// Identity projections; requires D == Dc == width.
  static CrossAttentionWeights identity(std::size_t width);
};

/// Temporal cross-attention of video tokens [T, S, D] onto `cond`.
/// Query rows of frame t rotate at query_positions(t); spatial position is
/// ignored. Returns [T, S, D].
Tensor temporal_xattn(const Tensor& video_tokens, std::span<const double> timestamps,
                      const EventScript& script, const EncodedConditioning& cond,
                      ConditioningMode mode, double rescale_length,
                      const CrossAttentionWeights& weights, std::size_t heads,
                      const RotaryEncoder& enc);

/// Pre-softmax positional bias between a probe at every frame and each
/// event/cut (q = k = probe). Columns are events then cuts. HardMask gives a
/// 0 / -inf pattern; ConcatTime gives the unrotated self inner product.
Tensor bias_map(const EventScript& script, double rescale_length, ConditioningMode mode,
                std::span<const double> probe, const RotaryEncoder& enc);

/// CSV: one line per frame, comma-separated columns, 17 significant digits;
/// -inf is written as "-inf".
std::string bias_map_csv(const Tensor& map);
/// Binary PGM (P5), width = columns, height = frames, min-max normalized over
/// the finite entries; -inf entries map to 0.
std::string bias_map_pgm(const Tensor& map);

}  // namespace tdit
