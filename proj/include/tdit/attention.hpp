#pragma once

// Multi-head scaled-dot-product attention with optional rotary tables and
// boolean masks, plus the hand-derived backward pass.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tdit/numerics.hpp"
#include "tdit/rope.hpp"

namespace tdit {

/// Per-row cos/sin tables covering the d/2 pairs of one head. Rows without a
/// position are left unrotated.
class RotaryTable {
 public:
  RotaryTable() = default;

  /// Every pair of the head rotates with `enc` (enc.dim() == head_dim).
  static RotaryTable temporal(std::span<const std::optional<double>> positions,
                              const RotaryEncoder& enc);
  /// First half of the head dims rotate with the first position, second half
  /// with the second. Each half uses its own encoder of dimension head_dim / 2.
  static RotaryTable factorized(std::span<const double> first, std::span<const double> second,
                                int head_dim);

  bool empty() const { return rows_ == 0; }
  std::size_t rows() const { return rows_; }
  std::size_t pairs() const { return pairs_; }

  /// Rotates each head of every row of x [rows x heads*head_dim] in place.
  /// `inverse` applies the transpose rotation (used by backprop).
  void apply(Tensor& x, std::size_t heads, bool inverse = false) const;

 private:
  std::size_t rows_ = 0;
  std::size_t pairs_ = 0;
  std::vector<double> cos_;
  std::vector<double> sin_;
  std::vector<char> active_;
};

/// attendable[i * m + j] != 0 when query i may attend to key j.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<char> attendable;

  bool allows(std::size_t i, std::size_t j) const { return attendable[i * keys + j] != 0; }
};

struct AttentionCache {
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  /// heads x queries x keys softmax weights.
  std::vector<double> weights;
};

/// q [n x H*d], k [m x H*d], v [m x H*d] -> out [n x H*d].
/// Logits are scaled by 1/sqrt(d); masked logits are -inf.
Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                         const AttentionMask* mask, AttentionCache* cache);

struct AttentionGrads {
  Tensor dq, dk, dv;
};

AttentionGrads attention_backward(const Tensor& dout, const Tensor& q, const Tensor& k,
                                  const Tensor& v, const AttentionCache& cache);

/// Raw logits <q_i, k_j> / sqrt(d) for one head, mask applied.
Tensor attention_logits(const Tensor& q, const Tensor& k, std::size_t heads, std::size_t head,
                        const AttentionMask* mask);

}  // namespace tdit
