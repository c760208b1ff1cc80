#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tdit {

/// theta_l = 10000^(-2l/d) for l = 0 .. d/2-1. Throws for odd or nonpositive d.
std::vector<double> angle_schedule(int d);

/// Rotary position encoder for vectors of even length `dim`.
///
/// Adjacent pairs (x[2l], x[2l+1]) are read as the complex number
/// x[2l] + i x[2l+1] and multiplied by exp(i t theta_l). Positions are real.
class RotaryEncoder {
 public:
  explicit RotaryEncoder(int dim);

  int dim() const { return dim_; }
  std::size_t pairs() const { return angles_.size(); }
  const std::vector<double>& angles() const { return angles_; }

  std::vector<double> rotate(std::span<const double> x, double t) const;
  /// In-place rotation of `x` (length dim) at position t.
  void rotate_inplace(std::span<double> x, double t) const;

  /// Fills cos/sin tables (length pairs()) for position t.
  void tables(double t, std::span<double> cos_out, std::span<double> sin_out) const;

 private:
  int dim_;
  std::vector<double> angles_;
};

/// Pre-activation attention bias Re<rotate(q, n), rotate(k, m)> for n - m = dt,
/// evaluated by explicit rotation (at n = dt, m = 0).
double attn_bias(std::span<const double> q, std::span<const double> k, double dt,
                 const RotaryEncoder& enc);

/// The same quantity in closed form:
///   sum_l (q_2l k_2l + q_2l+1 k_2l+1) cos(dt th_l) + (q_2l k_2l+1 - q_2l+1 k_2l) sin(dt th_l)
double attn_bias_closed_form(std::span<const double> q, std::span<const double> k, double dt,
                             const RotaryEncoder& enc);

/// Bias curve for q = k as a function of |dt|: sum_l w_l cos(dt th_l) with
/// w_l = q_2l^2 + q_2l+1^2. Cheaper than rotating when scanning many offsets.
double self_bias(std::span<const double> pair_weights, double dt, const RotaryEncoder& enc);
std::vector<double> pair_weights(std::span<const double> q);

}  // namespace tdit
