#include "tdit/rope.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "tdit/numerics.hpp"

namespace tdit {

std::vector<double> angle_schedule(int d) {
  if (d < 2 || d % 2 != 0)
    throw std::invalid_argument("angle_schedule: dimension must be even and >= 2, got " +
                                std::to_string(d));
  std::vector<double> theta(static_cast<std::size_t>(d / 2));
  for (int l = 0; l < d / 2; ++l)
    theta[static_cast<std::size_t>(l)] = std::pow(10000.0, -2.0 * l / d);
  return theta;
}

RotaryEncoder::RotaryEncoder(int dim) : dim_(dim), angles_(angle_schedule(dim)) {}

void RotaryEncoder::tables(double t, std::span<double> cos_out, std::span<double> sin_out) const {
  for (std::size_t l = 0; l < angles_.size(); ++l) {
    const double a = t * angles_[l];
    cos_out[l] = std::cos(a);
    sin_out[l] = std::sin(a);
  }
}

void RotaryEncoder::rotate_inplace(std::span<double> x, double t) const {
  if (x.size() != static_cast<std::size_t>(dim_))
    throw ShapeError("rotate: expected length " + std::to_string(dim_) + ", got " +
                     std::to_string(x.size()));
  for (std::size_t l = 0; l < angles_.size(); ++l) {
    const double a = t * angles_[l];
    const double c = std::cos(a), s = std::sin(a);
    const double re = x[2 * l], im = x[2 * l + 1];
    x[2 * l] = re * c - im * s;
    x[2 * l + 1] = re * s + im * c;
  }
}

std::vector<double> RotaryEncoder::rotate(std::span<const double> x, double t) const {
  std::vector<double> out(x.begin(), x.end());
  rotate_inplace(out, t);
  return out;
}

double attn_bias(std::span<const double> q, std::span<const double> k, double dt,
                 const RotaryEncoder& enc) {
  if (q.size() != k.size()) throw ShapeError("attn_bias: query/key length mismatch");
  const auto qr = enc.rotate(q, dt);
  const auto kr = enc.rotate(k, 0.0);
  return dot(qr, kr);
}

double attn_bias_closed_form(std::span<const double> q, std::span<const double> k, double dt,
                             const RotaryEncoder& enc) {
  if (q.size() != k.size() || q.size() != static_cast<std::size_t>(enc.dim()))
    throw ShapeError("attn_bias_closed_form: dimension mismatch");
  double s = 0.0;
  for (std::size_t l = 0; l < enc.pairs(); ++l) {
    const double a = dt * enc.angles()[l];
    s += (q[2 * l] * k[2 * l] + q[2 * l + 1] * k[2 * l + 1]) * std::cos(a) +
         (q[2 * l] * k[2 * l + 1] - q[2 * l + 1] * k[2 * l]) * std::sin(a);
  }
  return s;
}

std::vector<double> pair_weights(std::span<const double> q) {
  if (q.size() % 2 != 0) throw ShapeError("pair_weights: odd length");
  std::vector<double> w(q.size() / 2);
  for (std::size_t l = 0; l < w.size(); ++l) w[l] = q[2 * l] * q[2 * l] + q[2 * l + 1] * q[2 * l + 1];
  return w;
}

double self_bias(std::span<const double> weights, double dt, const RotaryEncoder& enc) {
  if (weights.size() != enc.pairs()) throw ShapeError("self_bias: weight length mismatch");
  double s = 0.0;
  for (std::size_t l = 0; l < weights.size(); ++l) s += weights[l] * std::cos(dt * enc.angles()[l]);
  return s;
}

}  // namespace tdit
