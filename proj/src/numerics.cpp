#include "tdit/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace tdit {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

void require_finite(std::span<const double> v, std::string_view what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream os;
      os << "non-finite value " << v[i] << " at index " << i << " in " << what;
      throw NumericError(os.str());
    }
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_product(shape_))
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 1;
  return shape_.back() == 0 ? 0 : data_.size() / shape_.back();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(std::vector<std::size_t> shape) {
  if (shape_product(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  shape_ = std::move(shape);
}

void Tensor::require_finite(std::string_view what) const { tdit::require_finite(data_, what); }

// --- Rng -------------------------------------------------------------------

namespace {
constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t Rng::mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t Rng::hash_label(std::string_view label) {
  // FNV-1a, then mixed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

Rng Rng::split(std::string_view label) const {
  return Rng(mix64(key_ ^ hash_label(label)) + kGamma, true);
}

Rng Rng::split(std::uint64_t index) const {
  return Rng(mix64(mix64(key_ + 0x5851f42d4c957f2dULL) ^ mix64(index + kGamma)), true);
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGamma);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return lo + static_cast<std::int64_t>(r % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = stddev * rng.normal();
  return t;
}

// --- softmax -----------------------------------------------------------------

void softmax_rows_inplace(std::span<double> m, std::size_t rows, std::size_t cols) {
  if (m.size() != rows * cols) throw ShapeError("softmax_rows: size mismatch");
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = m.data() + r * cols;
    double mx = kNegInf;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = row[c];
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
        throw NumericError("softmax_rows: non-finite logit in row " + std::to_string(r));
      mx = std::max(mx, v);
    }
    if (mx == kNegInf)
      throw NumericError("softmax_rows: row " + std::to_string(r) + " is fully masked");
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = row[c] == kNegInf ? 0.0 : std::exp(row[c] - mx);
      sum += row[c];
    }
    const double inv = 1.0 / sum;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
  }
}

Tensor softmax_rows(const Tensor& m) {
  Tensor out = m;
  softmax_rows_inplace(out.values(), out.rows(), out.cols());
  return out;
}

// --- gradient checking ---------------------------------------------------------

namespace {

double central_difference(const ScalarFn& f, std::vector<double>& x, std::size_t i, double eps) {
  const double saved = x[i];
  x[i] = saved + eps;
  const double fp = f(x);
  x[i] = saved - eps;
  const double fm = f(x);
  x[i] = saved;
  if (!std::isfinite(fp) || !std::isfinite(fm))
    throw NumericError("grad_check: non-finite function value at coordinate " +
                       std::to_string(i));
  return (fp - fm) / (2.0 * eps);
}

void check_eps(double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3))
    throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3]");
}

}  // namespace

double grad_check_subset(const ScalarFn& f, std::span<const double> x,
                         std::span<const double> analytic, std::span<const std::size_t> coords,
                         double eps) {
  check_eps(eps);
  if (analytic.size() != x.size()) throw ShapeError("grad_check: gradient length mismatch");
  std::vector<double> work(x.begin(), x.end());
  if (!std::isfinite(f(work))) throw NumericError("grad_check: f(x) is not finite");
  double worst = 0.0;
  for (auto i : coords) {
    const double fd = central_difference(f, work, i, eps);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check(const ScalarFn& f, std::span<const double> x, std::span<const double> analytic,
                  double eps) {
  std::vector<std::size_t> all(x.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return grad_check_subset(f, x, analytic, all, eps);
}

double grad_check(const ValueGradFn& f, std::span<const double> x, double eps) {
  const ValueAndGrad at = f(x);
  if (!std::isfinite(at.value)) throw NumericError("grad_check: f(x) is not finite");
  ScalarFn value_only = [&f](std::span<const double> p) { return f(p).value; };
  return grad_check(value_only, x, at.grad, eps);
}

// --- reductions ----------------------------------------------------------------

double ordered_sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

}  // namespace tdit
