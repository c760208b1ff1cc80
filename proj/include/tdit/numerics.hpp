#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tdit {

/// Raised whenever a NaN or Inf shows up where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  // Rank-2 view helpers. Higher-rank tensors are treated as
  // (product of leading dims) x (last dim).
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  void fill(double v);
  void reshape(std::vector<std::size_t> shape);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Throws NumericError naming `what` if any entry is NaN or Inf.
  void require_finite(std::string_view what) const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_string(const std::vector<std::size_t>& shape);
void require_finite(std::span<const double> v, std::string_view what);

/// Counter-based generator: the n-th draw is a pure function of (key, n), so
/// streams never depend on how many values other stages consumed.
/// Mixing is the SplitMix64 finalizer applied to key + n * golden gamma.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

  /// Independent stream derived from this stream's key and `label`.
  /// Does not advance this stream.
  Rng split(std::string_view label) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller; deterministic across platforms.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix64(std::uint64_t z);
  static std::uint64_t hash_label(std::string_view label);

 private:
  Rng(std::uint64_t key, bool) : key_(key) {}
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0);

/// Row-wise softmax. Entries equal to -infinity are treated as masked and get
/// weight exactly 0; every row must keep at least one finite entry.
Tensor softmax_rows(const Tensor& m);
void softmax_rows_inplace(std::span<double> m, std::size_t rows, std::size_t cols);

/// Gradient of a scalar function, paired with its value.
struct ValueAndGrad {
  double value = 0.0;
  std::vector<double> grad;
};

using ScalarFn = std::function<double(std::span<const double>)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const ScalarFn& f, std::span<const double> x, std::span<const double> analytic,
                  double eps = 1e-5);

using ValueGradFn = std::function<ValueAndGrad(std::span<const double>)>;

/// Evaluates the analytic gradient through `f` at x and checks it.
double grad_check(const ValueGradFn& f, std::span<const double> x, double eps = 1e-5);

/// Same, checking only the listed coordinates of x.
double grad_check_subset(const ScalarFn& f, std::span<const double> x,
                         std::span<const double> analytic, std::span<const std::size_t> coords,
                         double eps = 1e-5);

/// Sequential left-to-right sum; the single summation order used for reductions.
double ordered_sum(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

}  // namespace tdit
