#include "tdit/attention.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tdit/kernels.hpp"

namespace tdit {

RotaryTable RotaryTable::temporal(std::span<const std::optional<double>> positions,
                                  const RotaryEncoder& enc) {
  RotaryTable t;
  t.rows_ = positions.size();
  t.pairs_ = enc.pairs();
  t.cos_.assign(t.rows_ * t.pairs_, 1.0);
  t.sin_.assign(t.rows_ * t.pairs_, 0.0);
  t.active_.assign(t.rows_, 0);
  for (std::size_t r = 0; r < t.rows_; ++r) {
    if (!positions[r]) continue;
    t.active_[r] = 1;
    enc.tables(*positions[r], std::span(t.cos_).subspan(r * t.pairs_, t.pairs_),
               std::span(t.sin_).subspan(r * t.pairs_, t.pairs_));
  }
  return t;
}

RotaryTable RotaryTable::factorized(std::span<const double> first, std::span<const double> second,
                                    int head_dim) {
  if (first.size() != second.size()) throw ShapeError("RotaryTable: position count mismatch");
  if (head_dim % 4 != 0) throw ShapeError("RotaryTable: factorized head_dim must be divisible by 4");
  const RotaryEncoder half(head_dim / 2);
  RotaryTable t;
  t.rows_ = first.size();
  t.pairs_ = static_cast<std::size_t>(head_dim / 2);
  const std::size_t hp = half.pairs();
  t.cos_.resize(t.rows_ * t.pairs_);
  t.sin_.resize(t.rows_ * t.pairs_);
  t.active_.assign(t.rows_, 1);
  for (std::size_t r = 0; r < t.rows_; ++r) {
    auto c = std::span(t.cos_).subspan(r * t.pairs_, t.pairs_);
    auto s = std::span(t.sin_).subspan(r * t.pairs_, t.pairs_);
    half.tables(first[r], c.first(hp), s.first(hp));
    half.tables(second[r], c.subspan(hp), s.subspan(hp));
  }
  return t;
}

void RotaryTable::apply(Tensor& x, std::size_t heads, bool inverse) const {
  if (x.rows() != rows_) throw ShapeError("RotaryTable::apply: row count mismatch");
  const std::size_t d = 2 * pairs_;
  if (x.cols() != heads * d) throw ShapeError("RotaryTable::apply: width mismatch");
  const double sign = inverse ? -1.0 : 1.0;
  for (std::size_t r = 0; r < rows_; ++r) {
    if (!active_[r]) continue;
    double* row = x.data() + r * x.cols();
    const double* c = cos_.data() + r * pairs_;
    const double* s = sin_.data() + r * pairs_;
    for (std::size_t h = 0; h < heads; ++h) {
      double* v = row + h * d;
      for (std::size_t l = 0; l < pairs_; ++l) {
        const double re = v[2 * l], im = v[2 * l + 1];
        const double sn = sign * s[l];
        v[2 * l] = re * c[l] - im * sn;
        v[2 * l + 1] = re * sn + im * c[l];
      }
    }
  }
}

namespace {

void extract_head(const Tensor& x, std::size_t heads, std::size_t h, std::vector<double>& out) {
  const std::size_t d = x.cols() / heads;
  out.resize(x.rows() * d);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x.at(r, h * d + c);
}

void scatter_head(const std::vector<double>& in, std::size_t heads, std::size_t h, Tensor& x) {
  const std::size_t d = x.cols() / heads;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) x.at(r, h * d + c) = in[r * d + c];
}

void check_shapes(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  if (heads == 0 || q.cols() % heads != 0) throw ShapeError("attention: width not divisible by heads");
  if (k.cols() != q.cols() || v.cols() != q.cols())
    throw ShapeError("attention: q/k/v width mismatch");
  if (k.rows() != v.rows()) throw ShapeError("attention: k/v row mismatch");
  if (k.rows() == 0) throw ShapeError("attention: empty key set");
}

}  // namespace

Tensor attention_logits(const Tensor& q, const Tensor& k, std::size_t heads, std::size_t head,
                        const AttentionMask* mask) {
  const std::size_t n = q.rows(), m = k.rows(), d = q.cols() / heads;
  std::vector<double> qh, kh;
  extract_head(q, heads, head, qh);
  extract_head(k, heads, head, kh);
  Tensor logits = Tensor::matrix(n, m);
  kernels::gemm_nt_acc(qh.data(), kh.data(), logits.data(), n, d, m);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double& v = logits.at(i, j);
      if (!std::isfinite(v)) throw NumericError("attention: non-finite logit");
      v = (mask != nullptr && !mask->allows(i, j)) ? -std::numeric_limits<double>::infinity()
                                                    : v * scale;
    }
  return logits;
}

Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                         const AttentionMask* mask, AttentionCache* cache) {
  check_shapes(q, k, v, heads);
  const std::size_t n = q.rows(), m = k.rows(), d = q.cols() / heads;
  if (mask != nullptr && (mask->queries != n || mask->keys != m))
    throw ShapeError("attention: mask shape mismatch");
  Tensor out = Tensor::matrix(n, q.cols());
  if (cache != nullptr) {
    cache->heads = heads;
    cache->head_dim = d;
    cache->weights.assign(heads * n * m, 0.0);
  }
  std::vector<double> vh, oh;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor p = attention_logits(q, k, heads, h, mask);
    softmax_rows_inplace(p.values(), n, m);
    extract_head(v, heads, h, vh);
    oh.assign(n * d, 0.0);
    kernels::gemm_nn_acc(p.data(), vh.data(), oh.data(), n, m, d);
    scatter_head(oh, heads, h, out);
    if (cache != nullptr)
      std::copy(p.storage().begin(), p.storage().end(), cache->weights.begin() + h * n * m);
  }
  return out;
}

AttentionGrads attention_backward(const Tensor& dout, const Tensor& q, const Tensor& k,
                                  const Tensor& v, const AttentionCache& cache) {
  const std::size_t heads = cache.heads, d = cache.head_dim;
  const std::size_t n = q.rows(), m = k.rows();
  AttentionGrads g{Tensor::matrix(n, q.cols()), Tensor::matrix(m, k.cols()),
                   Tensor::matrix(m, v.cols())};
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> qh, kh, vh, doh, dp, dqh, dkh, dvh;
  for (std::size_t h = 0; h < heads; ++h) {
    const double* p = cache.weights.data() + h * n * m;
    extract_head(q, heads, h, qh);
    extract_head(k, heads, h, kh);
    extract_head(v, heads, h, vh);
    extract_head(dout, heads, h, doh);
    // dV = P^T dO
    dvh.assign(m * d, 0.0);
    kernels::gemm_tn_acc(p, doh.data(), dvh.data(), n, m, d);
    // dP = dO V^T
    dp.assign(n * m, 0.0);
    kernels::gemm_nt_acc(doh.data(), vh.data(), dp.data(), n, d, m);
    // dS = P * (dP - rowsum(P * dP)), then fold in the logit scale.
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += p[i * m + j] * dp[i * m + j];
      for (std::size_t j = 0; j < m; ++j)
        dp[i * m + j] = p[i * m + j] * (dp[i * m + j] - acc) * scale;
    }
    dqh.assign(n * d, 0.0);
    kernels::gemm_nn_acc(dp.data(), kh.data(), dqh.data(), n, m, d);
    dkh.assign(m * d, 0.0);
    kernels::gemm_tn_acc(dp.data(), qh.data(), dkh.data(), n, m, d);
    scatter_head(dqh, heads, h, g.dq);
    scatter_head(dkh, heads, h, g.dk);
    scatter_head(dvh, heads, h, g.dv);
  }
  return g;
}

}  // namespace tdit
