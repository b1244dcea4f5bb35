#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "aggnet/errors.hpp"
#include "aggnet/rng.hpp"

namespace aggnet {

// Dense row-major array of 64-bit reals. Up to three dimensions, which is all
// the pipeline needs (batches of groups of vectors). Row-major layout is the
// single fixed convention of the repo.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw DimensionError("tensor data length does not match shape");
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  // 2-D convenience constructor from nested lists, used heavily in tests.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    Tensor t({r, c});
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged row list");
      for (double v : row) t.data_[i++] = v;
    }
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  // 2-D accessors; rows()/cols() require ndim()==2.
  std::size_t rows() const { return dim2(0); }
  std::size_t cols() const { return dim2(1); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * dim2(1) + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * dim2(1) + j]; }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  // Contiguous view of row i of a 2-D tensor (or of slice (i,j) of a 3-D one).
  std::span<double> row(std::size_t i) {
    return {data_.data() + i * dim2(1), dim2(1)};
  }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * dim2(1), dim2(1)};
  }
  std::span<double> row(std::size_t i, std::size_t j) {
    if (ndim() != 3) throw DimensionError("row(i,j) needs a 3-d tensor");
    return {data_.data() + (i * shape_[1] + j) * shape_[2], shape_[2]};
  }
  std::span<const double> row(std::size_t i, std::size_t j) const {
    if (ndim() != 3) throw DimensionError("row(i,j) needs a 3-d tensor");
    return {data_.data() + (i * shape_[1] + j) * shape_[2], shape_[2]};
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  std::size_t dim2(std::size_t i) const {
    if (shape_.size() != 2) throw DimensionError("2-d access on non-2-d tensor");
    return shape_[i];
  }

  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) {
      if (s == 0) throw DimensionError("zero-length tensor dimension");
      n *= s;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

// C = A * B for 2-d tensors, (m x k) * (k x p). Accumulates over a transposed
// copy of B so the inner loop is contiguous.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw DimensionError("matmul needs 2-d tensors");
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul inner dimensions disagree: " + std::to_string(k) + " vs " +
                         std::to_string(b.rows()));
  }
  Tensor bt({p, k});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < p; ++j) bt(j, i) = b(i, j);

  Tensor c({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    for (std::size_t j = 0; j < p; ++j) {
      const double* brow = bt.data() + j * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
      c(i, j) = acc;
    }
  }
  require_finite(c, "matmul result");
  return c;
}

inline Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw DimensionError("transpose needs a 2-d tensor");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline void axpy(double alpha, const Tensor& x, Tensor& y) {
  if (!x.same_shape(y)) throw DimensionError("axpy shape mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

// Fills with N(0, sigma^2) entries.
inline void fill_normal(Tensor& t, Rng& rng, double sigma = 1.0) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = sigma * rng.normal();
}

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
}

}  // namespace aggnet
