#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "aggnet/errors.hpp"
#include "aggnet/rng.hpp"
#include "aggnet/tensor.hpp"

namespace aggnet {

enum class Mode { kTrain, kEval };

// Guard threshold below which L2 normalization refuses to divide.
inline constexpr double kNormEps = 1e-12;

// ---------------------------------------------------------------------------
// Row-wise L2 normalization.
// ---------------------------------------------------------------------------

struct L2NormCache {
  Tensor y;                   // normalized output
  std::vector<double> norms;  // per-row input norms
};

inline Tensor l2norm_rows_forward(const Tensor& x, L2NormCache* cache = nullptr) {
  if (x.ndim() != 2) throw DimensionError("l2norm_rows: 2-d input required");
  Tensor y = x;
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double nrm = norm2(x.row(i));
    if (nrm < kNormEps) throw NumericError("l2norm: vector norm below 1e-12");
    norms[i] = nrm;
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = x(i, j) / nrm;
  }
  if (cache) {
    cache->y = y;
    cache->norms = std::move(norms);
  }
  return y;
}

// d(x/|x|) = (g - y*(y.g)) / |x|
inline Tensor l2norm_rows_backward(const L2NormCache& cache, const Tensor& grad_y) {
  const Tensor& y = cache.y;
  if (!grad_y.same_shape(y)) throw DimensionError("l2norm backward shape mismatch");
  Tensor dx = grad_y;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    const double proj = dot(y.row(i), grad_y.row(i));
    for (std::size_t j = 0; j < y.cols(); ++j) {
      dx(i, j) = (grad_y(i, j) - y(i, j) * proj) / cache.norms[i];
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Fully-connected layer, y = x*W + b with W of shape {in, out}.
// ---------------------------------------------------------------------------

struct Linear {
  Tensor W;  // {in, out}
  Tensor b;  // {out}

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    Linear l;
    l.W = Tensor({in, out});
    l.b = Tensor({out});
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    fill_uniform(l.W, rng, -bound, bound);
    return l;
  }
};

struct LinearGrads {
  Tensor W;
  Tensor b;
};

inline Tensor linear_forward(const Linear& l, const Tensor& x) {
  Tensor y = matmul(x, l.W);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += l.b[j];
  return y;
}

inline Tensor linear_backward(const Linear& l, const Tensor& x, const Tensor& grad_y,
                              LinearGrads& grads) {
  if (grads.W.size() == 0) {
    grads.W = Tensor(l.W.shape());
    grads.b = Tensor(l.b.shape());
  }
  // dW += x^T * gy ; db += colsum(gy) ; dx = gy * W^T
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xv = x(i, k);
      if (xv == 0.0) continue;
      for (std::size_t j = 0; j < grad_y.cols(); ++j) grads.W(k, j) += xv * grad_y(i, j);
    }
  }
  for (std::size_t i = 0; i < grad_y.rows(); ++i)
    for (std::size_t j = 0; j < grad_y.cols(); ++j) grads.b[j] += grad_y(i, j);
  return matmul(grad_y, transpose(l.W));
}

// ---------------------------------------------------------------------------
// Batch normalization over rows (one statistic per feature).
// ---------------------------------------------------------------------------

struct BatchNorm {
  Tensor gamma;         // {d}
  Tensor beta;          // {d}
  Tensor running_mean;  // {d}
  Tensor running_var;   // {d}
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm init(std::size_t d) {
    BatchNorm bn;
    bn.gamma = Tensor::full({d}, 1.0);
    bn.beta = Tensor({d});
    bn.running_mean = Tensor({d});
    bn.running_var = Tensor::full({d}, 1.0);
    return bn;
  }
};

struct BatchNormGrads {
  Tensor gamma;
  Tensor beta;
};

struct BatchNormCache {
  Mode mode = Mode::kEval;
  Tensor xhat;              // normalized pre-affine values
  std::vector<double> mean;
  std::vector<double> inv_std;
  Tensor x_centered;        // only filled in train mode
};

// Train mode normalizes with batch statistics (biased variance) and updates
// the running statistics with the unbiased variance; eval mode is a fixed
// affine map using the running statistics.
inline Tensor batchnorm_forward(BatchNorm& bn, const Tensor& x, Mode mode,
                                BatchNormCache* cache = nullptr) {
  if (x.ndim() != 2 || x.cols() != bn.gamma.size()) {
    throw DimensionError("batchnorm: input shape mismatch");
  }
  const std::size_t m = x.rows(), d = x.cols();
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> mean(d), inv_std(d);
  Tensor centered;

  if (mode == Mode::kTrain) {
    if (m < 2) throw NumericError("batchnorm train mode needs at least 2 rows");
    centered = Tensor(x.shape());
    for (std::size_t j = 0; j < d; ++j) {
      double mu = 0.0;
      for (std::size_t i = 0; i < m; ++i) mu += x(i, j);
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double c = x(i, j) - mu;
        centered(i, j) = c;
        var += c * c;
      }
      var /= static_cast<double>(m);
      mean[j] = mu;
      inv_std[j] = 1.0 / std::sqrt(var + bn.eps);
      const double var_unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
      bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mu;
      bn.running_var[j] = (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * var_unbiased;
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) {
      mean[j] = bn.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
    }
  }

  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x(i, j) - mean[j]) * inv_std[j];
      xhat(i, j) = xh;
      y(i, j) = bn.gamma[j] * xh + bn.beta[j];
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->xhat = xhat;
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->x_centered = std::move(centered);
  }
  return y;
}

inline Tensor batchnorm_backward(const BatchNorm& bn, const BatchNormCache& cache,
                                 const Tensor& grad_y, BatchNormGrads& grads) {
  const Tensor& xhat = cache.xhat;
  const std::size_t m = xhat.rows(), d = xhat.cols();
  if (grads.gamma.size() == 0) {
    grads.gamma = Tensor({d});
    grads.beta = Tensor({d});
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      grads.gamma[j] += grad_y(i, j) * xhat(i, j);
      grads.beta[j] += grad_y(i, j);
    }
  }

  Tensor dx(xhat.shape());
  if (cache.mode == Mode::kEval) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j)
        dx(i, j) = grad_y(i, j) * bn.gamma[j] * cache.inv_std[j];
    return dx;
  }

  // Train mode: the batch statistics depend on every row.
  for (std::size_t j = 0; j < d; ++j) {
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double dxh = grad_y(i, j) * bn.gamma[j];
      sum_dxhat += dxh;
      sum_dxhat_xhat += dxh * xhat(i, j);
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double dxh = grad_y(i, j) * bn.gamma[j];
      dx(i, j) = cache.inv_std[j] *
                 (dxh - inv_m * sum_dxhat - xhat(i, j) * inv_m * sum_dxhat_xhat);
    }
  }
  return dx;
}

}  // namespace aggnet
