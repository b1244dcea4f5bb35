#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "aggnet/layers.hpp"
#include "aggnet/tensor.hpp"

namespace aggnet {

// ---------------------------------------------------------------------------
// Sum pooling: column sums, then L2 normalization.
// ---------------------------------------------------------------------------

struct SumPoolCache {
  std::size_t n = 0;
  L2NormCache l2;
};

inline Tensor sum_pool(const Tensor& x, SumPoolCache* cache = nullptr) {
  if (x.ndim() != 2 || x.rows() == 0) throw DimensionError("sum_pool: 2-d input required");
  Tensor s({1, x.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) s(0, j) += x(i, j);
  SumPoolCache local;
  SumPoolCache& c = cache ? *cache : local;
  c.n = x.rows();
  Tensor y = l2norm_rows_forward(s, &c.l2);
  return Tensor({x.cols()}, y.vec());
}

inline Tensor sum_pool_backward(const SumPoolCache& cache, const Tensor& grad_y) {
  Tensor g({1, grad_y.size()}, grad_y.vec());
  Tensor ds = l2norm_rows_backward(cache.l2, g);
  Tensor dx({cache.n, grad_y.size()});
  for (std::size_t i = 0; i < cache.n; ++i)
    for (std::size_t j = 0; j < grad_y.size(); ++j) dx(i, j) = ds(0, j);
  return dx;
}

// ---------------------------------------------------------------------------
// Generalized-mean pooling with a learnable exponent p >= 1.
//
// out(j) = ((1/n) * sum_i max(x_ij, eps)^p)^(1/p), then L2-normalized.
// Entries are clamped at eps = 1e-6 because descriptors contain negative
// values. Computed against the per-column maximum so large p stays stable.
// ---------------------------------------------------------------------------

inline constexpr double kGemClamp = 1e-6;

struct GemParams {
  Tensor p = Tensor::scalar(3.0);
};

struct GemCache {
  Tensor x;
  Tensor g_raw;                 // pre-normalization pooled vector {1, d}
  std::vector<double> col_max;  // per-column max of clamped entries
  std::vector<double> s_rel;    // mean_i (m_ij / col_max_j)^p
  L2NormCache l2;
};

inline Tensor gem_pool(const GemParams& params, const Tensor& x, GemCache* cache = nullptr) {
  if (x.ndim() != 2 || x.rows() == 0) throw DimensionError("gem_pool: 2-d input required");
  const double p = params.p[0];
  if (p < 1.0) throw ConfigError("gem_pool: exponent must be >= 1");
  const std::size_t n = x.rows(), d = x.cols();

  GemCache local;
  GemCache& c = cache ? *cache : local;
  c.x = x;
  c.col_max.assign(d, kGemClamp);
  c.s_rel.assign(d, 0.0);

  for (std::size_t j = 0; j < d; ++j) {
    double mx = kGemClamp;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, std::max(x(i, j), kGemClamp));
    c.col_max[j] = mx;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = std::max(x(i, j), kGemClamp);
      s += std::pow(m / mx, p);
    }
    c.s_rel[j] = s / static_cast<double>(n);
  }

  c.g_raw = Tensor({1, d});
  for (std::size_t j = 0; j < d; ++j) {
    c.g_raw(0, j) = c.col_max[j] * std::pow(c.s_rel[j], 1.0 / p);
  }
  Tensor y = l2norm_rows_forward(c.g_raw, &c.l2);
  return Tensor({d}, y.vec());
}

struct GemGrads {
  Tensor x;  // {n, d}
  double p = 0.0;
};

inline GemGrads gem_pool_backward(const GemParams& params, const GemCache& cache,
                                  const Tensor& grad_y) {
  const double p = params.p[0];
  const Tensor& x = cache.x;
  const std::size_t n = x.rows(), d = x.cols();

  Tensor gy({1, d}, grad_y.vec());
  Tensor dg = l2norm_rows_backward(cache.l2, gy);

  GemGrads grads;
  grads.x = Tensor({n, d});
  for (std::size_t j = 0; j < d; ++j) {
    const double mx = cache.col_max[j];
    const double s_rel = cache.s_rel[j];
    const double dgj = dg(0, j);
    // d out_j / d x_ij = (1/n) * (m/mx)^(p-1) * s_rel^(1/p - 1), zero when clamped.
    const double s_pow = std::pow(s_rel, 1.0 / p - 1.0);
    double dlogs_dp = 0.0;  // sum_i w_i * ln m_i / sum_i w_i with w_i = (m/mx)^p
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = std::max(x(i, j), kGemClamp);
      const double w = std::pow(m / mx, p);
      wsum += w;
      dlogs_dp += w * std::log(m);
      if (x(i, j) > kGemClamp) {
        grads.x(i, j) = dgj * std::pow(m / mx, p - 1.0) * s_pow / static_cast<double>(n);
      }
    }
    // out_j = mx * s_rel^(1/p); ln out_j = ln mx + (1/p) ln s_rel with
    // ln S_j = p ln mx + ln s_rel, so d out_j/dp = out_j*(-ln S_j/p^2 + (dS/dp)/(p S)).
    const double out_j = cache.g_raw(0, j);
    const double ln_S = p * std::log(mx) + std::log(s_rel);
    const double dS_over_S = dlogs_dp / wsum;  // (dS/dp)/S
    grads.p += dgj * out_j * (-ln_S / (p * p) + dS_over_S / p);
  }
  return grads;
}

}  // namespace aggnet
