#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "aggnet/layers.hpp"
#include "aggnet/rng.hpp"
#include "aggnet/tensor.hpp"

namespace aggnet {

// ---------------------------------------------------------------------------
// K-means (Lloyd's algorithm with k-means++ seeding).
// ---------------------------------------------------------------------------

struct KMeansResult {
  Tensor centroids;  // {K, d}
  double inertia = 0.0;
  std::size_t iterations = 0;
};

inline KMeansResult kmeans(const Tensor& points, std::size_t K, Rng& rng,
                           std::size_t max_iter = 100, double tol = 1e-6) {
  if (points.ndim() != 2) throw DimensionError("kmeans: 2-d input required");
  const std::size_t N = points.rows(), d = points.cols();
  if (N < K || K == 0) throw InitError("kmeans: need at least K points");

  auto sqdist = [&](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double diff = a[j] - b[j];
      s += diff * diff;
    }
    return s;
  };

  // k-means++ seeding.
  Tensor centroids({K, d});
  std::vector<double> dist2(N, std::numeric_limits<double>::infinity());
  std::size_t first = rng.uniform_below(N);
  for (std::size_t j = 0; j < d; ++j) centroids(0, j) = points(first, j);
  for (std::size_t k = 1; k < K; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      dist2[i] = std::min(dist2[i], sqdist(points.row(i), centroids.row(k - 1)));
      total += dist2[i];
    }
    std::size_t chosen = 0;
    if (total <= 0.0) {
      chosen = rng.uniform_below(N);
    } else {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      chosen = N - 1;
      for (std::size_t i = 0; i < N; ++i) {
        acc += dist2[i];
        if (acc >= target) {
          chosen = i;
          break;
        }
      }
    }
    for (std::size_t j = 0; j < d; ++j) centroids(k, j) = points(chosen, j);
  }

  // Lloyd iterations.
  std::vector<std::size_t> assign(N, 0);
  double prev_inertia = std::numeric_limits<double>::infinity();
  KMeansResult res;
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_k = 0;
      for (std::size_t k = 0; k < K; ++k) {
        const double dd = sqdist(points.row(i), centroids.row(k));
        if (dd < best) {
          best = dd;
          best_k = k;
        }
      }
      assign[i] = best_k;
      inertia += best;
    }

    Tensor sums({K, d});
    std::vector<std::size_t> counts(K, 0);
    for (std::size_t i = 0; i < N; ++i) {
      counts[assign[i]]++;
      for (std::size_t j = 0; j < d; ++j) sums(assign[i], j) += points(i, j);
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (counts[k] == 0) {
        // Re-seed an empty cluster at the point farthest from its centroid.
        double worst = -1.0;
        std::size_t worst_i = 0;
        for (std::size_t i = 0; i < N; ++i) {
          const double dd = sqdist(points.row(i), centroids.row(assign[i]));
          if (dd > worst) {
            worst = dd;
            worst_i = i;
          }
        }
        for (std::size_t j = 0; j < d; ++j) centroids(k, j) = points(worst_i, j);
      } else {
        for (std::size_t j = 0; j < d; ++j)
          centroids(k, j) = sums(k, j) / static_cast<double>(counts[k]);
      }
    }

    res.iterations = iter + 1;
    res.inertia = inertia;
    const double rel_change =
        (prev_inertia - inertia) / std::max(prev_inertia, 1e-300);
    if (iter > 0 && std::abs(rel_change) < tol) break;
    prev_inertia = inertia;
  }
  res.centroids = centroids;
  return res;
}

// ---------------------------------------------------------------------------
// NetVLAD aggregation.
//
// The core computes, for descriptors x_1..x_n in R^d and K clusters,
//   H(j,k) = sum_i softmax_k(a_k . x_i + b_k) * (x_i(j) - c_k(j)),
// flattens H cluster-major (index k*d + j) and L2-normalizes the result.
// A fully-connected layer then reduces the d*K vector back to d, followed by
// batch normalization and a final L2 normalization.
// ---------------------------------------------------------------------------

struct NetVladParams {
  std::size_t K = 0;
  std::size_t d = 0;
  Tensor a;       // {K, d} assignment weights
  Tensor b;       // {K}    assignment biases
  Tensor c;       // {K, d} centroids
  Linear fc;      // {d*K, d}
  BatchNorm bn;   // over d features

  static NetVladParams init(std::size_t K, std::size_t d, Rng& rng) {
    if (K == 0) throw DimensionError("netvlad: K must be positive");
    NetVladParams p;
    p.K = K;
    p.d = d;
    p.a = Tensor({K, d});
    fill_normal(p.a, rng, 1.0);
    p.b = Tensor({K});
    p.c = Tensor({K, d});
    fill_normal(p.c, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    p.fc = Linear::init(d * K, d, rng);
    // Warm-start the reduction near block averaging: with W ~= tiled I/K the
    // reduced vector tracks the column mean of the residual matrix, so the
    // layer starts geometry-preserving instead of randomly mixing
    // coordinates.  A damped random component keeps the blocks from being
    // exactly interchangeable.
    for (double& w : p.fc.W.vec()) w *= 0.1;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < d; ++j) p.fc.W(k * d + j, j) += 1.0 / static_cast<double>(K);
    p.bn = BatchNorm::init(d);
    return p;
  }
};

struct NetVladGrads {
  Tensor a;
  Tensor b;
  Tensor c;
  LinearGrads fc;
  BatchNormGrads bn;
};

// Initializes centroids with k-means and sets the assignment parameters to
// a_k = 2*alpha*c_k, b_k = -alpha*|c_k|^2 so the initial soft assignment
// approximates nearest-centroid with sharpness alpha.
inline void netvlad_init_kmeans(NetVladParams& params, const Tensor& descriptors, Rng& rng,
                                double alpha = 10.0) {
  const KMeansResult km = kmeans(descriptors, params.K, rng);
  params.c = km.centroids;
  for (std::size_t k = 0; k < params.K; ++k) {
    double sq = 0.0;
    for (std::size_t j = 0; j < params.d; ++j) {
      params.a(k, j) = 2.0 * alpha * params.c(k, j);
      sq += params.c(k, j) * params.c(k, j);
    }
    params.b[k] = -alpha * sq;
  }
}

struct NetVladCoreCache {
  Tensor x;        // {n, d}
  Tensor weights;  // {n, K} soft assignments
  Tensor h_mat;    // {d, K} residual matrix H
  L2NormCache l2;
};

// Soft-assignment weights for one descriptor set, exposed for tests.
inline Tensor netvlad_assign(const NetVladParams& params, const Tensor& x) {
  const std::size_t n = x.rows(), K = params.K;
  Tensor w({n, K});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> logits(K);
    for (std::size_t k = 0; k < K; ++k) {
      logits[k] = dot(params.a.row(k), x.row(i)) + params.b[k];
      mx = std::max(mx, logits[k]);
    }
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      logits[k] = std::exp(logits[k] - mx);
      z += logits[k];
    }
    for (std::size_t k = 0; k < K; ++k) w(i, k) = logits[k] / z;
  }
  return w;
}

// The residual matrix H of the aggregation equation, {d, K}.
inline Tensor netvlad_residual_matrix(const NetVladParams& params, const Tensor& x,
                                      const Tensor& weights) {
  const std::size_t n = x.rows(), d = params.d, K = params.K;
  Tensor h({d, K});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      const double w = weights(i, k);
      for (std::size_t j = 0; j < d; ++j) {
        h(j, k) += w * (x(i, j) - params.c(k, j));
      }
    }
  }
  return h;
}

// x {n, d} -> unit-norm flattened residual vector {d*K}.
inline Tensor netvlad_core_forward(const NetVladParams& params, const Tensor& x,
                                   NetVladCoreCache* cache = nullptr) {
  if (x.ndim() != 2 || x.rows() == 0 || x.cols() != params.d) {
    throw DimensionError("netvlad: descriptor shape mismatch");
  }
  NetVladCoreCache local;
  NetVladCoreCache& c = cache ? *cache : local;
  c.x = x;
  c.weights = netvlad_assign(params, x);
  c.h_mat = netvlad_residual_matrix(params, x, c.weights);

  const std::size_t d = params.d, K = params.K;
  Tensor flat({1, d * K});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < d; ++j) flat(0, k * d + j) = c.h_mat(j, k);
  Tensor y = l2norm_rows_forward(flat, &c.l2);
  return Tensor({d * K}, y.vec());
}

inline Tensor netvlad_core_backward(const NetVladParams& params, const NetVladCoreCache& cache,
                                    const Tensor& grad_h, NetVladGrads& grads) {
  const std::size_t n = cache.x.rows(), d = params.d, K = params.K;
  if (grads.a.size() == 0) {
    grads.a = Tensor({K, d});
    grads.b = Tensor({K});
    grads.c = Tensor({K, d});
  }

  Tensor gflat({1, d * K}, grad_h.vec());
  Tensor dflat = l2norm_rows_backward(cache.l2, gflat);
  Tensor dH({d, K});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < d; ++j) dH(j, k) = dflat(0, k * d + j);

  // Residual path into c: dc_k(j) = -dH(j,k) * sum_i w_ik.
  for (std::size_t k = 0; k < K; ++k) {
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) wsum += cache.weights(i, k);
    for (std::size_t j = 0; j < d; ++j) grads.c(k, j) += -dH(j, k) * wsum;
  }

  Tensor dx({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    // t_ik = sum_j dH(j,k) * (x_i(j) - c_k(j)) is the gradient on w_ik.
    std::vector<double> t(K);
    double t_dot_w = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += dH(j, k) * (cache.x(i, j) - params.c(k, j));
      t[k] = acc;
      t_dot_w += acc * cache.weights(i, k);
    }
    for (std::size_t k = 0; k < K; ++k) {
      const double w = cache.weights(i, k);
      const double dlogit = w * (t[k] - t_dot_w);  // softmax backward
      grads.b[k] += dlogit;
      for (std::size_t j = 0; j < d; ++j) {
        grads.a(k, j) += dlogit * cache.x(i, j);
        dx(i, j) += dlogit * params.a(k, j);
      }
    }
    // Direct residual path into x.
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += cache.weights(i, k) * dH(j, k);
      dx(i, j) += acc;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Reduction head shared by group and query aggregation: FC -> BN -> L2.
// ---------------------------------------------------------------------------

struct ReductionCache {
  Tensor input;  // {m, d*K}
  BatchNormCache bn;
  L2NormCache l2;
};

inline Tensor reduction_forward(NetVladParams& params, const Tensor& v, Mode mode,
                                ReductionCache* cache = nullptr) {
  ReductionCache local;
  ReductionCache& c = cache ? *cache : local;
  c.input = v;
  Tensor y = linear_forward(params.fc, v);
  y = batchnorm_forward(params.bn, y, mode, &c.bn);
  return l2norm_rows_forward(y, &c.l2);
}

inline Tensor reduction_backward(const NetVladParams& params, const ReductionCache& cache,
                                 const Tensor& grad_p, NetVladGrads& grads) {
  Tensor g = l2norm_rows_backward(cache.l2, grad_p);
  g = batchnorm_backward(params.bn, cache.bn, g, grads.bn);
  return linear_backward(params.fc, cache.input, g, grads.fc);
}

// Full single-group NetVLAD forward: core aggregation, then the reduction
// head with eval-mode batch norm (running statistics), output unit-norm {d}.
inline Tensor netvlad_forward(const NetVladParams& params, const Tensor& x) {
  Tensor h = netvlad_core_forward(params, x);
  Tensor row({1, h.size()}, h.vec());
  // Eval-mode BN does not mutate running statistics.
  Tensor p = reduction_forward(const_cast<NetVladParams&>(params), row, Mode::kEval);
  return Tensor({params.d}, p.vec());
}

}  // namespace aggnet
