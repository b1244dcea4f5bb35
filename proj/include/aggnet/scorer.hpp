#pragma once

#include <cmath>

#include "aggnet/errors.hpp"
#include "aggnet/tensor.hpp"

namespace aggnet {

// Calibrated similarity score: s = sigmoid(w * <g, q> / d + beta).
// The inner product of two d-bit codes in {-1,+1}^d lies in [-d, d], so the
// normalized similarity <g,q>/d lies in [-1, 1]; w and beta map it to a
// probability. Initialized with a positive slope so that higher similarity
// means higher score from the first step.
struct LogisticScorer {
  Tensor w = Tensor::scalar(5.0);
  Tensor beta = Tensor::scalar(0.0);
};

struct ScorerGrads {
  Tensor w;
  Tensor beta;
};

inline double sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Score one (group code, query code) pair of equal dimension d.
inline double score_pair(const LogisticScorer& scorer, std::span<const double> g,
                         std::span<const double> q) {
  if (g.size() != q.size() || g.empty()) throw DimensionError("score: code size mismatch");
  const double sim = dot(g, q) / static_cast<double>(g.size());
  return sigmoid(scorer.w[0] * sim + scorer.beta[0]);
}

// Backward through the score for one pair. grad_s is dL/ds; accumulates the
// scorer parameter gradients and returns (dL/dg, dL/dq).
struct ScorePairGrads {
  Tensor dg;
  Tensor dq;
};

inline ScorePairGrads score_pair_backward(const LogisticScorer& scorer, std::span<const double> g,
                                          std::span<const double> q, double grad_s,
                                          ScorerGrads& grads) {
  if (grads.w.size() == 0) {
    grads.w = Tensor::scalar(0.0);
    grads.beta = Tensor::scalar(0.0);
  }
  const double d = static_cast<double>(g.size());
  const double sim = dot(g, q) / d;
  const double s = sigmoid(scorer.w[0] * sim + scorer.beta[0]);
  const double dz = grad_s * s * (1.0 - s);  // sigmoid'(z) = s(1-s)
  grads.w[0] += dz * sim;
  grads.beta[0] += dz;
  ScorePairGrads out;
  out.dg = Tensor({g.size()});
  out.dq = Tensor({q.size()});
  const double coef = dz * scorer.w[0] / d;
  for (std::size_t j = 0; j < g.size(); ++j) {
    out.dg[j] = coef * q[j];
    out.dq[j] = coef * g[j];
  }
  return out;
}

}  // namespace aggnet
