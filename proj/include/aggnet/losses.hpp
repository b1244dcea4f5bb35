#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "aggnet/dataset.hpp"
#include "aggnet/errors.hpp"
#include "aggnet/model.hpp"
#include "aggnet/tensor.hpp"

namespace aggnet {

// In-batch membership scores: row q holds the scores of query q against all
// B group representations; exactly one column per row is the true group.
struct ScoreMatrix {
  Tensor S;                                 // {Q, B}, scores in (0,1)
  std::vector<std::size_t> group_of_query;  // length Q, values < B

  std::size_t queries() const { return S.rows(); }
  std::size_t groups() const { return S.cols(); }
  bool label(std::size_t q, std::size_t g) const { return group_of_query[q] == g; }
};

struct WmwConfig {
  double margin = 0.3;    // gamma, in (0,1]
  double exponent = 2.0;  // p, >= 1
};

struct LossValue {
  double loss = 0.0;
  Tensor grad;  // dL/dS, same shape as S
};

// Wilcoxon-Mann-Whitney AUC surrogate: the pairwise hinge
//   L = (1/|P||N|) sum_{i in P} sum_{j in N} max(0, gamma - (s_i - s_j))^p
// over all (positive, negative) score pairs of the batch. Zero exactly when
// every positive exceeds every negative by at least the margin.
inline LossValue wmw_loss(const ScoreMatrix& scores, const WmwConfig& cfg) {
  if (!(cfg.margin > 0.0) || cfg.margin > 1.0) throw ConfigError("wmw: margin must be in (0,1]");
  if (cfg.exponent < 1.0) throw ConfigError("wmw: exponent must be >= 1");
  require_finite(scores.S, "wmw scores");

  const std::size_t Q = scores.queries(), B = scores.groups();
  if (scores.group_of_query.size() != Q) throw DimensionError("wmw: label size mismatch");

  std::vector<std::pair<std::size_t, std::size_t>> pos, neg;
  for (std::size_t q = 0; q < Q; ++q) {
    if (scores.group_of_query[q] >= B) throw DimensionError("wmw: label out of range");
    for (std::size_t g = 0; g < B; ++g) {
      (scores.label(q, g) ? pos : neg).emplace_back(q, g);
    }
  }
  if (pos.empty() || neg.empty()) throw LossError("wmw: need at least one positive and one negative");

  LossValue out;
  out.grad = Tensor(scores.S.shape());
  const double scale = 1.0 / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
  double total = 0.0;
  for (const auto& [qi, gi] : pos) {
    const double sp = scores.S(qi, gi);
    for (const auto& [qj, gj] : neg) {
      const double t = cfg.margin - (sp - scores.S(qj, gj));
      if (t <= 0.0) continue;
      total += std::pow(t, cfg.exponent);
      const double dt = cfg.exponent * std::pow(t, cfg.exponent - 1.0) * scale;
      out.grad(qi, gi) -= dt;
      out.grad(qj, gj) += dt;
    }
  }
  out.loss = total * scale;
  return out;
}

constexpr double kScoreClamp = 1e-7;

// Weighted cross-entropy over all (query, group) entries, positive weight
// w+ = B-1 so the single positive per row balances its B-1 negatives:
//   L = (1/(Q*B)) sum [ w+ * y * (-log s) + (1-y) * (-log(1-s)) ].
// Scores are clamped to [1e-7, 1-1e-7] before the log; a clamped entry
// contributes zero gradient (the derivative of the computed expression).
inline LossValue wce_loss(const ScoreMatrix& scores) {
  require_finite(scores.S, "wce scores");
  const std::size_t Q = scores.queries(), B = scores.groups();
  if (scores.group_of_query.size() != Q) throw DimensionError("wce: label size mismatch");
  if (Q == 0 || B == 0) throw LossError("wce: empty score matrix");

  const double w_pos = static_cast<double>(B) - 1.0;
  const double scale = 1.0 / (static_cast<double>(Q) * static_cast<double>(B));
  LossValue out;
  out.grad = Tensor(scores.S.shape());
  double total = 0.0;
  for (std::size_t q = 0; q < Q; ++q) {
    if (scores.group_of_query[q] >= B) throw DimensionError("wce: label out of range");
    for (std::size_t g = 0; g < B; ++g) {
      const double raw = scores.S(q, g);
      const double s = std::min(std::max(raw, kScoreClamp), 1.0 - kScoreClamp);
      const bool clamped = raw < kScoreClamp || raw > 1.0 - kScoreClamp;
      if (scores.label(q, g)) {
        total += w_pos * -std::log(s);
        if (!clamped) out.grad(q, g) = scale * w_pos * (-1.0 / s);
      } else {
        total += -std::log(1.0 - s);
        if (!clamped) out.grad(q, g) = scale * (1.0 / (1.0 - s));
      }
    }
  }
  out.loss = total * scale;
  return out;
}

// Task loss plus the weighted sum of quantization penalties.
inline double total_loss(double task_loss, const std::vector<double>& hash_penalties,
                         double penalty_weight) {
  double p = 0.0;
  for (double v : hash_penalties) p += v;
  return task_loss + penalty_weight * p;
}

// Deployment-path score matrix: embeds the B enrolled groups and Q queries
// of a batch in eval mode (hashed codes when hashing is enabled) and scores
// every (query, group) pair.
inline ScoreMatrix batch_scores(const AggModel& model, const TrainBatch& batch) {
  const std::size_t B = batch.group_count;
  const std::size_t Q = batch.group_of_query.size();
  std::vector<Tensor> group_codes;
  group_codes.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    Tensor members({batch.group_size, batch.enrolled.dim(2)});
    for (std::size_t i = 0; i < batch.group_size; ++i) {
      const auto src = batch.enrolled.row(b, i);
      std::copy(src.begin(), src.end(), members.row(i).begin());
    }
    group_codes.push_back(group_embed(model, members).code);
  }
  ScoreMatrix out;
  out.S = Tensor({Q, B});
  out.group_of_query = batch.group_of_query;
  for (std::size_t q = 0; q < Q; ++q) {
    const std::size_t b_of = q / batch.group_size;
    const std::size_t i_of = q % batch.group_size;
    const Tensor qc = query_embed(model, batch.queries.row(b_of, i_of)).code;
    for (std::size_t g = 0; g < B; ++g) {
      out.S(q, g) = verify_score(model, group_codes[g], qc);
    }
  }
  return out;
}

}  // namespace aggnet
