#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "aggnet/dataset.hpp"
#include "aggnet/losses.hpp"
#include "aggnet/metrics.hpp"
#include "aggnet/model.hpp"

namespace aggnet {

enum class LossKind { kWmw, kWce };

inline const char* loss_name(LossKind k) { return k == LossKind::kWmw ? "wmw" : "wce"; }

inline LossKind loss_parse(const std::string& s) {
  if (s == "wmw") return LossKind::kWmw;
  if (s == "wce") return LossKind::kWce;
  throw ConfigError("unknown loss '" + s + "' (expected wmw or wce)");
}

struct TrainConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.001;
  std::size_t batch_size = 64;  // B groups per batch
  std::size_t group_size = 4;   // n members per group
  std::size_t max_epochs = 30;
  std::size_t plateau_patience = 3;
  double lr_factor = 0.1;
  double min_rel_improvement = 1e-4;  // validation-loss improvement below this is a plateau epoch
  LossKind loss = LossKind::kWmw;
  WmwConfig wmw;
  std::size_t val_batches = 4;  // fixed seeded validation batches per epoch
  std::uint64_t seed = 1;
  ModelConfig model;  // pooling / hashing / dimensions

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (batch_size < 2) throw ConfigError("train: batch size must be >= 2 (negatives need 2 groups)");
    if (group_size < 1) throw ConfigError("train: group size must be >= 1");
    if (!(lr_factor > 0.0) || lr_factor >= 1.0) throw ConfigError("train: lr_factor must be in (0,1)");
    if (val_batches < 1) throw ConfigError("train: need at least one validation batch");
  }
};

// ---------------------------------------------------------------------------
// Gradient containers aligned with param_registry ordering.
// ---------------------------------------------------------------------------

struct ModelGrads {
  FeatureNetGrads features;
  NetVladGrads vlad;
  Tensor gem_p;
  ScorerGrads scorer;
};

inline ModelGrads make_grads(AggModel& m) {
  ModelGrads g;
  g.features.layers.resize(m.features.layers.size());
  for (std::size_t l = 0; l < m.features.layers.size(); ++l) {
    g.features.layers[l].W = Tensor(m.features.layers[l].W.shape());
    g.features.layers[l].b = Tensor(m.features.layers[l].b.shape());
  }
  if (m.cfg.pooling == Pooling::kNetVlad) {
    g.vlad.a = Tensor(m.vlad.a.shape());
    g.vlad.b = Tensor(m.vlad.b.shape());
    g.vlad.c = Tensor(m.vlad.c.shape());
    g.vlad.fc.W = Tensor(m.vlad.fc.W.shape());
    g.vlad.fc.b = Tensor(m.vlad.fc.b.shape());
    g.vlad.bn.gamma = Tensor(m.vlad.bn.gamma.shape());
    g.vlad.bn.beta = Tensor(m.vlad.bn.beta.shape());
  }
  g.gem_p = Tensor({1});
  g.scorer.w = Tensor({1});
  g.scorer.beta = Tensor({1});
  return g;
}

inline void zero_grads(ModelGrads& g) {
  for (auto& l : g.features.layers) {
    l.W.fill(0.0);
    l.b.fill(0.0);
  }
  if (g.vlad.a.size()) {
    g.vlad.a.fill(0.0);
    g.vlad.b.fill(0.0);
    g.vlad.c.fill(0.0);
    g.vlad.fc.W.fill(0.0);
    g.vlad.fc.b.fill(0.0);
    g.vlad.bn.gamma.fill(0.0);
    g.vlad.bn.beta.fill(0.0);
  }
  g.gem_p.fill(0.0);
  g.scorer.w.fill(0.0);
  g.scorer.beta.fill(0.0);
}

// One gradient tensor per registry entry; nullptr for entries that are
// persisted but not SGD-updated (batch-norm running statistics).
inline std::vector<Tensor*> grad_registry(AggModel& m, ModelGrads& g) {
  std::vector<Tensor*> refs;
  for (std::size_t l = 0; l < m.features.layers.size(); ++l) {
    refs.push_back(&g.features.layers[l].W);
    refs.push_back(&g.features.layers[l].b);
  }
  if (m.cfg.pooling == Pooling::kNetVlad) {
    refs.push_back(&g.vlad.a);
    refs.push_back(&g.vlad.b);
    refs.push_back(&g.vlad.c);
    refs.push_back(&g.vlad.fc.W);
    refs.push_back(&g.vlad.fc.b);
    refs.push_back(&g.vlad.bn.gamma);
    refs.push_back(&g.vlad.bn.beta);
    refs.push_back(nullptr);  // running_mean
    refs.push_back(nullptr);  // running_var
  } else if (m.cfg.pooling == Pooling::kGem) {
    refs.push_back(&g.gem_p);
  }
  refs.push_back(&g.scorer.w);
  refs.push_back(&g.scorer.beta);
  return refs;
}

// ---------------------------------------------------------------------------
// SGD with classic momentum and L2 weight decay folded into the gradient:
//   v <- momentum*v + grad + weight_decay*param ;  param <- param - lr*v.
// Decay applies only to parameters flagged for it (weights, not biases or
// normalization shifts).
// ---------------------------------------------------------------------------

struct SgdState {
  std::vector<Tensor> velocity;  // aligned with param_registry
};

inline void sgd_step(AggModel& model, ModelGrads& grads, SgdState& state, double lr,
                     const TrainConfig& cfg) {
  const std::vector<ParamRef> params = param_registry(model);
  const std::vector<Tensor*> gs = grad_registry(model, grads);
  if (state.velocity.empty()) {
    state.velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].trainable) state.velocity[i] = Tensor(params[i].tensor->shape());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    Tensor& p = *params[i].tensor;
    const Tensor& g = *gs[i];
    if (!g.all_finite()) {
      throw TrainingError("non-finite gradient for parameter " + params[i].name);
    }
    Tensor& v = state.velocity[i];
    const double wd = params[i].decay ? cfg.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = cfg.momentum * v[j] + g[j] + wd * p[j];
      p[j] -= lr * v[j];
    }
  }
  // GeM exponents below 1 leave the generalized-mean family; project back.
  if (model.cfg.pooling == Pooling::kGem && model.gem.p[0] < 1.0) model.gem.p[0] = 1.0;
}

// ---------------------------------------------------------------------------
// One training step: differentiable forward over a batch, loss, and full
// backward pass accumulating into `grads`.
//
// Layout: the B group descriptor sets come first, then the Q = B*n queries
// as single-member sets. The NetVLAD reduction head (FC -> BN -> L2) runs
// over all B+Q vectors as one batch, so batch statistics blend group and
// query representations exactly as deployment sees them.
// ---------------------------------------------------------------------------

struct StepResult {
  double task_loss = 0.0;
  double penalty = 0.0;  // unweighted quantization penalty
  double total = 0.0;
};

inline StepResult train_step(AggModel& model, const TrainBatch& batch, const TrainConfig& cfg,
                             ModelGrads& grads) {
  const std::size_t B = batch.group_count;
  const std::size_t n = batch.group_size;
  const std::size_t Q = B * n;
  const std::size_t d_in = batch.enrolled.dim(2);
  const std::size_t d = model.cfg.d;
  const std::size_t sets = B + Q;  // B groups then Q singleton query sets

  // Feature extraction over every member and query row in one pass.
  Tensor x({B * n + Q, d_in});
  for (std::size_t g = 0; g < B; ++g) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = batch.enrolled.row(g, i);
      std::copy(src.begin(), src.end(), x.row(g * n + i).begin());
    }
  }
  for (std::size_t q = 0; q < Q; ++q) {
    const auto src = batch.queries.row(q / n, q % n);
    std::copy(src.begin(), src.end(), x.row(B * n + q).begin());
  }
  FeatureNetCache fcache;
  const Tensor feats = feature_forward(model.features, x, &fcache);

  auto set_rows = [&](std::size_t s) -> std::pair<std::size_t, std::size_t> {
    // Row range [first, first+count) of feats belonging to set s.
    if (s < B) return {s * n, n};
    return {B * n + (s - B), 1};
  };
  auto gather = [&](std::size_t first, std::size_t count) {
    Tensor m({count, d});
    for (std::size_t i = 0; i < count; ++i) {
      const auto src = feats.row(first + i);
      std::copy(src.begin(), src.end(), m.row(i).begin());
    }
    return m;
  };

  // Pooling: per-set aggregation, then (NetVLAD only) the joint reduction head.
  Tensor pre_hash({sets, d});
  std::vector<NetVladCoreCache> vlad_caches;
  std::vector<GemCache> gem_caches;
  std::vector<SumPoolCache> sum_caches;
  ReductionCache rcache;
  if (model.cfg.pooling == Pooling::kNetVlad) {
    const std::size_t dk = d * model.cfg.clusters;
    Tensor cores({sets, dk});
    vlad_caches.resize(sets);
    for (std::size_t s = 0; s < sets; ++s) {
      const auto [first, count] = set_rows(s);
      const Tensor v = netvlad_core_forward(model.vlad, gather(first, count), &vlad_caches[s]);
      std::copy(v.vec().begin(), v.vec().end(), cores.row(s).begin());
    }
    pre_hash = reduction_forward(model.vlad, cores, Mode::kTrain, &rcache);
  } else if (model.cfg.pooling == Pooling::kGem) {
    gem_caches.resize(sets);
    for (std::size_t s = 0; s < sets; ++s) {
      const auto [first, count] = set_rows(s);
      const Tensor v = gem_pool(model.gem, gather(first, count), &gem_caches[s]);
      std::copy(v.vec().begin(), v.vec().end(), pre_hash.row(s).begin());
    }
  } else {
    sum_caches.resize(sets);
    for (std::size_t s = 0; s < sets; ++s) {
      const auto [first, count] = set_rows(s);
      const Tensor v = sum_pool(gather(first, count), &sum_caches[s]);
      std::copy(v.vec().begin(), v.vec().end(), pre_hash.row(s).begin());
    }
  }

  // Binarization (straight-through) and quantization penalty.
  Tensor codes = pre_hash;
  double penalty = 0.0;
  if (model.cfg.hash.enabled) {
    for (std::size_t s = 0; s < sets; ++s) {
      const Tensor row({d}, std::vector<double>(pre_hash.row(s).begin(), pre_hash.row(s).end()));
      const Tensor c = hash_forward(model.cfg.hash, row);
      std::copy(c.vec().begin(), c.vec().end(), codes.row(s).begin());
      penalty += hash_penalty(row, model.cfg.hash.penalty_exponent);
    }
  }

  // In-batch score matrix: every query against every group representation.
  ScoreMatrix sm;
  sm.S = Tensor({Q, B});
  sm.group_of_query = batch.group_of_query;
  for (std::size_t q = 0; q < Q; ++q) {
    for (std::size_t g = 0; g < B; ++g) {
      sm.S(q, g) = score_pair(model.scorer, codes.row(g), codes.row(B + q));
    }
  }

  const LossValue lv = cfg.loss == LossKind::kWmw ? wmw_loss(sm, cfg.wmw) : wce_loss(sm);

  StepResult result;
  result.task_loss = lv.loss;
  result.penalty = penalty;
  result.total = total_loss(lv.loss, {penalty}, model.cfg.hash.penalty_weight);

  // ---- Backward ----
  Tensor d_codes({sets, d});
  for (std::size_t q = 0; q < Q; ++q) {
    for (std::size_t g = 0; g < B; ++g) {
      const double gs = lv.grad(q, g);
      if (gs == 0.0) continue;
      const ScorePairGrads pg =
          score_pair_backward(model.scorer, codes.row(g), codes.row(B + q), gs, grads.scorer);
      for (std::size_t j = 0; j < d; ++j) {
        d_codes(g, j) += pg.dg[j];
        d_codes(B + q, j) += pg.dq[j];
      }
    }
  }

  Tensor d_pre(pre_hash.shape());
  for (std::size_t s = 0; s < sets; ++s) {
    const Tensor h({d}, std::vector<double>(pre_hash.row(s).begin(), pre_hash.row(s).end()));
    const Tensor go({d}, std::vector<double>(d_codes.row(s).begin(), d_codes.row(s).end()));
    const Tensor gi = hash_backward(model.cfg.hash, h, go);
    std::copy(gi.vec().begin(), gi.vec().end(), d_pre.row(s).begin());
  }

  Tensor d_feats({B * n + Q, d});
  auto scatter = [&](std::size_t first, const Tensor& rows) {
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      auto dst = d_feats.row(first + i);
      const auto src = rows.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  };
  if (model.cfg.pooling == Pooling::kNetVlad) {
    const Tensor d_cores = reduction_backward(model.vlad, rcache, d_pre, grads.vlad);
    for (std::size_t s = 0; s < sets; ++s) {
      const auto [first, count] = set_rows(s);
      const Tensor grow({d * model.cfg.clusters,},
                        std::vector<double>(d_cores.row(s).begin(), d_cores.row(s).end()));
      scatter(first, netvlad_core_backward(model.vlad, vlad_caches[s], grow, grads.vlad));
    }
  } else if (model.cfg.pooling == Pooling::kGem) {
    for (std::size_t s = 0; s < sets; ++s) {
      const auto [first, count] = set_rows(s);
      const Tensor grow({d}, std::vector<double>(d_pre.row(s).begin(), d_pre.row(s).end()));
      GemGrads gg = gem_pool_backward(model.gem, gem_caches[s], grow);
      scatter(first, gg.x);
      grads.gem_p[0] += gg.p;
    }
  } else {
    for (std::size_t s = 0; s < sets; ++s) {
      const auto [first, count] = set_rows(s);
      const Tensor grow({d}, std::vector<double>(d_pre.row(s).begin(), d_pre.row(s).end()));
      scatter(first, sum_pool_backward(sum_caches[s], grow));
    }
  }

  feature_backward(model.features, fcache, d_feats, grads.features);
  return result;
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auc = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_auc = 0.0;
};

// One line-delimited record per epoch.
inline void write_train_report(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write train report: " + path.string());
  char buf[256];
  for (const EpochStats& e : report.epochs) {
    std::snprintf(buf, sizeof(buf),
                  "{\"epoch\":%zu,\"train_loss\":%.9g,\"val_loss\":%.9g,\"val_auc\":%.9g,"
                  "\"lr\":%.9g}\n",
                  e.epoch, e.train_loss, e.val_loss, e.val_auc, e.lr);
    out << buf;
  }
  if (!out) throw IoError("train report write failed: " + path.string());
}

struct ValStats {
  double loss = 0.0;
  double auc = 0.0;
};

// Validation on a fixed set of seeded batches (identical every epoch):
// deployment-path scores (eval-mode batch norm, binarized codes when hashing
// is on), the configured task loss, and AUC over all pooled scores.
inline ValStats validate_model(const AggModel& model, const std::vector<IdentityRecord>& val_ids,
                               const TrainConfig& cfg, Rng rng_val) {
  ValStats out;
  std::vector<double> pos, neg;
  double loss_sum = 0.0;
  for (std::size_t vb = 0; vb < cfg.val_batches; ++vb) {
    const TrainBatch batch = sample_batch(val_ids, cfg.batch_size, cfg.group_size, rng_val);
    const ScoreMatrix sm = batch_scores(model, batch);
    loss_sum += (cfg.loss == LossKind::kWmw ? wmw_loss(sm, cfg.wmw) : wce_loss(sm)).loss;
    for (std::size_t q = 0; q < sm.queries(); ++q) {
      for (std::size_t g = 0; g < sm.groups(); ++g) {
        (sm.label(q, g) ? pos : neg).push_back(sm.S(q, g));
      }
    }
  }
  out.loss = loss_sum / static_cast<double>(cfg.val_batches);
  out.auc = auc(pos, neg);
  return out;
}

struct TrainOutcome {
  AggModel model;  // best-validation-AUC parameters
  TrainReport report;
};

inline TrainOutcome train(const TrainConfig& cfg, const DatasetSplit& data) {
  cfg.validate();
  if (data.d_in != cfg.model.d_in) {
    throw ConfigError("train: dataset dimension " + std::to_string(data.d_in) +
                      " does not match model d_in " + std::to_string(cfg.model.d_in));
  }
  const std::size_t per_batch = cfg.batch_size * cfg.group_size;
  if (data.train.size() < per_batch) {
    throw SamplingError("train: need at least B*n training identities");
  }
  if (data.validation.size() < per_batch) {
    throw SamplingError("train: need at least B*n validation identities");
  }
  const std::size_t batches_per_epoch = data.train.size() / per_batch;

  Rng master(cfg.seed);
  Rng rng_init = master.split("init");
  TrainOutcome out;
  out.model = AggModel::init(cfg.model, rng_init);

  if (cfg.model.pooling == Pooling::kNetVlad) {
    // Centroid initialization: K-means over extracted features of one sample
    // per training identity (capped), through the freshly initialized net.
    Rng rng_km = master.split("kmeans");
    const std::size_t cap = std::min<std::size_t>(data.train.size(), 512);
    Tensor raw({cap, data.d_in});
    for (std::size_t i = 0; i < cap; ++i) {
      const auto& s = data.train[i].samples.front();
      std::copy(s.begin(), s.end(), raw.row(i).begin());
    }
    const Tensor descriptors = feature_forward(out.model.features, raw);
    netvlad_init_kmeans(out.model.vlad, descriptors, rng_km);
  }

  Rng rng_batch = master.split("batch");
  ModelGrads grads = make_grads(out.model);
  SgdState state;
  double lr = cfg.lr;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t plateau_epochs = 0;
  AggModel best_model = out.model;
  double best_auc = -1.0;
  std::size_t best_epoch = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const TrainBatch batch = sample_batch(data.train, cfg.batch_size, cfg.group_size, rng_batch);
      zero_grads(grads);
      const StepResult r = train_step(out.model, batch, cfg, grads);
      if (!std::isfinite(r.total)) {
        throw TrainingError("divergence: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += r.total;
      sgd_step(out.model, grads, state, lr, cfg);
    }

    const ValStats vs = validate_model(out.model, data.validation, cfg, master.split("val"));
    EpochStats es;
    es.epoch = epoch;
    es.train_loss = loss_sum / static_cast<double>(batches_per_epoch);
    es.val_loss = vs.loss;
    es.val_auc = vs.auc;
    es.lr = lr;
    out.report.epochs.push_back(es);

    if (vs.auc > best_auc) {
      best_auc = vs.auc;
      best_model = out.model;
      best_epoch = epoch;
    }

    // Reduce-on-plateau on the validation loss.
    const bool improved =
        std::isinf(best_val_loss) ||
        (best_val_loss - vs.loss) / std::max(std::abs(best_val_loss), 1e-12) >=
            cfg.min_rel_improvement;
    if (vs.loss < best_val_loss) best_val_loss = vs.loss;
    if (improved) {
      plateau_epochs = 0;
    } else if (++plateau_epochs >= cfg.plateau_patience) {
      lr *= cfg.lr_factor;
      plateau_epochs = 0;
    }
  }

  if (best_epoch > 0) out.model = best_model;
  out.report.best_epoch = best_epoch;
  out.report.best_val_auc = best_auc < 0.0 ? 0.0 : best_auc;
  return out;
}

}  // namespace aggnet
