#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "aggnet/feature_net.hpp"
#include "aggnet/hashing.hpp"
#include "aggnet/kv.hpp"
#include "aggnet/netvlad.hpp"
#include "aggnet/pooling.hpp"
#include "aggnet/scorer.hpp"

namespace aggnet {

enum class Pooling { kNetVlad, kGem, kSum };

inline const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::kNetVlad: return "netvlad";
    case Pooling::kGem: return "gem";
    case Pooling::kSum: return "sum";
  }
  throw ConfigError("unknown pooling");
}

inline Pooling pooling_parse(const std::string& s) {
  if (s == "netvlad") return Pooling::kNetVlad;
  if (s == "gem") return Pooling::kGem;
  if (s == "sum") return Pooling::kSum;
  throw ConfigError("unknown pooling '" + s + "' (expected netvlad, gem, or sum)");
}

struct ModelConfig {
  std::size_t d_in = 64;                // raw descriptor dimension
  std::vector<std::size_t> hidden{64};  // feature-extractor hidden widths
  std::size_t d = 32;                   // embedding / code dimension
  Pooling pooling = Pooling::kNetVlad;
  std::size_t clusters = 8;             // NetVLAD cluster count
  HashConfig hash;
};

// The full aggregation model: a shared per-member feature extractor, a
// permutation-invariant pooling stage (NetVLAD with an FC+BN+L2 reduction
// head, or GeM / sum pooling followed by L2), sign binarization, and a
// logistic similarity scorer. Queries are single-member groups and pass
// through the identical pipeline.
struct AggModel {
  ModelConfig cfg;
  FeatureNet features;
  NetVladParams vlad;  // only populated for NetVLAD pooling
  GemParams gem;       // only used for GeM pooling
  LogisticScorer scorer;

  static AggModel init(const ModelConfig& cfg, Rng& rng) {
    if (cfg.d_in == 0 || cfg.d == 0) throw ConfigError("model: dimensions must be positive");
    AggModel m;
    m.cfg = cfg;
    std::vector<std::size_t> widths;
    widths.push_back(cfg.d_in);
    for (std::size_t w : cfg.hidden) widths.push_back(w);
    widths.push_back(cfg.d);
    m.features = FeatureNet::init(widths, rng);
    if (cfg.pooling == Pooling::kNetVlad) {
      m.vlad = NetVladParams::init(cfg.clusters, cfg.d, rng);
    }
    return m;
  }
};

// ---------------------------------------------------------------------------
// Parameter registry: one stable, documented ordering used by the optimizer,
// the checkpoint format, and the parameter hash. Order:
//   feature layer 0 W, b, layer 1 W, b, ...
//   [netvlad] a, b, c, fc.W, fc.b, bn.gamma, bn.beta, bn.running_mean,
//             bn.running_var
//   [gem]     p
//   scorer w, beta
// ---------------------------------------------------------------------------

struct ParamRef {
  std::string name;
  Tensor* tensor;
  bool decay;      // weight decay applies
  bool trainable;  // running statistics are persisted but never SGD-updated
};

inline std::vector<ParamRef> param_registry(AggModel& m) {
  std::vector<ParamRef> refs;
  for (std::size_t l = 0; l < m.features.layers.size(); ++l) {
    const std::string base = "features." + std::to_string(l) + ".";
    refs.push_back({base + "W", &m.features.layers[l].W, true, true});
    refs.push_back({base + "b", &m.features.layers[l].b, false, true});
  }
  if (m.cfg.pooling == Pooling::kNetVlad) {
    refs.push_back({"netvlad.a", &m.vlad.a, true, true});
    refs.push_back({"netvlad.b", &m.vlad.b, false, true});
    refs.push_back({"netvlad.c", &m.vlad.c, true, true});
    refs.push_back({"netvlad.fc.W", &m.vlad.fc.W, true, true});
    refs.push_back({"netvlad.fc.b", &m.vlad.fc.b, false, true});
    refs.push_back({"netvlad.bn.gamma", &m.vlad.bn.gamma, false, true});
    refs.push_back({"netvlad.bn.beta", &m.vlad.bn.beta, false, true});
    refs.push_back({"netvlad.bn.running_mean", &m.vlad.bn.running_mean, false, false});
    refs.push_back({"netvlad.bn.running_var", &m.vlad.bn.running_var, false, false});
  } else if (m.cfg.pooling == Pooling::kGem) {
    refs.push_back({"gem.p", &m.gem.p, false, true});
  }
  refs.push_back({"scorer.w", &m.scorer.w, true, true});
  refs.push_back({"scorer.beta", &m.scorer.beta, false, true});
  return refs;
}

// FNV-1a over the little-endian f64 bytes of every parameter in registry
// order; changes iff some parameter bit changes.
inline std::uint64_t param_hash(AggModel& m) {
  std::string bytes;
  for (const ParamRef& ref : param_registry(m)) {
    for (std::size_t i = 0; i < ref.tensor->size(); ++i) le::put_f64(bytes, (*ref.tensor)[i]);
  }
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Deployment-path embedding (eval mode throughout).
// ---------------------------------------------------------------------------

// Members sorted lexicographically by raw descriptor content before
// aggregation, so the group embedding is exactly invariant to member order
// (identical floating-point operations in an identical sequence).
inline Tensor sort_rows_lexicographic(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = x.row(a), rb = x.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = x.row(order[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

struct GroupEmbedding {
  Tensor real;  // unit-norm pre-binarization embedding, {d}
  Tensor code;  // {-1,+1}^d when hashing is enabled, otherwise == real
};

// One descriptor set {n, d} of extracted features -> unit embedding {d}.
inline Tensor aggregate_eval(const AggModel& m, const Tensor& feats) {
  switch (m.cfg.pooling) {
    case Pooling::kNetVlad:
      return netvlad_forward(m.vlad, feats);
    case Pooling::kGem:
      return gem_pool(m.gem, feats);
    case Pooling::kSum:
      return sum_pool(feats);
  }
  throw ConfigError("unknown pooling");
}

inline GroupEmbedding group_embed(const AggModel& m, const Tensor& members) {
  if (members.ndim() != 2 || members.rows() == 0 || members.cols() != m.cfg.d_in) {
    throw DimensionError("group_embed: member matrix must be {n, d_in}");
  }
  require_finite(members, "group_embed input");
  const Tensor sorted = sort_rows_lexicographic(members);
  const Tensor feats = feature_forward(m.features, sorted);
  GroupEmbedding out;
  out.real = aggregate_eval(m, feats);
  out.code = hash_forward(m.cfg.hash, out.real);
  return out;
}

inline GroupEmbedding query_embed(const AggModel& m, std::span<const double> sample) {
  Tensor row({1, sample.size()}, std::vector<double>(sample.begin(), sample.end()));
  return group_embed(m, row);
}

// Score a stored group code against a query code.
inline double verify_score(const AggModel& m, const Tensor& group_code, const Tensor& query_code) {
  return score_pair(m.scorer, std::span<const double>(group_code.vec()),
                    std::span<const double>(query_code.vec()));
}

// ---------------------------------------------------------------------------
// Checkpoint persistence: a text manifest (<path>) plus a little-endian f64
// blob (<path stem>.params) holding every registry tensor back to back. The
// blob round-trips bit-exactly.
// ---------------------------------------------------------------------------

inline std::string join_widths(const std::vector<std::size_t>& widths) {
  std::string s;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(widths[i]);
  }
  return s;
}

inline std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> widths;
  if (s.empty()) return widths;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      widths.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad width list entry '" + item + "'");
    }
  }
  return widths;
}

inline void checkpoint_save(AggModel& m, const std::filesystem::path& path) {
  KvFile kv;
  kv.set("format", "aggnet-checkpoint");
  kv.set_u64("version", 1);
  kv.set_u64("d_in", m.cfg.d_in);
  kv.set("hidden", join_widths(m.cfg.hidden));
  kv.set_u64("d", m.cfg.d);
  kv.set("pooling", pooling_name(m.cfg.pooling));
  kv.set_u64("clusters", m.cfg.clusters);
  kv.set_u64("hash_enabled", m.cfg.hash.enabled ? 1 : 0);
  kv.set_double("hash_weight", m.cfg.hash.penalty_weight);
  kv.set_double("hash_exponent", m.cfg.hash.penalty_exponent);

  std::string blob;
  std::uint64_t values = 0;
  for (const ParamRef& ref : param_registry(m)) {
    for (std::size_t i = 0; i < ref.tensor->size(); ++i) le::put_f64(blob, (*ref.tensor)[i]);
    values += ref.tensor->size();
  }
  kv.set_u64("value_count", values);
  const std::filesystem::path data_path = path.parent_path() / (path.stem().string() + ".params");
  kv.set("data_file", data_path.filename().string());
  kv.write(path);
  write_file_bytes(data_path, blob);
}

inline AggModel checkpoint_load(const std::filesystem::path& path) {
  const KvFile kv = KvFile::read(path);
  if (kv.require("format") != "aggnet-checkpoint") {
    throw FormatError("not a checkpoint manifest: " + path.string(), 0);
  }
  if (kv.require_u64("version") != 1) throw FormatError("unsupported checkpoint version", 0);

  ModelConfig cfg;
  cfg.d_in = kv.require_u64("d_in");
  cfg.hidden = parse_widths(kv.require("hidden"));
  cfg.d = kv.require_u64("d");
  cfg.pooling = pooling_parse(kv.require("pooling"));
  cfg.clusters = kv.require_u64("clusters");
  cfg.hash.enabled = kv.require_u64("hash_enabled") != 0;
  cfg.hash.penalty_weight = kv.require_double("hash_weight");
  cfg.hash.penalty_exponent = kv.require_double("hash_exponent");

  Rng rng(0);  // placeholder values; every parameter is overwritten below
  AggModel m = AggModel::init(cfg, rng);

  const std::filesystem::path data_path = path.parent_path() / kv.require("data_file");
  const std::string blob = read_file_bytes(data_path);
  le::Reader reader(blob, "checkpoint blob");
  std::uint64_t values = 0;
  for (const ParamRef& ref : param_registry(m)) {
    for (std::size_t i = 0; i < ref.tensor->size(); ++i) (*ref.tensor)[i] = reader.f64();
    values += ref.tensor->size();
  }
  if (values != kv.require_u64("value_count")) {
    throw FormatError("checkpoint value_count does not match model architecture", 0);
  }
  if (!reader.at_end()) {
    throw FormatError("trailing bytes in checkpoint blob", values * 8);
  }
  return m;
}

}  // namespace aggnet
