#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aggnet/errors.hpp"
#include "aggnet/kv.hpp"
#include "aggnet/rng.hpp"
#include "aggnet/tensor.hpp"

namespace aggnet {

// One identity with its raw (pre-feature-extractor) sample vectors.
struct IdentityRecord {
  std::uint32_t identity_id = 0;
  std::vector<std::vector<double>> samples;  // each of dimension d_in
};

struct DatasetSplit {
  std::size_t d_in = 0;
  std::vector<IdentityRecord> train;
  std::vector<IdentityRecord> validation;
  std::vector<IdentityRecord> test;
};

// One training batch: B groups of n identities. Each identity contributes one
// enrolled sample and one distinct query sample. Query g*n+i belongs to group g.
struct TrainBatch {
  std::size_t group_count = 0;  // B
  std::size_t group_size = 0;   // n
  Tensor enrolled;              // {B, n, d_in}
  Tensor queries;               // {B, n, d_in}
  std::vector<std::size_t> group_of_query;  // flat query index -> group
};

// Synthetic identity generator: each identity is a latent unit vector scaled
// by class_sep, samples are that latent plus isotropic Gaussian noise.
// Identities are split 80/10/10 (by identity) into train/validation/test.
inline DatasetSplit gen_synthetic(std::size_t num_identities, std::size_t samples_per_identity,
                                  std::size_t d_in, double class_sep, double noise_sigma,
                                  Rng& rng) {
  if (num_identities < 2 || d_in == 0) throw ConfigError("gen_synthetic: non-positive dimensions");
  if (samples_per_identity < 2) {
    throw ConfigError("gen_synthetic: need at least 2 samples per identity");
  }
  if (noise_sigma < 0.0) throw ConfigError("gen_synthetic: negative noise_sigma");

  DatasetSplit split;
  split.d_in = d_in;
  const std::size_t n_train = (num_identities * 8) / 10;
  const std::size_t n_val = num_identities / 10;

  for (std::size_t id = 0; id < num_identities; ++id) {
    std::vector<double> mu(d_in);
    double norm = 0.0;
    for (double& v : mu) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1.0;
    for (double& v : mu) v = class_sep * v / norm;

    IdentityRecord rec;
    rec.identity_id = static_cast<std::uint32_t>(id);
    rec.samples.resize(samples_per_identity);
    for (auto& s : rec.samples) {
      s.resize(d_in);
      for (std::size_t j = 0; j < d_in; ++j) s[j] = mu[j] + noise_sigma * rng.normal();
    }
    if (id < n_train) {
      split.train.push_back(std::move(rec));
    } else if (id < n_train + n_val) {
      split.validation.push_back(std::move(rec));
    } else {
      split.test.push_back(std::move(rec));
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// Embedding file format.
//
// Manifest (key=value lines, canonical order):
//   dim=<d_in>
//   count=<total rows>
//   data_file=<relative path>
//   ids_file=<relative path>
// data_file: count*dim little-endian 32-bit floats, row-major.
// ids_file:  per row, a little-endian 32-bit unsigned identity id followed by
//            an 8-bit split tag (0=train, 1=val, 2=test).
// ---------------------------------------------------------------------------

inline DatasetSplit load_embeddings(const std::filesystem::path& manifest_path) {
  const KvFile manifest = KvFile::read(manifest_path);
  const std::size_t dim = manifest.require_u64("dim");
  const std::size_t count = manifest.require_u64("count");
  if (dim == 0) throw FormatError("embedding manifest: dim must be positive", 0);
  const auto base = manifest_path.parent_path();
  const auto data_path = base / manifest.require("data_file");
  const auto ids_path = base / manifest.require("ids_file");

  const std::string data_bytes = read_file_bytes(data_path);
  const std::string ids_bytes = read_file_bytes(ids_path);
  if (data_bytes.size() != count * dim * 4) {
    throw FormatError("embedding data file: expected " + std::to_string(count * dim * 4) +
                          " bytes, found " + std::to_string(data_bytes.size()),
                      std::min(data_bytes.size(), count * dim * 4));
  }
  if (ids_bytes.size() != count * 5) {
    throw FormatError("embedding ids file: expected " + std::to_string(count * 5) +
                          " bytes, found " + std::to_string(ids_bytes.size()),
                      std::min(ids_bytes.size(), count * 5));
  }

  le::Reader data(data_bytes, "embedding data");
  le::Reader ids(ids_bytes, "embedding ids");

  DatasetSplit split;
  split.d_in = dim;
  // Preserve first-appearance order per split so write(load(f)) round-trips.
  std::map<std::uint32_t, std::size_t> index_of;  // id -> index in records
  struct Tagged {
    IdentityRecord rec;
    std::uint8_t tag;
  };
  std::vector<Tagged> records;

  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t id_offset = ids.offset();
    const std::uint32_t id = ids.u32();
    const std::uint8_t tag = ids.u8();
    if (tag > 2) {
      throw FormatError("embedding ids file: split tag out of range (" + std::to_string(tag) + ")",
                        id_offset + 4);
    }
    std::vector<double> sample(dim);
    for (std::size_t j = 0; j < dim; ++j) sample[j] = static_cast<double>(data.f32());

    auto it = index_of.find(id);
    if (it == index_of.end()) {
      index_of.emplace(id, records.size());
      Tagged t;
      t.rec.identity_id = id;
      t.rec.samples.push_back(std::move(sample));
      t.tag = tag;
      records.push_back(std::move(t));
    } else {
      Tagged& t = records[it->second];
      if (t.tag != tag) {
        throw FormatError("embedding ids file: identity " + std::to_string(id) +
                              " appears in two splits",
                          id_offset + 4);
      }
      t.rec.samples.push_back(std::move(sample));
    }
  }

  for (auto& t : records) {
    if (t.tag == 0 && t.rec.samples.size() < 2) {
      throw FormatError("train identity " + std::to_string(t.rec.identity_id) +
                            " has fewer than 2 samples",
                        0);
    }
    if (t.tag == 0) {
      split.train.push_back(std::move(t.rec));
    } else if (t.tag == 1) {
      split.validation.push_back(std::move(t.rec));
    } else {
      split.test.push_back(std::move(t.rec));
    }
  }
  return split;
}

// Writes the three split files next to manifest_path. Rows are grouped by
// identity in record order, so load followed by write reproduces a
// writer-produced trio byte for byte.
inline void write_embeddings(const DatasetSplit& split, const std::filesystem::path& manifest_path,
                             const std::string& stem = "embeddings") {
  std::string data_bytes;
  std::string ids_bytes;
  std::size_t count = 0;

  auto emit = [&](const std::vector<IdentityRecord>& records, std::uint8_t tag) {
    for (const auto& rec : records) {
      for (const auto& s : rec.samples) {
        if (s.size() != split.d_in) throw DimensionError("write_embeddings: sample dim mismatch");
        for (double v : s) le::put_f32(data_bytes, static_cast<float>(v));
        le::put_u32(ids_bytes, rec.identity_id);
        ids_bytes.push_back(static_cast<char>(tag));
        ++count;
      }
    }
  };
  emit(split.train, 0);
  emit(split.validation, 1);
  emit(split.test, 2);

  const std::string data_name = stem + ".data";
  const std::string ids_name = stem + ".ids";
  write_file_bytes(manifest_path.parent_path() / data_name, data_bytes);
  write_file_bytes(manifest_path.parent_path() / ids_name, ids_bytes);

  KvFile manifest;
  manifest.set_u64("dim", split.d_in);
  manifest.set_u64("count", count);
  manifest.set("data_file", data_name);
  manifest.set("ids_file", ids_name);
  manifest.write(manifest_path);
}

// Samples one training batch: B*n distinct identities without replacement,
// two distinct samples per identity (first becomes enrolled, second the query).
inline TrainBatch sample_batch(const std::vector<IdentityRecord>& split, std::size_t B,
                               std::size_t n, Rng& rng) {
  if (B == 0 || n == 0) throw ConfigError("sample_batch: B and n must be positive");
  const std::size_t need = B * n;
  if (split.size() < need) {
    throw SamplingError("sample_batch: need " + std::to_string(need) + " identities, have " +
                        std::to_string(split.size()));
  }
  const std::size_t d_in = split.empty() ? 0 : split.front().samples.front().size();

  // Partial Fisher-Yates over identity indices.
  std::vector<std::size_t> idx(split.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < need; ++i) {
    const std::size_t j = i + rng.uniform_below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }

  TrainBatch batch;
  batch.group_count = B;
  batch.group_size = n;
  batch.enrolled = Tensor({B, n, d_in});
  batch.queries = Tensor({B, n, d_in});
  batch.group_of_query.resize(need);

  for (std::size_t g = 0; g < B; ++g) {
    for (std::size_t i = 0; i < n; ++i) {
      const IdentityRecord& rec = split[idx[g * n + i]];
      if (rec.samples.size() < 2) {
        throw SamplingError("identity " + std::to_string(rec.identity_id) +
                            " has fewer than 2 samples");
      }
      const std::size_t s1 = rng.uniform_below(rec.samples.size());
      std::size_t s2 = rng.uniform_below(rec.samples.size() - 1);
      if (s2 >= s1) ++s2;
      auto e = batch.enrolled.row(g, i);
      auto q = batch.queries.row(g, i);
      for (std::size_t j = 0; j < d_in; ++j) {
        e[j] = rec.samples[s1][j];
        q[j] = rec.samples[s2][j];
      }
      batch.group_of_query[g * n + i] = g;
    }
  }
  return batch;
}

}  // namespace aggnet
