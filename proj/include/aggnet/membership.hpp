#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aggnet/hashing.hpp"
#include "aggnet/kv.hpp"
#include "aggnet/model.hpp"

namespace aggnet {

// One enrolled group. The code is the only artifact verification ever touches;
// member handles and raw samples are present only when the store was
// configured to retain them (required for membership updates, see below).
struct GroupRecord {
  Tensor code;  // {d}: {-1,+1}^d when hashed, real unit vector otherwise
  std::uint32_t member_count = 0;
  std::vector<std::uint64_t> handles;  // opaque member handles (retention only)
  Tensor samples;                      // {n, d_in} raw member samples (retention only)
};

// Server-side store of group representations. Sample retention is opt-in:
// keeping raw member templates enables exact re-aggregation on membership
// changes, but weakens the privacy story of storing nothing but codes —
// deployments must choose per their threat model.
struct GroupStore {
  std::size_t dim = 0;  // representation dimension, fixed at first enrollment
  bool hashed = true;
  bool retain_samples = false;
  std::map<std::uint32_t, GroupRecord> groups;
};

struct VerifyDecision {
  double score = 0.0;
  double threshold = 0.0;
  bool accept = false;  // accept <=> score > threshold, strictly
};

inline const GroupRecord& find_group(const GroupStore& store, std::uint32_t group_id) {
  const auto it = store.groups.find(group_id);
  if (it == store.groups.end()) {
    throw NotFoundError("group " + std::to_string(group_id) + " is not enrolled");
  }
  return it->second;
}

// Enrolls a group from its members' raw samples. Handles are caller-chosen
// opaque identifiers (one per member, unique within the group); when omitted,
// members are numbered 0..n-1.
inline Tensor enroll(GroupStore& store, std::uint32_t group_id, const Tensor& member_samples,
                     const AggModel& model, std::vector<std::uint64_t> handles = {}) {
  if (store.groups.count(group_id)) {
    throw ConflictError("group " + std::to_string(group_id) + " is already enrolled");
  }
  const std::size_t n = member_samples.rows();
  if (handles.empty()) {
    handles.resize(n);
    for (std::size_t i = 0; i < n; ++i) handles[i] = i;
  }
  if (handles.size() != n) throw DimensionError("enroll: one handle per member required");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (handles[i] == handles[j]) throw ConflictError("enroll: duplicate member handle");

  const GroupEmbedding emb = group_embed(model, member_samples);
  if (store.groups.empty()) {
    store.dim = emb.code.size();
    store.hashed = model.cfg.hash.enabled;
  } else if (store.dim != emb.code.size() || store.hashed != model.cfg.hash.enabled) {
    throw ConflictError("enroll: representation kind differs from the rest of the store");
  }

  GroupRecord rec;
  rec.code = emb.code;
  rec.member_count = static_cast<std::uint32_t>(n);
  if (store.retain_samples) {
    rec.handles = std::move(handles);
    rec.samples = member_samples;
  }
  store.groups.emplace(group_id, rec);
  return rec.code;
}

// Scores a query sample against one claimed group. The decision exposes only
// (score, threshold, accept) — no per-member similarity exists anywhere in
// the computation, since the stored code is already aggregated.
inline VerifyDecision verify(const GroupStore& store, std::uint32_t group_id,
                             std::span<const double> query_sample, const AggModel& model,
                             double threshold = 0.5) {
  const GroupRecord& rec = find_group(store, group_id);
  const GroupEmbedding q = query_embed(model, query_sample);
  VerifyDecision d;
  d.score = verify_score(model, rec.code, q.code);
  d.threshold = threshold;
  d.accept = d.score > threshold;
  return d;
}

// Membership change by exact re-aggregation over the retained member set;
// model parameters are read, never written. `add_samples` is {k, d_in} with
// one handle per row (k may be 0; pass an empty 2-d tensor).
inline Tensor update_group(GroupStore& store, std::uint32_t group_id, const Tensor& add_samples,
                           const std::vector<std::uint64_t>& add_handles,
                           const std::vector<std::uint64_t>& remove_handles,
                           const AggModel& model) {
  auto it = store.groups.find(group_id);
  if (it == store.groups.end()) {
    throw NotFoundError("group " + std::to_string(group_id) + " is not enrolled");
  }
  if (!store.retain_samples) {
    throw CapabilityError("membership updates require a store configured to retain samples");
  }
  GroupRecord& rec = it->second;
  const std::size_t k = add_samples.size() == 0 ? 0 : add_samples.rows();
  if (add_handles.size() != k) throw DimensionError("update: one handle per added member");

  // Assemble the new member set first so a failed update leaves the record intact.
  std::vector<std::uint64_t> handles = rec.handles;
  std::vector<std::vector<double>> rows;
  rows.reserve(rec.member_count + k);
  for (std::size_t i = 0; i < rec.member_count; ++i) {
    const auto r = rec.samples.row(i);
    rows.emplace_back(r.begin(), r.end());
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::uint64_t h : handles)
      if (h == add_handles[i]) throw ConflictError("update: member handle already present");
    handles.push_back(add_handles[i]);
    const auto r = add_samples.row(i);
    rows.emplace_back(r.begin(), r.end());
  }
  for (std::uint64_t h : remove_handles) {
    bool found = false;
    for (std::size_t i = 0; i < handles.size(); ++i) {
      if (handles[i] == h) {
        handles.erase(handles.begin() + static_cast<std::ptrdiff_t>(i));
        rows.erase(rows.begin() + static_cast<std::ptrdiff_t>(i));
        found = true;
        break;
      }
    }
    if (!found) throw NotFoundError("update: member handle " + std::to_string(h) + " not in group");
  }
  if (rows.empty()) throw ConflictError("update: a group must keep at least one member");

  Tensor members({rows.size(), rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), members.row(i).begin());
  }
  const GroupEmbedding emb = group_embed(model, members);
  rec.code = emb.code;
  rec.member_count = static_cast<std::uint32_t>(rows.size());
  rec.handles = std::move(handles);
  rec.samples = members;
  return rec.code;
}

// ---------------------------------------------------------------------------
// Persistence: text manifest plus a record blob (<stem>.groups). Binary codes
// are stored one bit per dimension (sign +1 -> bit 1); real representations
// are stored as f64. Round-trips are bit-exact. Retained samples, when
// configured, live in the same records after the code bytes.
// ---------------------------------------------------------------------------

inline void store_save(const GroupStore& store, const std::filesystem::path& path) {
  KvFile kv;
  kv.set("format", "aggnet-store");
  kv.set_u64("version", 1);
  kv.set_u64("dim", store.dim);
  kv.set_u64("hashed", store.hashed ? 1 : 0);
  kv.set_u64("retain", store.retain_samples ? 1 : 0);
  kv.set_u64("count", store.groups.size());

  std::string blob;
  for (const auto& [gid, rec] : store.groups) {
    le::put_u32(blob, gid);
    le::put_u32(blob, rec.member_count);
    if (store.hashed) {
      for (std::uint8_t b : pack_code(rec.code)) blob.push_back(static_cast<char>(b));
    } else {
      for (std::size_t i = 0; i < rec.code.size(); ++i) le::put_f64(blob, rec.code[i]);
    }
    if (store.retain_samples) {
      le::put_u32(blob, static_cast<std::uint32_t>(rec.samples.cols()));
      for (std::uint64_t h : rec.handles) le::put_u64(blob, h);
      for (std::size_t i = 0; i < rec.samples.size(); ++i) le::put_f64(blob, rec.samples[i]);
    }
  }
  const std::filesystem::path data_path = path.parent_path() / (path.stem().string() + ".groups");
  kv.set("data_file", data_path.filename().string());
  kv.write(path);
  write_file_bytes(data_path, blob);
}

inline GroupStore store_load(const std::filesystem::path& path) {
  const KvFile kv = KvFile::read(path);
  if (kv.require("format") != "aggnet-store") {
    throw FormatError("not a group-store manifest: " + path.string(), 0);
  }
  if (kv.require_u64("version") != 1) throw FormatError("unsupported store version", 0);

  GroupStore store;
  store.dim = kv.require_u64("dim");
  store.hashed = kv.require_u64("hashed") != 0;
  store.retain_samples = kv.require_u64("retain") != 0;
  const std::uint64_t count = kv.require_u64("count");

  const std::string blob = read_file_bytes(path.parent_path() / kv.require("data_file"));
  le::Reader reader(blob, "store blob");
  for (std::uint64_t g = 0; g < count; ++g) {
    const std::uint32_t gid = reader.u32();
    GroupRecord rec;
    rec.member_count = reader.u32();
    if (store.hashed) {
      const std::size_t nbytes = (store.dim + 7) / 8;
      std::vector<std::uint8_t> bytes(nbytes);
      for (std::size_t i = 0; i < nbytes; ++i) bytes[i] = reader.u8();
      rec.code = unpack_code(bytes, store.dim);
    } else {
      rec.code = Tensor({store.dim});
      for (std::size_t i = 0; i < store.dim; ++i) rec.code[i] = reader.f64();
    }
    if (store.retain_samples) {
      const std::uint32_t d_in = reader.u32();
      rec.handles.resize(rec.member_count);
      for (auto& h : rec.handles) h = reader.u64();
      rec.samples = Tensor({rec.member_count, d_in});
      for (std::size_t i = 0; i < rec.samples.size(); ++i) rec.samples[i] = reader.f64();
    }
    if (!store.groups.emplace(gid, std::move(rec)).second) {
      throw FormatError("duplicate group id in store blob", 0);
    }
  }
  if (!reader.at_end()) throw FormatError("trailing bytes in store blob", blob.size());
  return store;
}

}  // namespace aggnet
