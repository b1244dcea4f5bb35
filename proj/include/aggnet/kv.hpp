#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "aggnet/errors.hpp"

namespace aggnet {

// Flat key=value text manifests, one entry per line, written in a canonical
// order so files round-trip byte-identically. Shared by the dataset,
// checkpoint and group-store formats.
class KvFile {
 public:
  KvFile() = default;

  void set(const std::string& key, const std::string& value) {
    for (auto& e : entries_) {
      if (e.first == key) {
        e.second = value;
        return;
      }
    }
    entries_.emplace_back(key, value);
  }

  void set_u64(const std::string& key, std::uint64_t v) { set(key, std::to_string(v)); }

  // Round-trip-exact decimal rendering (17 significant digits).
  void set_double(const std::string& key, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    set(key, buf);
  }

  bool has(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return true;
    return false;
  }

  const std::string& require(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return e.second;
    throw FormatError("manifest missing key '" + key + "'", 0);
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    for (const auto& e : entries_)
      if (e.first == key) return e.second;
    return fallback;
  }

  std::uint64_t require_u64(const std::string& key) const {
    const std::string& s = require(key);
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw FormatError("manifest key '" + key + "' is not an integer: " + s, 0);
    }
  }

  double require_double(const std::string& key) const {
    const std::string& s = require(key);
    try {
      return std::stod(s);
    } catch (const std::exception&) {
      throw FormatError("manifest key '" + key + "' is not a number: " + s, 0);
    }
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  static KvFile read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    KvFile kv;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
      const std::size_t line_start = offset;
      offset += line.size() + 1;
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw FormatError("manifest line has no '=': " + line, line_start);
      }
      kv.entries_.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return kv;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    for (const auto& e : entries_) out << e.first << '=' << e.second << '\n';
    if (!out) throw IoError("manifest write failed: " + path.string());
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Little-endian binary helpers. Serialization is explicit byte-by-byte so the
// formats are bit-exact regardless of host endianness.
namespace le {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string name)
      : bytes_(bytes), name_(std::move(name)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(name_ + ": truncated file, needed " + std::to_string(n) + " more bytes",
                        pos_);
    }
  }

  const std::string& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace le

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace aggnet
