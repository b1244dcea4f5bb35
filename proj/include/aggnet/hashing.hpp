#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "aggnet/errors.hpp"
#include "aggnet/tensor.hpp"

namespace aggnet {

// Sign binarization trained with a straight-through estimator: the forward
// pass emits codes in {-1, +1}; the backward pass copies the incoming
// gradient through unchanged and adds the gradient of a quantization penalty
//   penalty(h) = weight * sum_i |h_i - sign(h_i)|^q
// that pulls pre-binarization activations toward the code values.
struct HashConfig {
  bool enabled = true;
  double penalty_weight = 0.1;
  double penalty_exponent = 3.0;
};

inline double sign_unit(double v) { return v < 0.0 ? -1.0 : 1.0; }  // sign(0) := +1

// Element-wise binarization to {-1, +1}; the identity map when disabled.
inline Tensor hash_forward(const HashConfig& cfg, const Tensor& h) {
  require_finite(h, "hash input");
  if (!cfg.enabled) return h;
  Tensor out(h.shape());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = sign_unit(h[i]);
  return out;
}

// Unweighted quantization penalty |h - sign(h)|_q^q; the trainer adds it to
// the task loss scaled by cfg.penalty_weight.
inline double hash_penalty(const Tensor& h, double q) {
  if (q < 1.0) throw ConfigError("hash: penalty exponent must be >= 1");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    s += std::pow(std::abs(h[i] - sign_unit(h[i])), q);
  }
  return s;
}

// d/dh of the unweighted penalty: q * |h - b|^(q-1) * sign(h - b), b = sign(h)
// held fixed (detached).
inline Tensor hash_penalty_grad(const Tensor& h, double q) {
  if (q < 1.0) throw ConfigError("hash: penalty exponent must be >= 1");
  Tensor g(h.shape());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double r = h[i] - sign_unit(h[i]);
    if (r == 0.0) continue;
    g[i] = q * std::pow(std::abs(r), q - 1.0) * (r < 0.0 ? -1.0 : 1.0);
  }
  return g;
}

// Straight-through backward: the incoming gradient passes through the sign
// unchanged; when hashing is enabled the weighted quantization-penalty
// gradient is added onto the pre-hash activation.
inline Tensor hash_backward(const HashConfig& cfg, const Tensor& h, const Tensor& grad_out) {
  if (h.shape() != grad_out.shape()) throw DimensionError("hash: gradient shape mismatch");
  if (!cfg.enabled || cfg.penalty_weight == 0.0) return grad_out;
  Tensor g = hash_penalty_grad(h, cfg.penalty_exponent);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] + cfg.penalty_weight * g[i];
  return g;
}

// ---------------------------------------------------------------------------
// Bit packing for stored codes: +1 maps to bit 1, -1 to bit 0, LSB-first
// within each byte, final partial byte zero-padded.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> pack_code(const Tensor& code) {
  std::vector<std::uint8_t> bytes((code.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (code[i] != 1.0 && code[i] != -1.0) throw FormatError("pack_code: code values must be +-1");
    if (code[i] > 0.0) bytes[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return bytes;
}

inline Tensor unpack_code(const std::vector<std::uint8_t>& bytes, std::size_t bit_count) {
  if (bytes.size() != (bit_count + 7) / 8) throw FormatError("unpack_code: byte count mismatch");
  Tensor code({bit_count});
  for (std::size_t i = 0; i < bit_count; ++i) {
    code[i] = (bytes[i / 8] >> (i % 8)) & 1u ? 1.0 : -1.0;
  }
  return code;
}

}  // namespace aggnet
