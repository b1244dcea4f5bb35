#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aggnet {

// Error taxonomy shared by all modules. Everything derives from std::runtime_error
// so callers can catch broadly; tests catch the specific types.

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed file or record contents. Carries the byte offset where parsing
// failed when one is meaningful.
struct FormatError : std::runtime_error {
  std::size_t byte_offset;
  explicit FormatError(const std::string& msg) : std::runtime_error(msg), byte_offset(0) {}
  FormatError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
};

struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConflictError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CapabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace aggnet
