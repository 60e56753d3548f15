#pragma once

#include <stdexcept>
#include <string>

namespace tdos {

// Shape/dimension mismatch between operands.
struct DimensionError : std::invalid_argument {
  explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Index (class id, target, token position) outside its valid range.
struct IndexError : std::out_of_range {
  explicit IndexError(const std::string& msg) : std::out_of_range(msg) {}
};

// Token not representable in the embedding vocabulary.
struct VocabularyError : std::runtime_error {
  explicit VocabularyError(const std::string& msg) : std::runtime_error(msg) {}
};

// Requested more items than a corpus or pool can provide.
struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad magic, version, or truncated container.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Metric undefined for the given inputs (e.g. single-class labels).
struct UndefinedMetricError : std::runtime_error {
  explicit UndefinedMetricError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss or parameter during training.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tdos
