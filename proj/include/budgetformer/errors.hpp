#pragma once

#include <stdexcept>
#include <string>

namespace budgetformer {

// Error kinds are distinguishable by type so callers (and tests) can tell a
// shape bug from a bad config value from a corrupt input file.

// Shape / rank disagreement between tensors.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// A config value outside its legal range (negative temperature, bad axis, ...).
struct ParameterError : std::runtime_error {
  explicit ParameterError(const std::string& msg) : std::runtime_error(msg) {}
};

// An API precondition was violated (backward on a non-scalar, no active tape, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or out-of-range input data (bad label, corrupt record, ...).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input that is structurally valid but has no defined result (all-zero mask).
struct DegenerateInputError : std::runtime_error {
  explicit DegenerateInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / serialization failure.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace budgetformer
