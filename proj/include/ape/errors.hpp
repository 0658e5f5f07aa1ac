#pragma once

#include <stdexcept>
#include <string>

namespace ape {

// Base class for all toolkit errors. The CLI maps these to exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape / rank mismatches. Messages name both shapes.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid configuration values (probabilities out of range, bad enum names).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed or inconsistent corpus data (empty corpus, unequal line counts).
struct DataError : Error {
  using Error::Error;
};

// Token id outside the vocabulary, or corpus/vocabulary mismatches.
struct VocabError : Error {
  using Error::Error;
};

// File I/O and serialization failures.
struct IoError : Error {
  using Error::Error;
};

// Non-finite loss during training.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace ape
