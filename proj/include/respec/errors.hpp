#pragma once

#include <stdexcept>
#include <string>

namespace respec {

// A spec that parses but cannot be instantiated (shape mismatch against the
// task, or over the resource guard).
struct BuildError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training loss became non-finite; the model state is unusable.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A wall-clock budget ran out between training steps.
struct TimeoutError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structured dataset-loading failure.
struct LoadError : std::runtime_error {
  enum class Kind { io, bad_magic, truncated, count_mismatch, malformed };
  Kind kind;
  LoadError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// A file could not be written (path, permissions, disk).
struct SaveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Refiner checkpoint path does not exist or does not deserialize.
struct MissingCheckpoint : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A refiner was handed a source text that does not parse.
struct InvalidSource : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace respec
