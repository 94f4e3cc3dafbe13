#ifndef FRATMAE_ERRORS_HPP
#define FRATMAE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace fratmae {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape / dimension violations in tensor and model code.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid or rejected configuration values (also covers unknown config keys).
struct ConfigError : Error {
  using Error::Error;
};

// Volume bundle I/O. The three subclasses are distinct on purpose: callers
// need to tell a stale format from a corrupt blob from a broken sidecar.
struct BundleError : Error {
  using Error::Error;
};
struct BundleVersionError : BundleError {
  using BundleError::BundleError;
};
struct BundleDimError : BundleError {
  using BundleError::BundleError;
};
struct BundleParseError : BundleError {
  using BundleError::BundleError;
};

struct CheckpointError : Error {
  using Error::Error;
};
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};

// Raised when a training step produces a non-finite loss.
struct NanLossError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace fratmae

#endif
