#pragma once

#include <stdexcept>
#include <string>

namespace cmkm {

// Argument errors use std::invalid_argument; the rest of the taxonomy:

/// A file could not be read or parsed.
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Data is readable but violates a declared shape or invariant.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An experiment configuration is inconsistent or incomplete.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cmkm
