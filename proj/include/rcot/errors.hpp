#pragma once

#include <stdexcept>
#include <string>

namespace rcot {

// Missing or malformed files, schema/version/digest mismatches (CLI exit 2).
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values or failed convergence (CLI exit 3).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rcot
