#pragma once

#include <stdexcept>
#include <string>

namespace stablepose {

/// Bad inputs, malformed files, contract violations. CLI exit code 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Simulation / sampling / training faults (non-finite state, divergence,
/// exhausted retries). CLI exit code 3.
struct SimFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SamplingFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace stablepose
