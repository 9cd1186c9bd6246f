#pragma once

#include <stdexcept>
#include <string>

namespace tsim {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy. The CLI maps ConfigError/SchemaError to a different exit
// code than runtime failures, so keep the distinction when throwing.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvariantError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Upper bound on worker threads used by parallel kernels and batch loops.
// Results are required to be identical for any value (see tests); this only
// bounds how many threads may run.
void set_max_workers(int n);
int max_workers();

}  // namespace tsim
