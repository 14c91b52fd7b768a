#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace snnet {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Contract/validation violations: bad shapes, bad config values, bad files.
// The CLI maps these to exit code 2.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Numerical failures: non-finite values, convergence failures, divergence.
// The CLI maps these to exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Keeps glibc from serving large tensor buffers with mmap and from trimming
// freed arenas back to the kernel between training steps; without this the
// per-step allocation churn spends measurable time in the kernel. Call once
// at program start. No-op off glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

template <class... Args>
std::string strf(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace snnet
