#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mprecon {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by the caller (empty input, bad parameter, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Input is well-formed but geometrically or statistically degenerate.
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

// A grid box does not capture enough mass of the measure being discretized.
class GridCoverageError : public Error {
 public:
  GridCoverageError(const std::string& what, double captured)
      : Error(what), captured_(captured) {}
  double captured() const noexcept { return captured_; }

 private:
  double captured_;
};

// Iterative solver stopped without meeting its tolerance. Carries the
// residual/objective trace and, when meaningful, the last iterate.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, std::vector<double> trace, std::vector<double> iterate = {})
      : Error(what), trace_(std::move(trace)), iterate_(std::move(iterate)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }
  const std::vector<double>& iterate() const noexcept { return iterate_; }

 private:
  std::vector<double> trace_;
  std::vector<double> iterate_;
};

// Should not happen on valid input.
class InternalError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class E = InvalidArgument>
inline void require(bool ok, const std::string& msg) {
  if (!ok) throw E(msg);
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace detail
}  // namespace mprecon
