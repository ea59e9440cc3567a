#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef PGS_HAVE_OPENMP
#include <omp.h>
#endif

namespace pgs {

/// Parameter outside its documented domain (non-unit quaternion, negative scale, ...).
struct InvalidParameter : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed checkpoint, camera or config file.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Caller broke an operation's precondition (shape mismatch, incomplete tape).
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

/// Iterative solver failed to reach its tolerance.
struct SolverFailure : std::runtime_error {
  SolverFailure(const std::string& what, double residual, int iterations)
      : std::runtime_error(what), residual(residual), iterations(iterations) {}
  double residual;
  int iterations;
};

/// Scenario that makes an objective undefined (e.g. no dye to track).
struct DegenerateScenario : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad command line or config override.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

/// Caps the worker pool. Results never depend on this value.
void set_thread_count(int n);
int thread_count();

/// Runs fn(i) for i in [0, n). Iterations must write disjoint memory.
template <class Fn>
void parallel_for(std::ptrdiff_t n, Fn&& fn) {
#ifdef PGS_HAVE_OPENMP
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
#else
  for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
#endif
}

/// Block size of deterministic reductions. Fixed so sums never depend on the
/// number of threads.
inline constexpr std::ptrdiff_t kReduceBlock = 1024;

/// Sum of fn(i) over [0, n): fixed-size blocks summed in parallel, then the
/// block partials summed in ascending order.
template <class T, class Fn>
T deterministic_sum(std::ptrdiff_t n, T zero, Fn&& fn) {
  const std::ptrdiff_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
  std::vector<T> partial(static_cast<std::size_t>(blocks), zero);
  parallel_for(blocks, [&](std::ptrdiff_t b) {
    T acc = zero;
    const std::ptrdiff_t end = std::min(n, (b + 1) * kReduceBlock);
    for (std::ptrdiff_t i = b * kReduceBlock; i < end; ++i) acc += fn(i);
    partial[static_cast<std::size_t>(b)] = acc;
  });
  T total = zero;
  for (const T& p : partial) total += p;
  return total;
}

}  // namespace pgs
