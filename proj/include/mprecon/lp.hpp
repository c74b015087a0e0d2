#pragma once

// Dense tableau simplex for small linear programs of the form
//   maximize c^T x  subject to  A x <= b,  x >= 0,  with b >= 0,
// so the slack basis is feasible from the start. Bland's rule prevents
// cycling on the (highly degenerate) Lipschitz-constraint programs this is
// used for.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "error.hpp"

namespace mprecon {

struct LpResult {
  std::vector<double> x;
  double objective = 0.0;
  std::size_t pivots = 0;
};

inline LpResult solve_lp_max(const std::vector<std::vector<double>>& A, const std::vector<double>& b,
                             const std::vector<double>& c, std::size_t maxPivots = 1000000) {
  const std::size_t rows = A.size();
  const std::size_t vars = c.size();
  detail::require(b.size() == rows, "lp: right-hand side size mismatch");
  for (double v : b) detail::require(v >= 0.0, "lp: right-hand side must be nonnegative");
  const std::size_t cols = vars + rows + 1;  // variables, slacks, rhs
  std::vector<double> t((rows + 1) * cols, 0.0);
  auto at = [&](std::size_t r, std::size_t k) -> double& { return t[r * cols + k]; };
  for (std::size_t r = 0; r < rows; ++r) {
    detail::require(A[r].size() == vars, "lp: constraint row size mismatch");
    for (std::size_t k = 0; k < vars; ++k) at(r, k) = A[r][k];
    at(r, vars + r) = 1.0;
    at(r, cols - 1) = b[r];
  }
  // Objective row holds reduced costs -c (entering when negative).
  for (std::size_t k = 0; k < vars; ++k) at(rows, k) = -c[k];
  std::vector<std::size_t> basis(rows);
  for (std::size_t r = 0; r < rows; ++r) basis[r] = vars + r;

  double scale = 1.0;
  for (double v : c) scale = std::max(scale, std::abs(v));
  const double eps = 1e-12 * scale;

  LpResult res;
  for (;;) {
    std::size_t enter = cols;
    for (std::size_t k = 0; k + 1 < cols; ++k) {
      if (at(rows, k) < -eps) {
        enter = k;  // Bland: smallest index
        break;
      }
    }
    if (enter == cols) break;
    std::size_t leave = rows;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rows; ++r) {
      const double a = at(r, enter);
      if (a > 1e-12) {
        const double ratio = at(r, cols - 1) / a;
        if (ratio < best - 1e-15 || (std::abs(ratio - best) <= 1e-15 && leave < rows && basis[r] < basis[leave])) {
          best = ratio;
          leave = r;
        }
      }
    }
    if (leave == rows) throw InternalError("lp: objective is unbounded");
    const double piv = at(leave, enter);
    for (std::size_t k = 0; k < cols; ++k) at(leave, k) /= piv;
    for (std::size_t r = 0; r <= rows; ++r) {
      if (r == leave) continue;
      const double f = at(r, enter);
      if (f == 0.0) continue;
      for (std::size_t k = 0; k < cols; ++k) at(r, k) -= f * at(leave, k);
    }
    basis[leave] = enter;
    if (++res.pivots > maxPivots) throw NonConvergence("lp: pivot limit exceeded", {});
  }
  res.x.assign(vars, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    if (basis[r] < vars) res.x[basis[r]] = at(r, cols - 1);
  res.objective = at(rows, cols - 1);
  return res;
}

}  // namespace mprecon
