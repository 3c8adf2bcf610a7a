#pragma once

// Small dense linear programs:  minimize c^T x  s.t.  A_ub x <= b_ub,
// A_eq x = b_eq, x >= 0.  Two-phase tableau simplex with Bland's rule, sized
// for desk-scale scenario tables (tens of rows, a few thousand columns).

#include "lyapnet/model.hpp"

namespace lyapnet {

struct LinearProgram {
  Vector c;
  Matrix A_ub;
  Vector b_ub;
  Matrix A_eq;
  Vector b_eq;
};

struct LpSolution {
  enum class Status { Optimal, Infeasible, Unbounded };
  Status status = Status::Infeasible;
  Vector x;
  double objective = 0.0;
  /// Optimal duals y with c - A^T y >= 0 on the optimal basis. Entries for
  /// inequality rows are <= 0.
  Vector dual_ub;
  Vector dual_eq;
};

LpSolution solve_lp(const LinearProgram& lp, double tol = 1e-9);

}  // namespace lyapnet
