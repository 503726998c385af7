// Per-row regression solvers behind map learning. All solvers center the
// design so the intercept is never penalized.
#pragma once

#include <vector>

#include <Eigen/Dense>

namespace eqm {

// Least squares (ridge = false) or ridge (lambda > 0) for all columns, one
// shared factorization for every right-hand side. Underdetermined LS
// returns the minimum-norm solution; underdetermined ridge solves the dual
// (X Xt + lambda I) system, which is algebraically identical.
struct DenseSolveResult {
  Eigen::MatrixXd beta;  // p x q
  Eigen::VectorXd bias;  // q
};
DenseSolveResult solve_dense(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, bool ridge,
                             double lambda);

// Greedy forward selection (orthogonal-matching-pursuit style): picks the
// column with maximal squared residual correlation, refits the support by
// least squares, and stops at k columns or when the residual drops below
// rel_tol * RSS0 (exact targets stop after one pick). Caller supplies the
// centered design; ties go to the lowest column index.
struct FsResult {
  std::vector<int> support;      // ascending column indices
  std::vector<double> coeffs;    // aligned with support
  double bias = 0.0;
  double rss = 0.0;
  double rss0 = 0.0;
};
FsResult solve_fs(const Eigen::MatrixXd& Xc, const Eigen::VectorXd& col_norm2,
                  const Eigen::RowVectorXd& x_mean, const Eigen::VectorXd& y, int k,
                  double rel_tol);

}  // namespace eqm
