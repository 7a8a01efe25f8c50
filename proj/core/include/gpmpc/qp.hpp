#pragma once

#include <Eigen/Core>
#include <vector>

namespace gpmpc {

/// Strictly convex QP:  min 1/2 x^T H x + g^T x  s.t.  A x <= b.
struct QpProblem {
  Eigen::MatrixXd hessian;   // n x n, positive definite
  Eigen::VectorXd gradient;  // n
  Eigen::MatrixXd ineq;      // m x n (m may be 0)
  Eigen::VectorXd bounds;    // m
};

enum class QpStatus { Optimal, Infeasible, Degenerate };

struct QpSolution {
  QpStatus status = QpStatus::Degenerate;
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;  // one per inequality, >= 0
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  std::vector<int> active_set;
};

/// Dual active-set solve: starts from the unconstrained minimizer and
/// adds violated constraints one at a time, so no feasible initial point
/// is required. Infeasible problems are detected and reported.
QpSolution solve_qp(const QpProblem& problem);

/// Max of stationarity, feasibility, and complementarity residuals.
double qp_kkt_residual(const QpProblem& problem, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& multipliers);

}  // namespace gpmpc
