#include "gpmpc/qp.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gpmpc/errors.hpp"

namespace gpmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double rotation_distance(double a, double b) {
  const double fa = std::abs(a);
  const double fb = std::abs(b);
  if (fa > fb) {
    const double t = fb / fa;
    return fa * std::sqrt(1.0 + t * t);
  }
  if (fb == 0.0) return 0.0;
  const double t = fa / fb;
  return fb * std::sqrt(1.0 + t * t);
}

struct WorkingSet {
  Eigen::MatrixXd r;        // upper-triangular factor (n x n storage)
  Eigen::MatrixXd j;        // orthogonal basis carrier, n x n
  std::vector<int> active;  // constraint indices
  Eigen::VectorXd u;        // multipliers for active + candidate slot
  double r_norm = 1.0;

  int count() const { return static_cast<int>(active.size()); }
};

/// Append the candidate normal (already transformed into d = J^T n+)
/// to the factorization. Returns false when linearly dependent.
bool add_to_working_set(WorkingSet& ws, Eigen::VectorXd& d) {
  const int n = static_cast<int>(d.size());
  const int q = ws.count();
  for (int jj = n - 1; jj >= q + 1; --jj) {
    double cc = d(jj - 1);
    double ss = d(jj);
    const double h = rotation_distance(cc, ss);
    if (h == 0.0) continue;
    d(jj) = 0.0;
    ss /= h;
    cc /= h;
    if (cc < 0.0) {
      cc = -cc;
      ss = -ss;
      d(jj - 1) = -h;
    } else {
      d(jj - 1) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = 0; k < n; ++k) {
      const double t1 = ws.j(k, jj - 1);
      const double t2 = ws.j(k, jj);
      ws.j(k, jj - 1) = t1 * cc + t2 * ss;
      ws.j(k, jj) = xny * (t1 + ws.j(k, jj - 1)) - t2;
    }
  }
  for (int i = 0; i <= q; ++i) ws.r(i, q) = d(i);
  ws.r_norm = std::max(ws.r_norm, std::abs(d(q)));
  return std::abs(d(q)) > 1e-12 * ws.r_norm;
}

/// Remove the active constraint at position `pos`, restoring the
/// triangular structure with Givens rotations.
void drop_from_working_set(WorkingSet& ws, int pos) {
  const int n = static_cast<int>(ws.j.rows());
  int q = ws.count();
  for (int i = pos; i < q - 1; ++i) {
    ws.active[i] = ws.active[i + 1];
    ws.u(i) = ws.u(i + 1);
    for (int k = 0; k < n; ++k) ws.r(k, i) = ws.r(k, i + 1);
  }
  ws.u(q - 1) = ws.u(q);
  ws.active.pop_back();
  --q;
  for (int jj = pos; jj < q; ++jj) {
    double cc = ws.r(jj, jj);
    double ss = ws.r(jj + 1, jj);
    const double h = rotation_distance(cc, ss);
    if (h == 0.0) continue;
    cc /= h;
    ss /= h;
    ws.r(jj + 1, jj) = 0.0;
    if (cc < 0.0) {
      ws.r(jj, jj) = -h;
      cc = -cc;
      ss = -ss;
    } else {
      ws.r(jj, jj) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = jj + 1; k < q; ++k) {
      const double t1 = ws.r(jj, k);
      const double t2 = ws.r(jj + 1, k);
      ws.r(jj, k) = t1 * cc + t2 * ss;
      ws.r(jj + 1, k) = xny * (t1 + ws.r(jj, k)) - t2;
    }
    for (int k = 0; k < n; ++k) {
      const double t1 = ws.j(k, jj);
      const double t2 = ws.j(k, jj + 1);
      ws.j(k, jj) = t1 * cc + t2 * ss;
      ws.j(k, jj + 1) = xny * (ws.j(k, jj) + t1) - t2;
    }
  }
}

}  // namespace

double qp_kkt_residual(const QpProblem& problem, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& multipliers) {
  double res = 0.0;
  Eigen::VectorXd stat = problem.hessian * x + problem.gradient;
  if (problem.ineq.rows() > 0) stat += problem.ineq.transpose() * multipliers;
  res = stat.cwiseAbs().maxCoeff();
  const double scale = std::max(
      1.0, std::max(problem.gradient.cwiseAbs().maxCoeff(), x.cwiseAbs().maxCoeff()));
  for (int i = 0; i < problem.ineq.rows(); ++i) {
    const double slack = problem.ineq.row(i).dot(x) - problem.bounds(i);
    res = std::max(res, slack);                                 // primal feasibility
    res = std::max(res, -std::min(multipliers(i), 0.0));        // dual feasibility
    res = std::max(res, std::abs(multipliers(i) * slack) / scale);  // complementarity
  }
  return res;
}

QpSolution solve_qp(const QpProblem& problem) {
  const int n = static_cast<int>(problem.hessian.rows());
  const int m = static_cast<int>(problem.ineq.rows());
  if (problem.hessian.cols() != n || problem.gradient.size() != n) {
    throw std::invalid_argument("solve_qp: hessian/gradient shape mismatch");
  }
  if (m > 0 && (problem.ineq.cols() != n || problem.bounds.size() != m)) {
    throw std::invalid_argument("solve_qp: constraint shape mismatch");
  }

  Eigen::LLT<Eigen::MatrixXd> llt(problem.hessian);
  if (llt.info() != Eigen::Success) {
    throw SolverError("solve_qp: hessian is not positive definite");
  }

  QpSolution sol;
  sol.x = -llt.solve(problem.gradient);
  sol.multipliers = Eigen::VectorXd::Zero(m);
  if (m == 0) {
    sol.status = QpStatus::Optimal;
    sol.objective = 0.5 * sol.x.dot(problem.hessian * sol.x) + problem.gradient.dot(sol.x);
    sol.kkt_residual = qp_kkt_residual(problem, sol.x, sol.multipliers);
    return sol;
  }

  // Internal >= form with unit-norm rows: normals.row(i) x >= lower(i).
  Eigen::MatrixXd normals(m, n);
  Eigen::VectorXd lower(m);
  Eigen::VectorXd row_scale(m);
  for (int i = 0; i < m; ++i) {
    const double norm = problem.ineq.row(i).norm();
    row_scale(i) = norm > 1e-14 ? norm : 1.0;
    normals.row(i) = -problem.ineq.row(i) / row_scale(i);
    lower(i) = -problem.bounds(i) / row_scale(i);
  }

  WorkingSet ws;
  ws.r = Eigen::MatrixXd::Zero(n, n);
  const Eigen::MatrixXd chol_l = llt.matrixL();
  ws.j = chol_l.transpose().triangularView<Eigen::Upper>().solve(
      Eigen::MatrixXd::Identity(n, n));  // inv(L)^T
  ws.u = Eigen::VectorXd::Zero(m + 1);

  const double tol = 1e-10 * std::max(1.0, lower.cwiseAbs().maxCoeff());
  const int max_iter = 100 * (n + m + 1);
  int iter = 0;
  std::vector<bool> excluded(m, false);
  bool aborted = false;

  while (true) {
    if (++iter > max_iter) {
      sol.status = QpStatus::Degenerate;
      aborted = true;
      break;
    }
    // Most violated inactive constraint. Exclusions only mask constraints
    // found linearly dependent in the previous rounds of this search.
    int ip = -1;
    double worst = -tol;
    double slack_ip = 0.0;
    for (int i = 0; i < m; ++i) {
      if (excluded[i]) continue;
      bool active = false;
      for (int a : ws.active) {
        if (a == i) {
          active = true;
          break;
        }
      }
      if (active) continue;
      const double s = normals.row(i).dot(sol.x) - lower(i);
      if (s < worst) {
        worst = s;
        ip = i;
        slack_ip = s;
      }
    }
    if (ip < 0) {
      sol.status = QpStatus::Optimal;
      break;
    }

    const Eigen::VectorXd np = normals.row(ip).transpose();
    ws.u(ws.count()) = 0.0;
    bool resolved = false;
    while (!resolved && !aborted) {
      if (++iter > max_iter) {
        sol.status = QpStatus::Degenerate;
        aborted = true;
        break;
      }
      const int q = ws.count();
      Eigen::VectorXd d = ws.j.transpose() * np;
      Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
      if (q < n) z = ws.j.rightCols(n - q) * d.tail(n - q);
      Eigen::VectorXd r_vec;
      if (q > 0) {
        r_vec = ws.r.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q));
      }

      double t1 = kInf;
      int drop_pos = -1;
      for (int k = 0; k < q; ++k) {
        if (r_vec(k) > 1e-14) {
          const double ratio = ws.u(k) / r_vec(k);
          if (ratio < t1) {
            t1 = ratio;
            drop_pos = k;
          }
        }
      }
      const double ztn = z.dot(np);
      const double t2 = (z.norm() > 1e-13) ? -slack_ip / ztn : kInf;
      const double t = std::min(t1, t2);

      if (t >= kInf) {
        sol.status = QpStatus::Infeasible;
        aborted = true;
        break;
      }

      if (t2 >= kInf) {
        // Dual-only step: drop the blocking constraint and retry.
        for (int k = 0; k < q; ++k) ws.u(k) -= t * r_vec(k);
        ws.u(q) += t;
        drop_from_working_set(ws, drop_pos);
        continue;
      }

      sol.x += t * z;
      for (int k = 0; k < q; ++k) ws.u(k) -= t * r_vec(k);
      ws.u(q) += t;
      slack_ip = normals.row(ip).dot(sol.x) - lower(ip);

      if (std::abs(t - t2) < 1e-14 * std::max(1.0, t2)) {
        // Full step: candidate becomes active.
        Eigen::VectorXd d_add = ws.j.transpose() * np;
        if (!add_to_working_set(ws, d_add)) {
          // Linearly dependent on the current active set; exclude it.
          excluded[ip] = true;
        } else {
          ws.active.push_back(ip);
        }
        resolved = true;
      } else {
        drop_from_working_set(ws, drop_pos);
      }
    }
    if (aborted) break;
  }

  for (int k = 0; k < ws.count(); ++k) {
    sol.multipliers(ws.active[k]) = ws.u(k) / row_scale(ws.active[k]);
  }
  sol.active_set = ws.active;
  sol.iterations = iter;
  sol.objective = 0.5 * sol.x.dot(problem.hessian * sol.x) + problem.gradient.dot(sol.x);
  if (sol.status == QpStatus::Optimal) {
    // Exclusions could in principle hide a live violation; verify.
    for (int i = 0; i < m; ++i) {
      if (normals.row(i).dot(sol.x) - lower(i) < -1e-7) {
        sol.status = QpStatus::Degenerate;
        break;
      }
    }
  }
  if (sol.status == QpStatus::Optimal) {
    sol.kkt_residual = qp_kkt_residual(problem, sol.x, sol.multipliers);
  }
  return sol;
}

}  // namespace gpmpc
