#include "gpmpc/mvn.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <stdexcept>

#include "gpmpc/errors.hpp"
#include "gpmpc/rng.hpp"

namespace gpmpc {

void validate_mvn(const MvnDist& dist) {
  const auto n = dist.mean.size();
  if (dist.cov.rows() != n || dist.cov.cols() != n) {
    throw std::invalid_argument("MvnDist: covariance shape does not match mean");
  }
  if (!dist.mean.allFinite() || !dist.cov.allFinite()) {
    throw std::invalid_argument("MvnDist: non-finite entries");
  }
  const double asym = (dist.cov - dist.cov.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(1.0, dist.cov.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("MvnDist: covariance not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(dist.cov),
                                                     Eigen::EigenvaluesOnly);
  const double scale = std::max(1e-300, dist.cov.norm());
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale) {
    throw std::invalid_argument("MvnDist: covariance not positive semidefinite");
  }
}

MvnDist mvn_condition(const MvnDist& joint, const std::vector<int>& observed_idx,
                      const Eigen::VectorXd& observed_vals) {
  const int n = joint.dim();
  const int p = static_cast<int>(observed_idx.size());
  if (p != observed_vals.size()) {
    throw std::invalid_argument("mvn_condition: index/value count mismatch");
  }
  std::vector<bool> is_observed(n, false);
  for (int idx : observed_idx) {
    if (idx < 0 || idx >= n) throw std::invalid_argument("mvn_condition: index out of range");
    if (is_observed[idx]) throw std::invalid_argument("mvn_condition: duplicate index");
    is_observed[idx] = true;
  }
  std::vector<int> rest;
  rest.reserve(n - p);
  for (int i = 0; i < n; ++i) {
    if (!is_observed[i]) rest.push_back(i);
  }
  const int q = static_cast<int>(rest.size());

  Eigen::MatrixXd cov_oo(p, p), cov_ro(q, p), cov_rr(q, q);
  Eigen::VectorXd mean_o(p), mean_r(q);
  for (int i = 0; i < p; ++i) {
    mean_o(i) = joint.mean(observed_idx[i]);
    for (int j = 0; j < p; ++j) cov_oo(i, j) = joint.cov(observed_idx[i], observed_idx[j]);
  }
  for (int i = 0; i < q; ++i) {
    mean_r(i) = joint.mean(rest[i]);
    for (int j = 0; j < p; ++j) cov_ro(i, j) = joint.cov(rest[i], observed_idx[j]);
    for (int j = 0; j < q; ++j) cov_rr(i, j) = joint.cov(rest[i], rest[j]);
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(symmetrize(cov_oo));
  const double dmax = ldlt.vectorD().cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, dmax)) {
    throw SolverError("mvn_condition: observed block is singular");
  }

  // K_*^T K^{-1} applied to the innovation and to the cross block.
  const Eigen::MatrixXd gain = ldlt.solve(cov_ro.transpose()).transpose();  // q x p
  MvnDist out;
  out.mean = mean_r + gain * (observed_vals - mean_o);
  out.cov = symmetrize(cov_rr - gain * cov_ro.transpose());
  return out;
}

Eigen::MatrixXd mvn_sample(const MvnDist& dist, int count, std::uint64_t seed) {
  validate_mvn(dist);
  const int n = dist.dim();
  // Eigen-decomposition square root: also handles PSD-singular covariances.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(dist.cov));
  Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd root = eig.eigenvectors() * lambda.cwiseSqrt().asDiagonal();

  Rng rng(seed);
  Eigen::MatrixXd samples(count, n);
  Eigen::VectorXd z(n);
  for (int s = 0; s < count; ++s) {
    for (int i = 0; i < n; ++i) z(i) = rng.gaussian();
    samples.row(s) = (dist.mean + root * z).transpose();
  }
  return samples;
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

Eigen::MatrixXd clamp_psd(const Eigen::MatrixXd& m, double neg_tol) {
  const Eigen::MatrixXd sym = symmetrize(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig >= 0.0) return sym;
  if (min_eig < -neg_tol) {
    throw NumericalError("clamp_psd: eigenvalue " + std::to_string(min_eig) +
                         " below clamping band");
  }
  Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(0.0);
  return symmetrize(eig.eigenvectors() * lambda.asDiagonal() *
                    eig.eigenvectors().transpose());
}

}  // namespace gpmpc
