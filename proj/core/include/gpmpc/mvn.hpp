#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace gpmpc {

/// Multivariate normal with mean vector and covariance matrix.
struct MvnDist {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  int dim() const { return static_cast<int>(mean.size()); }
};

/// Throws std::invalid_argument unless cov is symmetric to 1e-12 and its
/// smallest eigenvalue is >= -1e-10 * ||cov||.
void validate_mvn(const MvnDist& dist);

/// Condition the joint on exact observations of the listed components.
/// Returns the distribution of the remaining components, ordered as in
/// the joint. Throws on duplicate/out-of-range indices or a singular
/// observed block.
MvnDist mvn_condition(const MvnDist& joint, const std::vector<int>& observed_idx,
                      const Eigen::VectorXd& observed_vals);

/// Draw `count` samples (one per row); deterministic in the seed.
Eigen::MatrixXd mvn_sample(const MvnDist& dist, int count, std::uint64_t seed);

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m);

/// Symmetrize, then clamp small negative eigenvalues to zero. Eigenvalues
/// below -neg_tol raise NumericalError.
Eigen::MatrixXd clamp_psd(const Eigen::MatrixXd& m, double neg_tol = 1e-8);

}  // namespace gpmpc
