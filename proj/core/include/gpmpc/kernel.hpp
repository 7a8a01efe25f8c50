#pragma once

#include <Eigen/Core>

namespace gpmpc {

/// Squared-exponential kernel hyperparameters with one length scale per
/// input dimension (a shared scale is the equal-entries special case).
struct GpHyperparams {
  double signal_std = 1.0;
  Eigen::VectorXd length_scales;
  double noise_std = 0.1;

  int input_dim() const { return static_cast<int>(length_scales.size()); }

  static GpHyperparams isotropic(double signal_std, double length_scale, double noise_std,
                                 int input_dim);
};

/// Throws std::invalid_argument on non-positive scales or noise < 0.
void validate_hyperparams(const GpHyperparams& h);

double kernel_rbf(const Eigen::VectorXd& xi, const Eigen::VectorXd& xj,
                  const GpHyperparams& h);

/// Entry (i,j) = kernel_rbf(row i of a, row j of b).
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const GpHyperparams& h);

}  // namespace gpmpc
