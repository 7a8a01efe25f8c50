#include "gpmpc/kernel.hpp"

#include <cmath>
#include <stdexcept>

namespace gpmpc {

GpHyperparams GpHyperparams::isotropic(double signal_std, double length_scale,
                                       double noise_std, int input_dim) {
  GpHyperparams h;
  h.signal_std = signal_std;
  h.length_scales = Eigen::VectorXd::Constant(input_dim, length_scale);
  h.noise_std = noise_std;
  return h;
}

void validate_hyperparams(const GpHyperparams& h) {
  if (!(h.signal_std > 0.0) || !std::isfinite(h.signal_std)) {
    throw std::invalid_argument("hyperparams: signal_std must be > 0");
  }
  if (!(h.noise_std >= 0.0) || !std::isfinite(h.noise_std)) {
    throw std::invalid_argument("hyperparams: noise_std must be >= 0");
  }
  if (h.length_scales.size() == 0) {
    throw std::invalid_argument("hyperparams: empty length scales");
  }
  for (int d = 0; d < h.length_scales.size(); ++d) {
    if (!(h.length_scales(d) > 0.0) || !std::isfinite(h.length_scales(d))) {
      throw std::invalid_argument("hyperparams: length scales must be > 0");
    }
  }
}

double kernel_rbf(const Eigen::VectorXd& xi, const Eigen::VectorXd& xj,
                  const GpHyperparams& h) {
  if (xi.size() != xj.size() || xi.size() != h.length_scales.size()) {
    throw std::invalid_argument("kernel_rbf: dimension mismatch");
  }
  const Eigen::VectorXd scaled = (xi - xj).cwiseQuotient(h.length_scales);
  return h.signal_std * h.signal_std * std::exp(-0.5 * scaled.squaredNorm());
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const GpHyperparams& h) {
  if (a.cols() != b.cols() || a.cols() != h.length_scales.size()) {
    throw std::invalid_argument("kernel_matrix: dimension mismatch");
  }
  const double sf2 = h.signal_std * h.signal_std;
  const Eigen::MatrixXd as = a * h.length_scales.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd bs = b * h.length_scales.cwiseInverse().asDiagonal();
  const Eigen::VectorXd an = as.rowwise().squaredNorm();
  const Eigen::VectorXd bn = bs.rowwise().squaredNorm();
  Eigen::MatrixXd sq = -2.0 * as * bs.transpose();
  sq.colwise() += an;
  sq.rowwise() += bn.transpose();
  return sf2 * (-0.5 * sq.cwiseMax(0.0)).array().exp().matrix();
}

}  // namespace gpmpc
