#pragma once

#include <variant>

#include "gpmpc/gp.hpp"
#include "gpmpc/sparse_gp.hpp"

namespace gpmpc {

/// A GP with no observations yet: posterior equals the prior.
struct GpPrior {
  GpHyperparams hyperparams;
  double target_offset = 0.0;
};

/// One disturbance output dimension, backed by an exact GP, a FIC sparse
/// GP, or the data-free prior.
using DisturbanceGp = std::variant<GpPrior, GpModel, SparseGpModel>;

GpPrediction disturbance_predict(const DisturbanceGp& gp, const Eigen::VectorXd& query);
Eigen::VectorXd disturbance_mean_gradient(const DisturbanceGp& gp,
                                          const Eigen::VectorXd& query);
std::pair<Eigen::VectorXd, Eigen::VectorXd> disturbance_predict_batch(
    const DisturbanceGp& gp, const Eigen::MatrixXd& queries);
int disturbance_input_dim(const DisturbanceGp& gp);

}  // namespace gpmpc
