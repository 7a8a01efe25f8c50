#pragma once

#include <Eigen/Core>
#include <utility>

#include "gpmpc/kernel.hpp"

namespace gpmpc {

struct GpDataset {
  Eigen::MatrixXd inputs;   // n x d
  Eigen::VectorXd targets;  // n

  int size() const { return static_cast<int>(inputs.rows()); }
  int dim() const { return static_cast<int>(inputs.cols()); }
};

void validate_dataset(const GpDataset& data);

/// Fitted exact GP: cached lower Cholesky factor of K + sigma_n^2 I and
/// the precomputed weight vector alpha = (K + sigma_n^2 I)^{-1} y.
/// `target_offset` is the normalization constant the training harness
/// removed from the targets; predictions add it back.
struct GpModel {
  GpHyperparams hyperparams;
  GpDataset dataset;
  Eigen::MatrixXd chol;  // lower triangular
  Eigen::VectorXd alpha;
  double applied_jitter = 0.0;
  double target_offset = 0.0;
};

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

GpModel gp_fit(const GpDataset& data, const GpHyperparams& h);

GpPrediction gp_predict(const GpModel& model, const Eigen::VectorXd& query);

/// Means/variances for a batch of queries (one per row).
std::pair<Eigen::VectorXd, Eigen::VectorXd> gp_predict_batch(const GpModel& model,
                                                             const Eigen::MatrixXd& queries);

/// Analytic gradient of the posterior mean at the query.
Eigen::VectorXd gp_mean_gradient(const GpModel& model, const Eigen::VectorXd& query);

struct LogMarginal {
  double value = 0.0;
  /// Gradient with respect to (log signal_std, log length_scales..., log noise_std).
  Eigen::VectorXd grad_log;
};

LogMarginal log_marginal_likelihood(const GpDataset& data, const GpHyperparams& h);

/// Multi-start gradient ascent on the log marginal likelihood in
/// log-parameter space. Never returns hyperparameters worse than `init`.
GpHyperparams optimize_hyperparams(const GpDataset& data, const GpHyperparams& init,
                                   int budget);

/// Variance clamp shared by all predictors: [-1e-10, 0) snaps to zero,
/// anything lower is a consistency failure.
double clamp_variance(double variance);

/// Cholesky with escalating diagonal jitter. Returns the lower factor and
/// the jitter actually applied; throws FitError past the ladder end.
std::pair<Eigen::MatrixXd, double> cholesky_with_jitter(const Eigen::MatrixXd& m);

}  // namespace gpmpc
