#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <utility>

#include "gpmpc/gp.hpp"

namespace gpmpc {

enum class InducingStrategy { SubsetRandom, KMeansLike, GreedyVariance };

/// FIC sparse GP. After fitting, per-query cost depends only on the
/// number of inducing points, never on the training set size.
struct SparseGpModel {
  GpHyperparams hyperparams;
  Eigen::MatrixXd inducing;   // m x d
  Eigen::MatrixXd chol_kuu;   // lower factor of K_uu (+ jitter)
  Eigen::MatrixXd chol_b;     // lower factor of B = I + V Lambda^{-1} V^T
  Eigen::VectorXd beta;       // weights so that the mean is k_*^T beta
  double applied_jitter = 0.0;
  double target_offset = 0.0;

  int inducing_count() const { return static_cast<int>(inducing.rows()); }
  int dim() const { return static_cast<int>(inducing.cols()); }
};

/// Pick inducing inputs. Subset strategies return rows of the training
/// inputs; the k-means-like strategy returns cluster centroids. All
/// strategies are deterministic in the seed.
Eigen::MatrixXd select_inducing(const GpDataset& data, int count, InducingStrategy strategy,
                                std::uint64_t seed);

/// Canonical scale used by the greedy-variance strategy: unit signal,
/// zero noise, per-dimension length scale = sample standard deviation.
GpHyperparams greedy_selection_scale(const GpDataset& data);

SparseGpModel fic_fit(const GpDataset& data, const GpHyperparams& h,
                      const Eigen::MatrixXd& inducing);

GpPrediction fic_predict(const SparseGpModel& model, const Eigen::VectorXd& query);

std::pair<Eigen::VectorXd, Eigen::VectorXd> fic_predict_batch(const SparseGpModel& model,
                                                              const Eigen::MatrixXd& queries);

Eigen::VectorXd fic_mean_gradient(const SparseGpModel& model, const Eigen::VectorXd& query);

}  // namespace gpmpc
