#include "gpmpc/sparse_gp.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "gpmpc/errors.hpp"
#include "gpmpc/rng.hpp"

namespace gpmpc {

namespace {

Eigen::MatrixXd subset_random(const GpDataset& data, int count, std::uint64_t seed) {
  const int n = data.size();
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates, then ascending order so the result is stable.
  for (int i = 0; i < count; ++i) {
    const int j = rng.uniform_int(i, n - 1);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  Eigen::MatrixXd out(count, data.dim());
  for (int i = 0; i < count; ++i) out.row(i) = data.inputs.row(idx[i]);
  return out;
}

Eigen::MatrixXd kmeans_like(const GpDataset& data, int count, std::uint64_t seed) {
  const int n = data.size();
  const int d = data.dim();
  Eigen::MatrixXd centers = subset_random(data, count, seed);
  std::vector<int> assign(n, 0);
  for (int sweep = 0; sweep < 25; ++sweep) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d2 = (data.inputs.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < count; ++c) {
        const double d2 = (data.inputs.row(i) - centers.row(c)).squaredNorm();
        if (d2 < best_d2) {
          best_d2 = d2;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(count, d);
    std::vector<int> counts(count, 0);
    for (int i = 0; i < n; ++i) {
      sums.row(assign[i]) += data.inputs.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < count; ++c) {
      // Empty clusters keep their previous center.
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
    }
    if (!changed && sweep > 0) break;
  }
  return centers;
}

Eigen::MatrixXd greedy_variance(const GpDataset& data, int count) {
  const int n = data.size();
  const GpHyperparams h = greedy_selection_scale(data);
  const Eigen::MatrixXd k = kernel_matrix(data.inputs, data.inputs, h);

  // Incremental residual variance under the picks so far (pivoted
  // Cholesky downdates); each pick is the argmax, ties to lowest index.
  Eigen::VectorXd residual = k.diagonal();
  Eigen::MatrixXd basis(count, n);
  std::vector<bool> taken(n, false);
  std::vector<int> picks;
  picks.reserve(count);
  for (int t = 0; t < count; ++t) {
    int p = -1;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
      if (!taken[i] && residual(i) > best + 1e-15) {
        best = residual(i);
        p = i;
      }
    }
    taken[p] = true;
    picks.push_back(p);
    const double pivot = std::sqrt(std::max(residual(p), 1e-12));
    for (int i = 0; i < n; ++i) {
      double e = k(p, i);
      for (int s = 0; s < t; ++s) e -= basis(s, p) * basis(s, i);
      basis(t, i) = e / pivot;
      residual(i) = std::max(residual(i) - basis(t, i) * basis(t, i), 0.0);
    }
  }
  Eigen::MatrixXd out(count, data.dim());
  for (int i = 0; i < count; ++i) out.row(i) = data.inputs.row(picks[i]);
  return out;
}

}  // namespace

GpHyperparams greedy_selection_scale(const GpDataset& data) {
  const int d = data.dim();
  GpHyperparams h;
  h.signal_std = 1.0;
  h.noise_std = 0.0;
  h.length_scales.resize(d);
  for (int c = 0; c < d; ++c) {
    const double mean = data.inputs.col(c).mean();
    const double var =
        (data.inputs.col(c).array() - mean).square().sum() / std::max(1, data.size() - 1);
    h.length_scales(c) = std::max(std::sqrt(var), 1e-6);
  }
  return h;
}

Eigen::MatrixXd select_inducing(const GpDataset& data, int count, InducingStrategy strategy,
                                std::uint64_t seed) {
  validate_dataset(data);
  if (count < 1 || count > data.size()) {
    throw std::invalid_argument("select_inducing: count out of range");
  }
  switch (strategy) {
    case InducingStrategy::SubsetRandom:
      return subset_random(data, count, seed);
    case InducingStrategy::KMeansLike:
      return kmeans_like(data, count, seed);
    case InducingStrategy::GreedyVariance:
      return greedy_variance(data, count);
  }
  throw std::invalid_argument("select_inducing: unknown strategy");
}

SparseGpModel fic_fit(const GpDataset& data, const GpHyperparams& h,
                      const Eigen::MatrixXd& inducing) {
  validate_dataset(data);
  validate_hyperparams(h);
  if (inducing.rows() < 1 || inducing.rows() > data.size()) {
    throw std::invalid_argument("fic_fit: inducing count out of range");
  }
  if (inducing.cols() != data.dim() || data.dim() != h.input_dim()) {
    throw std::invalid_argument("fic_fit: dimension mismatch");
  }
  if (!inducing.allFinite()) throw std::invalid_argument("fic_fit: non-finite inducing");

  const int n = data.size();
  const double sf2 = h.signal_std * h.signal_std;
  const double sn2 = h.noise_std * h.noise_std;

  SparseGpModel model;
  model.hyperparams = h;
  model.inducing = inducing;

  const Eigen::MatrixXd kuu = kernel_matrix(inducing, inducing, h);
  auto [chol_kuu, jitter] = cholesky_with_jitter(kuu);
  model.chol_kuu = std::move(chol_kuu);
  model.applied_jitter = jitter;

  const Eigen::MatrixXd kfu = kernel_matrix(data.inputs, inducing, h);  // n x m
  // V = L_uu^{-1} K_uf; column i gives the Q_ff diagonal entry |V_i|^2.
  const Eigen::MatrixXd v =
      model.chol_kuu.triangularView<Eigen::Lower>().solve(kfu.transpose());
  Eigen::VectorXd lambda(n);
  for (int i = 0; i < n; ++i) {
    lambda(i) = std::max(sf2 - v.col(i).squaredNorm(), 0.0) + sn2;
    lambda(i) = std::max(lambda(i), 1e-12 * sf2);  // keeps sigma_n = 0 usable
  }
  const Eigen::VectorXd lambda_inv = lambda.cwiseInverse();

  // Shared-factor form: both variance corrections route through L_uu, so
  // the exact-GP limit survives an ill-conditioned K_uu.
  const int m = static_cast<int>(inducing.rows());
  const Eigen::MatrixXd b = Eigen::MatrixXd::Identity(m, m) +
                            v * lambda_inv.asDiagonal() * v.transpose();
  Eigen::LLT<Eigen::MatrixXd> llt_b(b);
  if (llt_b.info() != Eigen::Success) {
    throw FitError("fic_fit: projected system factorization failed", jitter);
  }
  model.chol_b = llt_b.matrixL();
  const Eigen::VectorXd c = model.chol_b.triangularView<Eigen::Lower>().solve(
      v * lambda_inv.cwiseProduct(data.targets));
  // Mean weights: k_*^T L_uu^{-T} L_b^{-T} c collapses to a dot product.
  Eigen::VectorXd w = model.chol_b.transpose().triangularView<Eigen::Upper>().solve(c);
  model.beta = model.chol_kuu.transpose().triangularView<Eigen::Upper>().solve(w);
  return model;
}

GpPrediction fic_predict(const SparseGpModel& model, const Eigen::VectorXd& query) {
  if (query.size() != model.dim()) {
    throw std::invalid_argument("fic_predict: query dimension mismatch");
  }
  const int m = model.inducing_count();
  Eigen::VectorXd kstar(m);
  for (int j = 0; j < m; ++j) {
    kstar(j) = kernel_rbf(model.inducing.row(j), query, model.hyperparams);
  }
  GpPrediction out;
  out.mean = kstar.dot(model.beta) + model.target_offset;
  const double prior = model.hyperparams.signal_std * model.hyperparams.signal_std;
  const Eigen::VectorXd a = model.chol_kuu.triangularView<Eigen::Lower>().solve(kstar);
  const Eigen::VectorXd ba = model.chol_b.triangularView<Eigen::Lower>().solve(a);
  out.variance = clamp_variance(prior - a.squaredNorm() + ba.squaredNorm());
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> fic_predict_batch(const SparseGpModel& model,
                                                              const Eigen::MatrixXd& queries) {
  if (queries.cols() != model.dim()) {
    throw std::invalid_argument("fic_predict_batch: query dimension mismatch");
  }
  const Eigen::MatrixXd kstar =
      kernel_matrix(model.inducing, queries, model.hyperparams);  // m x q
  Eigen::VectorXd means =
      (kstar.transpose() * model.beta).array() + model.target_offset;
  const double prior = model.hyperparams.signal_std * model.hyperparams.signal_std;
  const Eigen::MatrixXd a = model.chol_kuu.triangularView<Eigen::Lower>().solve(kstar);
  const Eigen::MatrixXd ba = model.chol_b.triangularView<Eigen::Lower>().solve(a);
  Eigen::VectorXd vars(queries.rows());
  for (int i = 0; i < queries.rows(); ++i) {
    vars(i) = clamp_variance(prior - a.col(i).squaredNorm() + ba.col(i).squaredNorm());
  }
  return {std::move(means), std::move(vars)};
}

Eigen::VectorXd fic_mean_gradient(const SparseGpModel& model, const Eigen::VectorXd& query) {
  if (query.size() != model.dim()) {
    throw std::invalid_argument("fic_mean_gradient: query dimension mismatch");
  }
  const Eigen::VectorXd inv_l2 =
      model.hyperparams.length_scales.array().square().inverse();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(query.size());
  for (int j = 0; j < model.inducing_count(); ++j) {
    const double k = kernel_rbf(model.inducing.row(j), query, model.hyperparams);
    grad += model.beta(j) * k *
            (model.inducing.row(j).transpose() - query).cwiseProduct(inv_l2);
  }
  return grad;
}

}  // namespace gpmpc
