#include "gpmpc/gp.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "gpmpc/errors.hpp"
#include "gpmpc/rng.hpp"

namespace gpmpc {

namespace {

constexpr double kJitterStart = 1e-10;
constexpr double kJitterMax = 1e-4;

Eigen::VectorXd to_log(const GpHyperparams& h) {
  Eigen::VectorXd theta(h.input_dim() + 2);
  theta(0) = std::log(h.signal_std);
  for (int d = 0; d < h.input_dim(); ++d) theta(1 + d) = std::log(h.length_scales(d));
  theta(h.input_dim() + 1) = std::log(std::max(h.noise_std, 1e-12));
  return theta;
}

GpHyperparams from_log(const Eigen::VectorXd& theta, int input_dim) {
  GpHyperparams h;
  h.signal_std = std::exp(theta(0));
  h.length_scales = theta.segment(1, input_dim).array().exp();
  h.noise_std = std::exp(theta(input_dim + 1));
  return h;
}

}  // namespace

void validate_dataset(const GpDataset& data) {
  if (data.size() < 1) throw std::invalid_argument("dataset: needs at least one point");
  if (data.inputs.rows() != data.targets.size()) {
    throw std::invalid_argument("dataset: row count of inputs != length of targets");
  }
  if (!data.inputs.allFinite() || !data.targets.allFinite()) {
    throw std::invalid_argument("dataset: non-finite entries");
  }
}

std::pair<Eigen::MatrixXd, double> cholesky_with_jitter(const Eigen::MatrixXd& m) {
  const double diag_mean = m.diagonal().mean();
  double jitter = 0.0;
  while (true) {
    Eigen::LLT<Eigen::MatrixXd> llt(
        jitter == 0.0 ? m
                      : Eigen::MatrixXd(m + jitter * Eigen::MatrixXd::Identity(m.rows(), m.cols())));
    if (llt.info() == Eigen::Success) {
      return {Eigen::MatrixXd(llt.matrixL()), jitter};
    }
    if (jitter == 0.0) {
      jitter = kJitterStart * diag_mean;
    } else if (jitter < kJitterMax * diag_mean) {
      jitter *= 10.0;
    } else {
      throw FitError("cholesky failed after max jitter", jitter);
    }
  }
}

GpModel gp_fit(const GpDataset& data, const GpHyperparams& h) {
  validate_dataset(data);
  validate_hyperparams(h);
  if (data.dim() != h.input_dim()) {
    throw std::invalid_argument("gp_fit: dataset/hyperparameter dimension mismatch");
  }
  GpModel model;
  model.hyperparams = h;
  model.dataset = data;
  const Eigen::MatrixXd ky =
      kernel_matrix(data.inputs, data.inputs, h) +
      h.noise_std * h.noise_std * Eigen::MatrixXd::Identity(data.size(), data.size());
  auto [chol, jitter] = cholesky_with_jitter(ky);
  model.chol = std::move(chol);
  model.applied_jitter = jitter;
  model.alpha = model.chol.transpose().triangularView<Eigen::Upper>().solve(
      model.chol.triangularView<Eigen::Lower>().solve(data.targets));
  if (jitter > 0.0) {
    // The jittered factorization must still solve the unjittered system.
    // Near-duplicate inputs from steady-state logs pass (the residual is
    // jitter-sized); genuinely conflicting targets at repeated inputs
    // leave an O(1) residual and fail.
    const double residual = (ky * model.alpha - data.targets).norm();
    if (residual > 1e-2 * std::max(1e-12, data.targets.norm())) {
      throw FitError("gp_fit: kernel matrix is singular for the given targets", jitter);
    }
  }
  return model;
}

double clamp_variance(double variance) {
  if (variance >= 0.0) return variance;
  if (variance >= -1e-10) return 0.0;
  throw NumericalError("predictive variance " + std::to_string(variance) +
                       " below clamping band");
}

GpPrediction gp_predict(const GpModel& model, const Eigen::VectorXd& query) {
  if (query.size() != model.dataset.dim()) {
    throw std::invalid_argument("gp_predict: query dimension mismatch");
  }
  const int n = model.dataset.size();
  Eigen::VectorXd kstar(n);
  for (int i = 0; i < n; ++i) {
    kstar(i) = kernel_rbf(model.dataset.inputs.row(i), query, model.hyperparams);
  }
  GpPrediction out;
  out.mean = kstar.dot(model.alpha) + model.target_offset;
  const Eigen::VectorXd v = model.chol.triangularView<Eigen::Lower>().solve(kstar);
  const double prior = model.hyperparams.signal_std * model.hyperparams.signal_std;
  out.variance = clamp_variance(prior - v.squaredNorm());
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> gp_predict_batch(const GpModel& model,
                                                             const Eigen::MatrixXd& queries) {
  if (queries.cols() != model.dataset.dim()) {
    throw std::invalid_argument("gp_predict_batch: query dimension mismatch");
  }
  const Eigen::MatrixXd kstar =
      kernel_matrix(model.dataset.inputs, queries, model.hyperparams);  // n x q
  Eigen::VectorXd means =
      (kstar.transpose() * model.alpha).array() + model.target_offset;
  const Eigen::MatrixXd v = model.chol.triangularView<Eigen::Lower>().solve(kstar);
  const double prior = model.hyperparams.signal_std * model.hyperparams.signal_std;
  Eigen::VectorXd vars(queries.rows());
  for (int i = 0; i < queries.rows(); ++i) {
    vars(i) = clamp_variance(prior - v.col(i).squaredNorm());
  }
  return {std::move(means), std::move(vars)};
}

Eigen::VectorXd gp_mean_gradient(const GpModel& model, const Eigen::VectorXd& query) {
  if (query.size() != model.dataset.dim()) {
    throw std::invalid_argument("gp_mean_gradient: query dimension mismatch");
  }
  const int n = model.dataset.size();
  const Eigen::VectorXd inv_l2 =
      model.hyperparams.length_scales.array().square().inverse();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(query.size());
  for (int i = 0; i < n; ++i) {
    const double k = kernel_rbf(model.dataset.inputs.row(i), query, model.hyperparams);
    grad += model.alpha(i) * k *
            (model.dataset.inputs.row(i).transpose() - query).cwiseProduct(inv_l2);
  }
  return grad;
}

LogMarginal log_marginal_likelihood(const GpDataset& data, const GpHyperparams& h) {
  validate_dataset(data);
  validate_hyperparams(h);
  const int n = data.size();
  const int d = data.dim();
  const Eigen::MatrixXd k = kernel_matrix(data.inputs, data.inputs, h);
  const Eigen::MatrixXd ky =
      k + h.noise_std * h.noise_std * Eigen::MatrixXd::Identity(n, n);
  auto [chol, jitter] = cholesky_with_jitter(ky);
  (void)jitter;
  const Eigen::VectorXd alpha = chol.transpose().triangularView<Eigen::Upper>().solve(
      chol.triangularView<Eigen::Lower>().solve(data.targets));

  LogMarginal out;
  out.value = -0.5 * data.targets.dot(alpha) -
              chol.diagonal().array().log().sum() -
              0.5 * n * std::log(2.0 * std::numbers::pi);

  // d(lml)/d(theta_j) = 0.5 tr((alpha alpha^T - Ky^{-1}) dKy/dtheta_j)
  Eigen::MatrixXd ky_inv = chol.transpose().triangularView<Eigen::Upper>().solve(
      chol.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n)));
  const Eigen::MatrixXd w = alpha * alpha.transpose() - ky_inv;

  out.grad_log.resize(d + 2);
  out.grad_log(0) = 0.5 * (w.cwiseProduct(2.0 * k)).sum();  // log signal_std
  for (int dd = 0; dd < d; ++dd) {
    Eigen::MatrixXd dk(n, n);
    const double inv_l2 = 1.0 / (h.length_scales(dd) * h.length_scales(dd));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double diff = data.inputs(i, dd) - data.inputs(j, dd);
        dk(i, j) = k(i, j) * diff * diff * inv_l2;
      }
    }
    out.grad_log(1 + dd) = 0.5 * (w.cwiseProduct(dk)).sum();
  }
  out.grad_log(d + 1) = 0.5 * w.trace() * 2.0 * h.noise_std * h.noise_std;
  return out;
}

GpHyperparams optimize_hyperparams(const GpDataset& data, const GpHyperparams& init,
                                   int budget) {
  validate_dataset(data);
  validate_hyperparams(init);
  if (budget < 1) throw std::invalid_argument("optimize_hyperparams: budget must be >= 1");
  const int d = data.dim();
  constexpr int kRestarts = 4;

  auto objective = [&](const Eigen::VectorXd& theta) -> LogMarginal {
    return log_marginal_likelihood(data, from_log(theta, d));
  };

  const Eigen::VectorXd theta_init = to_log(init);
  double best_value;
  try {
    best_value = objective(theta_init).value;
  } catch (const FitError&) {
    throw OptimizationError("optimize_hyperparams: initial hyperparameters do not fit");
  }
  Eigen::VectorXd best_theta = theta_init;
  int successful_starts = 0;

  Rng restart_rng(0x5eedf00dULL);
  for (int restart = 0; restart < kRestarts; ++restart) {
    Eigen::VectorXd theta = theta_init;
    if (restart > 0) {
      for (int i = 0; i < theta.size(); ++i) theta(i) += 0.5 * restart_rng.gaussian();
    }
    LogMarginal cur;
    try {
      cur = objective(theta);
    } catch (const FitError&) {
      continue;
    }
    ++successful_starts;
    for (int iter = 0; iter < budget; ++iter) {
      if (cur.grad_log.cwiseAbs().maxCoeff() < 1e-7) break;
      // Backtracking ascent along the gradient.
      double step = 1.0 / std::max(1.0, cur.grad_log.norm());
      bool advanced = false;
      for (int bt = 0; bt < 12; ++bt) {
        const Eigen::VectorXd cand = theta + step * cur.grad_log;
        try {
          LogMarginal next = objective(cand);
          if (next.value > cur.value + 1e-4 * step * cur.grad_log.squaredNorm()) {
            theta = cand;
            cur = next;
            advanced = true;
            break;
          }
        } catch (const FitError&) {
          // shrink and retry
        }
        step *= 0.5;
      }
      if (!advanced) break;
    }
    if (cur.value > best_value) {
      best_value = cur.value;
      best_theta = theta;
    }
  }
  if (successful_starts == 0) {
    throw OptimizationError("optimize_hyperparams: every restart failed to fit");
  }
  return from_log(best_theta, d);
}

}  // namespace gpmpc
