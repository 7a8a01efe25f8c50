#include "gpmpc/mpc.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gpmpc/errors.hpp"

namespace gpmpc {

MpcWeights MpcWeights::uniform(const Eigen::VectorXd& state_diag,
                               const Eigen::VectorXd& input_diag, int horizon) {
  if (horizon < 1) throw std::invalid_argument("MpcWeights: horizon must be >= 1");
  MpcWeights w;
  w.horizon = horizon;
  const int n_x = static_cast<int>(state_diag.size());
  const int n_u = static_cast<int>(input_diag.size());
  w.state_weight = Eigen::MatrixXd::Zero(horizon * n_x, horizon * n_x);
  w.input_weight = Eigen::MatrixXd::Zero(horizon * n_u, horizon * n_u);
  for (int b = 0; b < horizon; ++b) {
    w.state_weight.block(b * n_x, b * n_x, n_x, n_x) = state_diag.asDiagonal();
    w.input_weight.block(b * n_u, b * n_u, n_u, n_u) = input_diag.asDiagonal();
  }
  return w;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> linearize_step(const HybridModel& model,
                                                           const Eigen::VectorXd& x,
                                                           const Eigen::VectorXd& u) {
  Eigen::MatrixXd gain_x = model_jac_state(model, x, u);
  Eigen::MatrixXd gain_u = model_jac_input(model, x, u);
  if (model.gp_count() > 0) {
    const Eigen::VectorXd q = gp_query(model, x, u);
    for (int i = 0; i < model.gp_count(); ++i) {
      const Eigen::VectorXd g = disturbance_mean_gradient(model.gp_dims[i], q);
      for (std::size_t j = 0; j < model.gp_input_map.size(); ++j) {
        const int idx = model.gp_input_map[j];
        if (idx < model.state_dim) {
          gain_x.col(idx) += model.gp_placement.col(i) * g(j);
        } else {
          gain_u.col(idx - model.state_dim) += model.gp_placement.col(i) * g(j);
        }
      }
    }
  }
  return {std::move(gain_x), std::move(gain_u)};
}

LinearizedHorizon build_horizon(const HybridModel& model,
                                const Eigen::MatrixXd& nominal_states,
                                const Eigen::MatrixXd& nominal_inputs,
                                const MpcWeights& weights) {
  model.validate();
  const int n = weights.horizon;
  const int n_x = model.state_dim;
  const int n_u = model.input_dim;
  if (nominal_states.cols() != n + 1 || nominal_states.rows() != n_x) {
    throw std::invalid_argument("build_horizon: nominal state trajectory must be n_x x (N+1)");
  }
  if (nominal_inputs.cols() != n || nominal_inputs.rows() != n_u) {
    throw std::invalid_argument("build_horizon: nominal input trajectory must be n_u x N");
  }

  LinearizedHorizon h;
  h.nominal_states = nominal_states;
  h.nominal_inputs = nominal_inputs;
  h.step_state_gain.reserve(n);
  h.step_input_gain.reserve(n);
  for (int b = 0; b < n; ++b) {
    auto [gx, gu] = linearize_step(model, nominal_states.col(b), nominal_inputs.col(b));
    h.step_state_gain.push_back(std::move(gx));
    h.step_input_gain.push_back(std::move(gu));
  }

  h.stacked_state_gain = Eigen::MatrixXd::Zero(n * n_x, n * n_x);
  h.stacked_input_gain = Eigen::MatrixXd::Zero(n * n_x, n * n_u);
  for (int b = 0; b < n; ++b) {
    h.stacked_input_gain.block(b * n_x, b * n_u, n_x, n_u) = h.step_input_gain[b];
    if (b >= 1) {
      // Row b picks up the state gain of step b applied to delta x_{k+b}.
      h.stacked_state_gain.block(b * n_x, (b - 1) * n_x, n_x, n_x) = h.step_state_gain[b];
    }
  }

  // (I - Hx) is unit lower block-triangular; forward block substitution.
  h.response = Eigen::MatrixXd::Zero(n * n_x, n * n_u);
  for (int b = 0; b < n; ++b) {
    h.response.block(b * n_x, b * n_u, n_x, n_u) = h.step_input_gain[b];
    if (b >= 1) {
      h.response.middleRows(b * n_x, n_x) +=
          h.step_state_gain[b] * h.response.middleRows((b - 1) * n_x, n_x);
    }
  }
  return h;
}

Eigen::VectorXd solve_delta_u(const LinearizedHorizon& horizon, const MpcWeights& weights) {
  const int n = horizon.horizon();
  if (n != weights.horizon) throw std::invalid_argument("solve_delta_u: horizon mismatch");
  if (horizon.reference.size() == 0) {
    throw std::invalid_argument("solve_delta_u: reference trajectory not set");
  }
  const int n_x = static_cast<int>(horizon.nominal_states.rows());
  const int n_u = static_cast<int>(horizon.nominal_inputs.rows());

  Eigen::VectorXd x_tilde(n * n_x);
  Eigen::VectorXd u_bar(n * n_u);
  for (int b = 0; b < n; ++b) {
    x_tilde.segment(b * n_x, n_x) = horizon.reference.col(b) - horizon.nominal_states.col(b + 1);
    u_bar.segment(b * n_u, n_u) = horizon.nominal_inputs.col(b);
  }

  const Eigen::MatrixXd& hp = horizon.response;
  const Eigen::MatrixXd normal = hp.transpose() * weights.state_weight * hp + weights.input_weight;
  const Eigen::VectorXd rhs =
      hp.transpose() * (weights.state_weight * x_tilde) - weights.input_weight * u_bar;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  if (ldlt.info() != Eigen::Success ||
      ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, ldlt.vectorD().cwiseAbs().maxCoeff())) {
    throw SolverError("solve_delta_u: singular normal matrix");
  }
  return ldlt.solve(rhs);
}

Eigen::MatrixXd rollout_means(const HybridModel& model, const Eigen::VectorXd& x_now,
                              const Eigen::MatrixXd& inputs) {
  const int n = static_cast<int>(inputs.cols());
  Eigen::MatrixXd states(model.state_dim, n + 1);
  states.col(0) = x_now;
  for (int b = 0; b < n; ++b) {
    states.col(b + 1) =
        mean_step(model, GaussianBelief::certain(states.col(b)), inputs.col(b));
  }
  return states;
}

double horizon_cost(const HybridModel& model, const Eigen::VectorXd& x_now,
                    const Eigen::MatrixXd& reference, const MpcWeights& weights,
                    const Eigen::MatrixXd& inputs) {
  const int n = weights.horizon;
  const int n_x = model.state_dim;
  const int n_u = model.input_dim;
  const Eigen::MatrixXd states = rollout_means(model, x_now, inputs);
  Eigen::VectorXd err(n * n_x), u(n * n_u);
  for (int b = 0; b < n; ++b) {
    err.segment(b * n_x, n_x) = reference.col(b) - states.col(b + 1);
    u.segment(b * n_u, n_u) = inputs.col(b);
  }
  return err.dot(weights.state_weight * err) + u.dot(weights.input_weight * u);
}

std::pair<Eigen::VectorXd, NmpcDiagnostics> gp_nmpc_step(
    const HybridModel& model, const Eigen::VectorXd& x_now,
    const Eigen::MatrixXd& reference, const MpcWeights& weights,
    const Eigen::MatrixXd& initial_inputs, const NmpcOptions& options) {
  model.validate();
  const int n = weights.horizon;
  const int n_u = model.input_dim;
  if (initial_inputs.cols() != n || initial_inputs.rows() != n_u) {
    throw std::invalid_argument("gp_nmpc_step: initial input sequence must be n_u x N");
  }
  if (reference.cols() != n || reference.rows() != model.state_dim) {
    throw std::invalid_argument("gp_nmpc_step: reference must be n_x x N");
  }

  NmpcDiagnostics diag;
  Eigen::MatrixXd inputs = initial_inputs;
  Eigen::MatrixXd best_inputs = inputs;
  double current_cost = horizon_cost(model, x_now, reference, weights, inputs);
  double best_cost = current_cost;

  for (int iter = 0; iter < options.max_iter; ++iter) {
    const Eigen::MatrixXd states = rollout_means(model, x_now, inputs);
    LinearizedHorizon horizon = build_horizon(model, states, inputs, weights);
    horizon.reference = reference;
    const Eigen::VectorXd delta = solve_delta_u(horizon, weights);

    // Backtracking on the update keeps the iteration stable when the
    // linearization is only locally valid (curvy GP means).
    double step = 1.0;
    Eigen::MatrixXd candidate;
    double cost = current_cost;
    for (int bt = 0; bt < 6; ++bt) {
      candidate = inputs;
      for (int b = 0; b < n; ++b) {
        candidate.col(b) += step * delta.segment(b * n_u, n_u);
      }
      cost = horizon_cost(model, x_now, reference, weights, candidate);
      if (cost <= current_cost + 1e-12) break;
      step *= 0.5;
    }
    inputs = candidate;
    current_cost = cost;

    diag.iteration_costs.push_back(cost);
    diag.delta_u_norms.push_back(step * delta.cwiseAbs().maxCoeff());
    diag.iterations = iter + 1;
    if (cost < best_cost) {
      best_cost = cost;
      best_inputs = inputs;
    }
    if (diag.delta_u_norms.back() <= options.tol) {
      diag.converged = true;
      break;
    }
  }
  if (!diag.converged) inputs = best_inputs;
  diag.input_sequence = inputs;
  diag.predicted_states = rollout_means(model, x_now, inputs);
  return {inputs.col(0), diag};
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double inv_norm_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("inv_norm_cdf: p must be in (0, 1)");
  }
  double lo = -15.0, hi = 15.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (norm_cdf(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-14) break;
  }
  return 0.5 * (lo + hi);
}

double chance_tighten_halfspace(const Eigen::VectorXd& h, double b,
                                const Eigen::MatrixXd& cov, double p_def) {
  if (!(p_def >= 0.5 && p_def < 1.0)) {
    throw std::invalid_argument("chance_tighten_halfspace: p_def must be in [0.5, 1)");
  }
  if (cov.rows() != h.size() || cov.cols() != h.size()) {
    throw std::invalid_argument("chance_tighten_halfspace: dimension mismatch");
  }
  const double spread = h.dot(cov * h);
  if (spread < -1e-10) {
    throw NumericalError("chance_tighten_halfspace: negative constraint variance");
  }
  return b - inv_norm_cdf(p_def) * std::sqrt(std::max(spread, 0.0));
}

}  // namespace gpmpc
