#pragma once

#include <Eigen/Core>
#include <utility>
#include <vector>

#include "gpmpc/propagation.hpp"

namespace gpmpc {

/// Stacked quadratic weights over the prediction horizon.
struct MpcWeights {
  Eigen::MatrixXd state_weight;  // (N n_x) x (N n_x), PSD
  Eigen::MatrixXd input_weight;  // (N n_u) x (N n_u), PSD
  int horizon = 0;

  /// Same diagonal block repeated at every step.
  static MpcWeights uniform(const Eigen::VectorXd& state_diag,
                            const Eigen::VectorXd& input_diag, int horizon);
};

/// Linearization of the hybrid prediction model along a nominal
/// trajectory, in batch (stacked) form.
struct LinearizedHorizon {
  std::vector<Eigen::MatrixXd> step_state_gain;  // per-step state gain
  std::vector<Eigen::MatrixXd> step_input_gain;  // per-step input gain
  Eigen::MatrixXd stacked_state_gain;            // strictly lower block shift
  Eigen::MatrixXd stacked_input_gain;            // block diagonal
  Eigen::MatrixXd response;                      // (I - Hx)^{-1} Hu
  Eigen::MatrixXd nominal_states;                // n_x x (N+1)
  Eigen::MatrixXd nominal_inputs;                // n_u x N
  Eigen::MatrixXd reference;                     // n_x x N, steps 1..N

  int horizon() const { return static_cast<int>(step_state_gain.size()); }
};

/// One-step combined gain of the nominal model and the GP mean,
/// evaluated at (x, u): state gain and input gain.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> linearize_step(const HybridModel& model,
                                                           const Eigen::VectorXd& x,
                                                           const Eigen::VectorXd& u);

/// Assemble the stacked horizon matrices. The response matrix solves the
/// unit lower block-triangular system by forward substitution.
LinearizedHorizon build_horizon(const HybridModel& model,
                                const Eigen::MatrixXd& nominal_states,
                                const Eigen::MatrixXd& nominal_inputs,
                                const MpcWeights& weights);

/// Closed-form minimizer of the batch quadratic cost around the nominal
/// trajectory; requires `horizon.reference` to be set.
Eigen::VectorXd solve_delta_u(const LinearizedHorizon& horizon, const MpcWeights& weights);

/// Stage cost of a candidate input sequence: rolls out the prediction
/// means and evaluates the tracking + effort quadratic.
double horizon_cost(const HybridModel& model, const Eigen::VectorXd& x_now,
                    const Eigen::MatrixXd& reference, const MpcWeights& weights,
                    const Eigen::MatrixXd& inputs);

/// Mean rollout of the prediction model: column b is the state after b
/// steps (column 0 = x_now).
Eigen::MatrixXd rollout_means(const HybridModel& model, const Eigen::VectorXd& x_now,
                              const Eigen::MatrixXd& inputs);

struct NmpcOptions {
  int max_iter = 30;
  double tol = 1e-4;
};

struct NmpcDiagnostics {
  std::vector<double> iteration_costs;
  std::vector<double> delta_u_norms;
  bool converged = false;
  int iterations = 0;
  Eigen::MatrixXd input_sequence;    // n_u x N after the final update
  Eigen::MatrixXd predicted_states;  // n_x x (N+1)
};

/// Iterative linearize/solve/update loop; returns the first input of the
/// converged sequence. Non-convergence returns the best iterate, flagged.
std::pair<Eigen::VectorXd, NmpcDiagnostics> gp_nmpc_step(
    const HybridModel& model, const Eigen::VectorXd& x_now,
    const Eigen::MatrixXd& reference, const MpcWeights& weights,
    const Eigen::MatrixXd& initial_inputs, const NmpcOptions& options = {});

double norm_cdf(double x);

/// Standard normal quantile, bisection-refined so the round trip through
/// norm_cdf is accurate to 1e-10.
double inv_norm_cdf(double p);

/// Deterministic tightening of h^T x <= b under state covariance `cov`.
double chance_tighten_halfspace(const Eigen::VectorXd& h, double b,
                                const Eigen::MatrixXd& cov, double p_def);

}  // namespace gpmpc
