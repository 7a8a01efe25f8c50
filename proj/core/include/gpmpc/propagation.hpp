#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "gpmpc/disturbance.hpp"
#include "gpmpc/mvn.hpp"

namespace gpmpc {

/// State belief at one prediction step.
struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  static GaussianBelief certain(const Eigen::VectorXd& mean);
};

/// First two moments of the control input at one step, plus its
/// cross-covariance with the state. Defaults to a deterministic input.
struct ControlMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;       // n_u x n_u
  Eigen::MatrixXd cross_xu;  // n_x x n_u

  static ControlMoments deterministic(const Eigen::VectorXd& u, int state_dim);
};

/// Known dynamics plus additive per-dimension GP corrections routed onto
/// the state through a placement matrix. GP inputs are selected
/// components of the stacked (state, input) vector.
struct HybridModel {
  int state_dim = 0;
  int input_dim = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> dynamics;
  /// Optional analytic Jacobians; finite differences are used when unset.
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> jac_state;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> jac_input;
  Eigen::MatrixXd gp_placement;          // n_x x n_d (zero columns allowed)
  std::vector<DisturbanceGp> gp_dims;    // one per placement column
  Eigen::VectorXd process_noise_var;     // diagonal of the noise covariance
  std::vector<int> gp_input_map;         // indices into [x; u]

  int gp_count() const { return static_cast<int>(gp_dims.size()); }
  void validate() const;
};

/// Build the GP query vector from (x, u) via the input map.
Eigen::VectorXd gp_query(const HybridModel& model, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& u);

Eigen::MatrixXd model_jac_state(const HybridModel& model, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& u);
Eigen::MatrixXd model_jac_input(const HybridModel& model, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& u);

enum class CovMethod { Taylor, MeanEquivalent };

/// Joint covariance blocks over (z, d): the state-input block, the
/// cross block, and the GP-output block (noise excluded).
struct JointBlocks {
  Eigen::MatrixXd cov_z;
  Eigen::MatrixXd cov_zd;
  Eigen::MatrixXd cov_d;
};

JointBlocks joint_blocks(const HybridModel& model, const GaussianBelief& belief,
                         const ControlMoments& control, CovMethod method);

/// Next-state mean: nominal step at the means plus placed GP means.
Eigen::VectorXd mean_step(const HybridModel& model, const GaussianBelief& belief,
                          const Eigen::VectorXd& u_mean);

Eigen::MatrixXd cov_step_taylor(const HybridModel& model, const GaussianBelief& belief,
                                const ControlMoments& control);
Eigen::MatrixXd cov_step_meaneq(const HybridModel& model, const GaussianBelief& belief,
                                const ControlMoments& control);

/// Covariance step for an exactly linear nominal model x+ = A x + B u.
Eigen::MatrixXd cov_step_linear(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                const HybridModel& model, const GaussianBelief& belief,
                                const ControlMoments& control, CovMethod method);

/// Iterate mean and covariance steps; element 0 is the initial belief.
std::vector<GaussianBelief> belief_rollout(const HybridModel& model,
                                           const GaussianBelief& initial,
                                           const std::vector<ControlMoments>& controls,
                                           int steps, CovMethod method);

}  // namespace gpmpc
