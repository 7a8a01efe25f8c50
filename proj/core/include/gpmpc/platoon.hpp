#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <utility>

#include "gpmpc/disturbance.hpp"
#include "gpmpc/qp.hpp"

namespace gpmpc {

/// Fourth-order ARX predictor of the human-driven vehicle velocity from
/// its own history and the trailing AV's history.
struct ArxModel {
  Eigen::Vector4d hv_coeffs = Eigen::Vector4d::Zero();    // c1..c4
  Eigen::Vector4d lead_coeffs = Eigen::Vector4d::Zero();  // b1..b4
};

/// hist(0) is the most recent lag (k-1).
double arx_predict(const ArxModel& model, const Eigen::Vector4d& hv_hist,
                   const Eigen::Vector4d& lead_hist);

/// Least-squares fit from aligned velocity series; needs >= 50 usable rows.
ArxModel fit_arx(const Eigen::VectorXd& hv_velocity, const Eigen::VectorXd& lead_velocity);

struct GpArxPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// ARX nominal prediction plus the GP residual correction queried at
/// (hv lag 1, lead lag 1).
GpArxPrediction gp_arx_predict(const ArxModel& model, const DisturbanceGp& gp,
                               const Eigen::Vector4d& hv_hist,
                               const Eigen::Vector4d& lead_hist);

/// Double-integrator step; position advances with the pre-update velocity.
std::pair<double, double> av_step(double position, double velocity, double acceleration,
                                  double timestep);

struct HvBelief {
  double mean = 0.0;
  double var = 0.0;
};

HvBelief hv_belief_step(const HvBelief& belief, double nominal_velocity, double gp_mean,
                        double gp_var, double timestep);

struct PlatoonLimits {
  double min_gap = 10.0;    // hard inter-vehicle distance
  double extra_gap = 0.0;   // additional buffer inside the tightened bound
  double p_def = 0.95;      // chance-constraint satisfaction probability
  double v_min = 0.0;
  double v_max = 35.0;
  double acc_min = -5.0;
  double acc_max = 3.5;
  double timestep = 0.1;
  int horizon = 20;
  double weight_acc = 1.0;   // R
  double weight_ref = 4.0;   // Q1, leader tracking
  double weight_coh = 2.0;   // Q2, velocity cohesion

  void validate() const;
};

/// Measured platoon state at the current step. Histories hold the most
/// recent value first (index 0 = current step k).
struct PlatoonState {
  Eigen::VectorXd av_pos;        // ordered front to rear: p1 > p2 > ...
  Eigen::VectorXd av_vel;
  Eigen::Vector4d hv_vel_hist;   // v^H at k, k-1, k-2, k-3
  Eigen::Vector4d lead_vel_hist; // trailing-AV velocity at k, k-1, k-2, k-3
  double hv_pos = 0.0;

  int av_count() const { return static_cast<int>(av_pos.size()); }
  void validate(const PlatoonLimits& limits) const;
};

struct TightenedGap {
  double required = 0.0;
  bool satisfied = false;
};

/// Required AV-to-HV clearance under the current belief.
TightenedGap tightened_distance(double last_av_pos, const HvBelief& belief,
                                const PlatoonLimits& limits);

struct PlatoonSolution {
  Eigen::VectorXd acc_first;       // one per AV, applied this step
  Eigen::MatrixXd acc_seq;         // N_a x N
  Eigen::MatrixXd av_vel_pred;     // N_a x (N+1), column 0 = measured
  Eigen::MatrixXd av_pos_pred;     // N_a x (N+1)
  Eigen::VectorXd hv_vel_pred;     // N, nominal chain over the horizon
  Eigen::VectorXd hv_mean_pred;    // N, belief mean at steps 1..N
  Eigen::VectorXd hv_var_pred;     // N
  Eigen::VectorXd gp_mean_used;    // N, frozen corrections along the horizon
  Eigen::VectorXd gp_var_used;     // N
  double objective = 0.0;
  double kkt_residual = 0.0;
  double max_slack = 0.0;
  bool soft_fallback = false;
  int qp_iterations = 0;
};

/// One MPC solve. GP terms are evaluated once along the previous
/// solution's predicted velocities (constant-velocity rollout on a cold
/// start), which keeps the program a convex QP. A null GP reproduces the
/// nominal controller exactly. Throws SolverError when even the
/// soft-constrained fallback fails.
PlatoonSolution solve_platoon_ocp(const PlatoonState& state, const Eigen::VectorXd& v_ref,
                                  const PlatoonLimits& limits, const ArxModel& arx,
                                  const DisturbanceGp* gp,
                                  const PlatoonSolution* previous);

/// The assembled QP data for one MPC step (distance constraints occupy
/// the leading inequality rows). Exposed for verification.
struct PlatoonQp {
  QpProblem qp;
  int distance_constraints = 0;
  Eigen::VectorXd gp_mean;
  Eigen::VectorXd gp_var;
};

PlatoonQp platoon_qp_data(const PlatoonState& state, const Eigen::VectorXd& v_ref,
                          const PlatoonLimits& limits, const ArxModel& arx,
                          const DisturbanceGp* gp, const PlatoonSolution* previous);

struct HvDriverParams {
  int delay_steps = 6;
  double gain = 1.0;
  double noise_std = 0.0;
  double v_sat = 40.0;
};

/// Distracted-driver stand-in: delayed proportional response with
/// saturation and seeded noise.
Eigen::VectorXd synth_hv_driver(const Eigen::VectorXd& lead_velocity,
                                const HvDriverParams& params, std::uint64_t seed);

enum class SpeedProfileKind { Constant, EmergencyBrake, WltpLike };

struct SpeedProfileParams {
  double v_cruise = 15.0;
  double v_max = 25.0;
  double acc_max = 2.5;
  double brake_decel = 3.0;
};

Eigen::VectorXd speed_profile(SpeedProfileKind kind, double timestep, double duration,
                              std::uint64_t seed, const SpeedProfileParams& params = {});

}  // namespace gpmpc
