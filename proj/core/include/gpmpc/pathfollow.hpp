#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "gpmpc/disturbance.hpp"
#include "gpmpc/mpc.hpp"
#include "gpmpc/rng.hpp"

namespace gpmpc {

struct RobotPose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // wrapped to (-pi, pi]
};

/// Wrap an angle to (-pi, pi].
double wrap_angle(double angle);

RobotPose unicycle_step(const RobotPose& pose, double v_cmd, double omega_cmd, double timestep);

/// Actuation slip model: commanded velocities are scaled and biased, the
/// yaw bias follows the heading, and seeded noise rides on top.
struct SlipParams {
  double gain_v = 0.85;
  double gain_omega = 0.9;
  double bias_v = 0.0;
  double bias_omega = 0.0;  // multiplies sin(heading)
  double noise_std_v = 0.0;
  double noise_std_omega = 0.0;
};

struct PlantStep {
  RobotPose pose;
  double v_act = 0.0;
  double omega_act = 0.0;
};

PlantStep disturbed_plant_step(const RobotPose& pose, double v_cmd, double omega_cmd,
                               double timestep, const SlipParams& slip, Rng& rng);

/// Waypoint path with arc-length parameterization and a target speed.
struct PathDef {
  Eigen::MatrixXd waypoints;   // n x 2
  Eigen::VectorXd arc_length;  // n, strictly increasing from 0
  double target_speed = 1.0;
  bool closed = false;

  double total_length() const { return arc_length(arc_length.size() - 1); }
};

PathDef path_from_waypoints(const Eigen::MatrixXd& waypoints, double target_speed,
                            bool closed);
PathDef make_straight_path(double length, double direction, double target_speed);
PathDef make_circle_path(double radius, double target_speed);
PathDef make_figure_eight_path(double scale, double target_speed);

Eigen::Vector2d path_point(const PathDef& path, double s);
double path_tangent_heading(const PathDef& path, double s);

struct PathErrors {
  double lateral = 0.0;  // signed, left of the path positive
  double heading = 0.0;  // wrapped to (-pi, pi]
  double progress = 0.0;
};

/// Errors relative to the nearest path point. A non-negative progress
/// hint restricts the search to a window around it, which keeps progress
/// well defined on self-intersecting paths.
PathErrors path_errors(const RobotPose& pose, const PathDef& path,
                       double progress_hint = -1.0);

/// One closed-loop step: pose observed before applying the commands,
/// the commands themselves, and the realized velocities. `u_fbl` holds
/// the scalar feedback-linearized input when that controller ran.
struct PathfollowRecord {
  RobotPose pose;
  double v_cmd = 0.0;
  double omega_cmd = 0.0;
  double v_act = 0.0;
  double omega_act = 0.0;
  double u_fbl = 0.0;
};

/// Disturbance datasets for the pose states (x, y, heading), one target
/// dimension each over shared query rows. Queries are
/// (pose, previous actual velocity, command, previous command) with the
/// actual velocity recovered from pose differences.
std::array<GpDataset, 3> collect_pose_disturbance_data(
    const std::vector<PathfollowRecord>& log, double timestep);

/// Disturbance datasets for the feedback-linearized states (z1, z2).
std::array<GpDataset, 2> collect_fbl_disturbance_data(
    const std::vector<PathfollowRecord>& log, const PathDef& path, double timestep,
    double target_speed);

/// Discrete double-integrator pair for the linearized lateral dynamics.
std::pair<Eigen::Matrix2d, Eigen::Vector2d> fbl_matrices(double timestep);

/// Stacked prediction matrices over the horizon: L is 2N x 2, M is 2N x N.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> fbl_batch_matrices(double timestep, int horizon);

/// Factors reused at every control step for a fixed (T, N, Q, R).
struct FblMpcGains {
  Eigen::MatrixXd normal_chol;  // lower factor of M^T Q M + R
  Eigen::MatrixXd mtq;          // M^T Q
  Eigen::MatrixXd input_weight;
};

FblMpcGains make_fblmpc_gains(const Eigen::MatrixXd& m, const Eigen::MatrixXd& q,
                              const Eigen::MatrixXd& r);

Eigen::VectorXd fblmpc_delta_u(const FblMpcGains& gains, const Eigen::MatrixXd& l,
                               const Eigen::VectorXd& y, const Eigen::Vector2d& delta_z,
                               const Eigen::VectorXd& u_prev);

/// Uncached variant; forms the gains and applies them, so it is
/// bit-identical to the cached path.
Eigen::VectorXd fblmpc_delta_u(const Eigen::MatrixXd& l, const Eigen::MatrixXd& m,
                               const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                               const Eigen::VectorXd& y, const Eigen::Vector2d& delta_z,
                               const Eigen::VectorXd& u_prev);

/// Steering rate from the feedback-linearized input; valid only for
/// v != 0 and |heading error| < pi/2.
double recover_omega(double u_fbl, double v, double heading_error);

struct PathfollowWeights {
  double q_xy = 1.0;
  double q_heading = 0.2;
  double r_v = 1e-3;
  double r_omega = 1e-3;
  double q_lateral = 1.0;     // FBL z1
  double q_lateral_rate = 0.2;  // FBL z2
  double r_fbl = 0.05;
};

struct ControllerOutput {
  double v_cmd = 0.0;
  double omega_cmd = 0.0;
  double u_fbl = 0.0;
  bool fallback = false;
  bool converged = true;
  int iterations = 0;
  double predicted_cost = 0.0;
  Eigen::VectorXd gp_mean;  // per GP dimension at the first horizon step
  Eigen::VectorXd gp_var;
  PathErrors errors;
  std::vector<double> iteration_costs;
  std::vector<double> iteration_delta_norms;
};

/// Feedback-linearized MPC with optional additive GP corrections on the
/// (z1, z2) prediction. Holds the running stacked prediction and input
/// sequence between steps.
class FblMpcController {
 public:
  struct Config {
    double timestep = 0.1;
    int horizon = 20;
    PathfollowWeights weights;
    double target_speed = 1.0;
    double omega_max = 2.5;
  };

  FblMpcController(const Config& config, const DisturbanceGp* gp_z1 = nullptr,
                   const DisturbanceGp* gp_z2 = nullptr);

  ControllerOutput step(const RobotPose& pose, const PathDef& path);
  void observe_actuals(double v_act, double omega_act);
  void reset();

 private:
  Config config_;
  const DisturbanceGp* gp_z1_;
  const DisturbanceGp* gp_z2_;
  Eigen::Matrix2d f_;
  Eigen::Vector2d g_;
  Eigen::MatrixXd l_, m_, q_, r_;
  FblMpcGains gains_;
  Eigen::VectorXd y_;      // running stacked prediction (2N)
  Eigen::VectorXd u_seq_;  // running input sequence (N)
  Eigen::Vector2d prev_z_;
  double prev_u_applied_ = 0.0;
  double observed_v_ = 0.0;
  double observed_omega_ = 0.0;
  double progress_ = -1.0;
  bool first_ = true;
};

/// Nonlinear GP-MPC on the unicycle model with the disturbance GP fed by
/// (pose, previous actual velocity, command, previous command).
class NmpcPathController {
 public:
  struct Config {
    double timestep = 0.1;
    int horizon = 15;
    PathfollowWeights weights;
    double target_speed = 1.0;
    double v_max = 2.0;
    double omega_max = 2.5;
    NmpcOptions options{40, 2e-4};  // sim-grade command resolution
  };

  NmpcPathController(const Config& config, const DisturbanceGp* gp_x = nullptr,
                     const DisturbanceGp* gp_y = nullptr,
                     const DisturbanceGp* gp_heading = nullptr);

  ControllerOutput step(const RobotPose& pose, const PathDef& path);
  void observe_actuals(double v_act, double omega_act);
  void reset();

  const HybridModel& model() const { return model_; }

 private:
  Config config_;
  HybridModel model_;
  MpcWeights weights_;
  Eigen::MatrixXd u_seq_;  // 2 x N warm start
  Eigen::Vector2d observed_vel_;
  Eigen::Vector2d prev_cmd_;
  double progress_ = -1.0;
  bool first_ = true;
};

/// Augmented unicycle prediction model shared by the NMPC controllers:
/// state (x, y, heading, prev actual v, prev actual omega, prev cmd v,
/// prev cmd omega), input (v, omega).
HybridModel make_unicycle_hybrid_model(double timestep, const DisturbanceGp* gp_x,
                                       const DisturbanceGp* gp_y,
                                       const DisturbanceGp* gp_heading);

}  // namespace gpmpc
