#include "gpmpc/pathfollow.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "gpmpc/errors.hpp"

namespace gpmpc {

double wrap_angle(double angle) {
  const double two_pi = 2.0 * std::numbers::pi;
  double wrapped = std::fmod(angle + std::numbers::pi, two_pi);
  if (wrapped <= 0.0) wrapped += two_pi;
  return wrapped - std::numbers::pi;
}

RobotPose unicycle_step(const RobotPose& pose, double v_cmd, double omega_cmd,
                        double timestep) {
  if (!(timestep > 0.0)) throw std::invalid_argument("unicycle_step: timestep must be > 0");
  RobotPose next;
  next.x = pose.x + timestep * v_cmd * std::cos(pose.heading);
  next.y = pose.y + timestep * v_cmd * std::sin(pose.heading);
  next.heading = wrap_angle(pose.heading + timestep * omega_cmd);
  return next;
}

PlantStep disturbed_plant_step(const RobotPose& pose, double v_cmd, double omega_cmd,
                               double timestep, const SlipParams& slip, Rng& rng) {
  PlantStep out;
  out.v_act = slip.gain_v * v_cmd + slip.bias_v;
  out.omega_act = slip.gain_omega * omega_cmd + slip.bias_omega * std::sin(pose.heading);
  if (slip.noise_std_v > 0.0) out.v_act += slip.noise_std_v * rng.gaussian();
  if (slip.noise_std_omega > 0.0) out.omega_act += slip.noise_std_omega * rng.gaussian();
  out.pose = unicycle_step(pose, out.v_act, out.omega_act, timestep);
  return out;
}

PathDef path_from_waypoints(const Eigen::MatrixXd& waypoints, double target_speed,
                            bool closed) {
  if (waypoints.rows() < 2 || waypoints.cols() != 2) {
    throw std::invalid_argument("path: needs at least two 2-D waypoints");
  }
  PathDef path;
  const int extra = closed ? 1 : 0;
  path.waypoints.resize(waypoints.rows() + extra, 2);
  path.waypoints.topRows(waypoints.rows()) = waypoints;
  if (closed) path.waypoints.bottomRows(1) = waypoints.topRows(1);
  path.arc_length.resize(path.waypoints.rows());
  path.arc_length(0) = 0.0;
  for (int i = 1; i < path.waypoints.rows(); ++i) {
    const double seg = (path.waypoints.row(i) - path.waypoints.row(i - 1)).norm();
    if (seg <= 0.0) throw std::invalid_argument("path: consecutive waypoints must differ");
    path.arc_length(i) = path.arc_length(i - 1) + seg;
  }
  path.target_speed = target_speed;
  path.closed = closed;
  return path;
}

PathDef make_straight_path(double length, double direction, double target_speed) {
  const int n = std::max(2, static_cast<int>(length / 0.25) + 1);
  Eigen::MatrixXd wp(n, 2);
  for (int i = 0; i < n; ++i) {
    const double s = length * i / (n - 1);
    wp(i, 0) = s * std::cos(direction);
    wp(i, 1) = s * std::sin(direction);
  }
  return path_from_waypoints(wp, target_speed, false);
}

PathDef make_circle_path(double radius, double target_speed) {
  const int n = std::max(16, static_cast<int>(2.0 * std::numbers::pi * radius / 0.25));
  Eigen::MatrixXd wp(n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * i / n;
    wp(i, 0) = radius * std::sin(t);
    wp(i, 1) = radius * (1.0 - std::cos(t));
  }
  return path_from_waypoints(wp, target_speed, true);
}

PathDef make_figure_eight_path(double scale, double target_speed) {
  const int n = 800;
  Eigen::MatrixXd wp(n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * i / n;
    wp(i, 0) = scale * std::sin(t);
    wp(i, 1) = scale * std::sin(t) * std::cos(t);
  }
  return path_from_waypoints(wp, target_speed, true);
}

namespace {

double clamp_progress(const PathDef& path, double s) {
  const double total = path.total_length();
  if (path.closed) {
    double wrapped = std::fmod(s, total);
    if (wrapped < 0.0) wrapped += total;
    return wrapped;
  }
  return std::clamp(s, 0.0, total);
}

int segment_index(const PathDef& path, double s) {
  // Last index i with arc_length(i) <= s (binary search).
  const auto begin = path.arc_length.data();
  const auto end = begin + path.arc_length.size();
  const auto it = std::upper_bound(begin, end, s);
  int idx = static_cast<int>(it - begin) - 1;
  return std::clamp(idx, 0, static_cast<int>(path.arc_length.size()) - 2);
}

}  // namespace

Eigen::Vector2d path_point(const PathDef& path, double s) {
  const double sc = clamp_progress(path, s);
  const int i = segment_index(path, sc);
  const double seg = path.arc_length(i + 1) - path.arc_length(i);
  const double t = (sc - path.arc_length(i)) / seg;
  return path.waypoints.row(i).transpose() +
         t * (path.waypoints.row(i + 1) - path.waypoints.row(i)).transpose();
}

namespace {

double segment_heading(const PathDef& path, int i) {
  const int n_seg = static_cast<int>(path.waypoints.rows()) - 1;
  i = std::clamp(i, 0, n_seg - 1);
  const Eigen::Vector2d d =
      (path.waypoints.row(i + 1) - path.waypoints.row(i)).transpose();
  return std::atan2(d.y(), d.x());
}

}  // namespace

double path_tangent_heading(const PathDef& path, double s) {
  // Interpolate between adjacent segment headings (anchored at segment
  // midpoints) so the tangent varies continuously; a piecewise-constant
  // tangent turns the heading error into a sawtooth at the waypoint
  // spacing.
  const double sc = clamp_progress(path, s);
  const int n_seg = static_cast<int>(path.waypoints.rows()) - 1;
  const int i = segment_index(path, sc);
  const double total = path.total_length();
  const auto midpoint = [&](int j) {
    // Arc position of segment j's midpoint, unwrapped around the ends.
    double offset = 0.0;
    if (j < 0) {
      j += n_seg;
      offset = -total;
    } else if (j >= n_seg) {
      j -= n_seg;
      offset = total;
    }
    return offset + 0.5 * (path.arc_length(j) + path.arc_length(j + 1));
  };
  const double mid_i = midpoint(i);
  int a = i, b = i;
  if (sc >= mid_i) {
    b = i + 1;
    if (!path.closed && b >= n_seg) return segment_heading(path, i);
  } else {
    a = i - 1;
    if (!path.closed && a < 0) return segment_heading(path, i);
  }
  const double mid_a = a == i ? mid_i : midpoint(a);
  const double mid_b = b == i ? mid_i : midpoint(b);
  const double span = mid_b - mid_a;
  const double alpha = span > 0.0 ? std::clamp((sc - mid_a) / span, 0.0, 1.0) : 0.0;
  const int a_wrapped = (a % n_seg + n_seg) % n_seg;
  const int b_wrapped = (b % n_seg + n_seg) % n_seg;
  const double heading_a = segment_heading(path, a_wrapped);
  const double heading_b = segment_heading(path, b_wrapped);
  return wrap_angle(heading_a + alpha * wrap_angle(heading_b - heading_a));
}

PathErrors path_errors(const RobotPose& pose, const PathDef& path, double progress_hint) {
  const int n_seg = static_cast<int>(path.waypoints.rows()) - 1;
  const Eigen::Vector2d p(pose.x, pose.y);

  int first_seg = 0;
  int last_seg = n_seg - 1;
  if (progress_hint >= 0.0) {
    // Window of +-8 m around the hint (with wraparound on closed paths).
    const double window = 8.0;
    const double lo = progress_hint - window;
    const double hi = progress_hint + window;
    if (!path.closed) {
      first_seg = segment_index(path, std::max(lo, 0.0));
      last_seg = segment_index(path, std::min(hi, path.total_length()));
    }
    // Closed paths scan everything when the window wraps; cheap enough.
    if (path.closed && hi - lo < path.total_length()) {
      first_seg = 0;
      last_seg = n_seg - 1;  // see wrap handling below
    }
  }

  double best_d2 = std::numeric_limits<double>::infinity();
  double best_s = 0.0;
  Eigen::Vector2d best_point = path.waypoints.row(0).transpose();
  Eigen::Vector2d best_tangent(1.0, 0.0);
  const bool windowed = progress_hint >= 0.0;
  for (int i = first_seg; i <= last_seg; ++i) {
    const Eigen::Vector2d a = path.waypoints.row(i).transpose();
    const Eigen::Vector2d b = path.waypoints.row(i + 1).transpose();
    const Eigen::Vector2d ab = b - a;
    const double len2 = ab.squaredNorm();
    double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Eigen::Vector2d proj = a + t * ab;
    const double s_here = path.arc_length(i) + t * std::sqrt(len2);
    if (windowed) {
      double gap = s_here - progress_hint;
      if (path.closed) {
        const double total = path.total_length();
        gap = std::remainder(gap, total);
      }
      if (std::abs(gap) > 8.0) continue;
    }
    const double d2 = (p - proj).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best_s = s_here;
      best_point = proj;
      best_tangent = ab.normalized();
    }
  }
  if (!std::isfinite(best_d2)) {
    // Window missed everything (hint far off); fall back to a global scan.
    return path_errors(pose, path, -1.0);
  }

  PathErrors out;
  const Eigen::Vector2d offset = p - best_point;
  out.lateral = -best_tangent.y() * offset.x() + best_tangent.x() * offset.y();
  out.heading = wrap_angle(pose.heading - path_tangent_heading(path, best_s));
  out.progress = best_s;
  return out;
}

std::array<GpDataset, 3> collect_pose_disturbance_data(
    const std::vector<PathfollowRecord>& log, double timestep) {
  const int len = static_cast<int>(log.size());
  if (len < 3) {
    throw InsufficientDataError("collect_pose_disturbance_data: log length must be >= 3");
  }
  const int rows = len - 2;
  Eigen::MatrixXd queries(rows, 9);
  Eigen::MatrixXd targets(rows, 3);
  for (int k = 1; k <= len - 2; ++k) {
    const RobotPose& prev = log[k - 1].pose;
    const RobotPose& cur = log[k].pose;
    const RobotPose& next = log[k + 1].pose;
    const double dx = cur.x - prev.x;
    const double dy = cur.y - prev.y;
    const double v_est = std::sqrt(dx * dx + dy * dy) / timestep;
    const double omega_est = wrap_angle(cur.heading - prev.heading) / timestep;
    Eigen::VectorXd q(9);
    q << cur.x, cur.y, cur.heading, v_est, omega_est, log[k].v_cmd, log[k].omega_cmd,
        log[k - 1].v_cmd, log[k - 1].omega_cmd;
    queries.row(k - 1) = q.transpose();
    const RobotPose nominal = unicycle_step(cur, log[k].v_cmd, log[k].omega_cmd, timestep);
    targets(k - 1, 0) = next.x - nominal.x;
    targets(k - 1, 1) = next.y - nominal.y;
    targets(k - 1, 2) = wrap_angle(next.heading - nominal.heading);
  }
  std::array<GpDataset, 3> out;
  for (int d = 0; d < 3; ++d) {
    out[d].inputs = queries;
    out[d].targets = targets.col(d);
  }
  return out;
}

std::array<GpDataset, 2> collect_fbl_disturbance_data(
    const std::vector<PathfollowRecord>& log, const PathDef& path, double timestep,
    double target_speed) {
  const int len = static_cast<int>(log.size());
  if (len < 3) {
    throw InsufficientDataError("collect_fbl_disturbance_data: log length must be >= 3");
  }
  const auto [f, g] = fbl_matrices(timestep);

  // Reconstruct the FBL state sequence with a progress hint chain.
  std::vector<Eigen::Vector2d> z(len);
  std::vector<Eigen::Vector2d> vel_est(len, Eigen::Vector2d(target_speed, 0.0));
  double hint = 0.0;  // logs start at the path origin
  for (int k = 0; k < len; ++k) {
    if (k >= 1) {
      const double dx = log[k].pose.x - log[k - 1].pose.x;
      const double dy = log[k].pose.y - log[k - 1].pose.y;
      vel_est[k] =
          Eigen::Vector2d(std::sqrt(dx * dx + dy * dy) / timestep,
                          wrap_angle(log[k].pose.heading - log[k - 1].pose.heading) / timestep);
    }
    const PathErrors err = path_errors(log[k].pose, path, hint);
    hint = err.progress;
    const double v_for_rate = k >= 1 ? vel_est[k](0) : target_speed;
    z[k] = Eigen::Vector2d(err.lateral, v_for_rate * std::sin(err.heading));
  }

  const int rows = len - 2;
  Eigen::MatrixXd queries(rows, 6);
  Eigen::MatrixXd targets(rows, 2);
  for (int k = 1; k <= len - 2; ++k) {
    Eigen::VectorXd q(6);
    q << z[k](0), z[k](1), vel_est[k](0), vel_est[k](1), log[k].u_fbl, log[k - 1].u_fbl;
    queries.row(k - 1) = q.transpose();
    const Eigen::Vector2d nominal = f * z[k] + g * log[k].u_fbl;
    targets.row(k - 1) = (z[k + 1] - nominal).transpose();
  }
  std::array<GpDataset, 2> out;
  for (int d = 0; d < 2; ++d) {
    out[d].inputs = queries;
    out[d].targets = targets.col(d);
  }
  return out;
}

std::pair<Eigen::Matrix2d, Eigen::Vector2d> fbl_matrices(double timestep) {
  if (!(timestep > 0.0)) throw std::invalid_argument("fbl_matrices: timestep must be > 0");
  Eigen::Matrix2d f;
  f << 1.0, timestep, 0.0, 1.0;
  Eigen::Vector2d g(0.5 * timestep * timestep, timestep);
  return {f, g};
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> fbl_batch_matrices(double timestep, int horizon) {
  if (horizon < 1) throw std::invalid_argument("fbl_batch_matrices: horizon must be >= 1");
  const auto [f, g] = fbl_matrices(timestep);
  Eigen::MatrixXd l(2 * horizon, 2);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2 * horizon, horizon);
  Eigen::Matrix2d f_pow = f;
  for (int i = 0; i < horizon; ++i) {
    l.middleRows(2 * i, 2) = f_pow;
    f_pow = f * f_pow;
  }
  for (int i = 0; i < horizon; ++i) {
    Eigen::Vector2d block = g;
    for (int j = i; j >= 0; --j) {
      m.block(2 * i, j, 2, 1) = block;
      block = f * block;
    }
  }
  return {l, m};
}

FblMpcGains make_fblmpc_gains(const Eigen::MatrixXd& m, const Eigen::MatrixXd& q,
                              const Eigen::MatrixXd& r) {
  const Eigen::MatrixXd normal = m.transpose() * q * m + r;
  Eigen::LLT<Eigen::MatrixXd> llt(normal);
  if (llt.info() != Eigen::Success) {
    throw SolverError("fblmpc gains: M^T Q M + R is not positive definite");
  }
  FblMpcGains gains;
  gains.normal_chol = llt.matrixL();
  gains.mtq = m.transpose() * q;
  gains.input_weight = r;
  return gains;
}

Eigen::VectorXd fblmpc_delta_u(const FblMpcGains& gains, const Eigen::MatrixXd& l,
                               const Eigen::VectorXd& y, const Eigen::Vector2d& delta_z,
                               const Eigen::VectorXd& u_prev) {
  const Eigen::VectorXd rhs = gains.mtq * (y + l * delta_z) + gains.input_weight * u_prev;
  Eigen::VectorXd delta = gains.normal_chol.triangularView<Eigen::Lower>().solve(rhs);
  gains.normal_chol.transpose().triangularView<Eigen::Upper>().solveInPlace(delta);
  return -delta;
}

Eigen::VectorXd fblmpc_delta_u(const Eigen::MatrixXd& l, const Eigen::MatrixXd& m,
                               const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                               const Eigen::VectorXd& y, const Eigen::Vector2d& delta_z,
                               const Eigen::VectorXd& u_prev) {
  return fblmpc_delta_u(make_fblmpc_gains(m, q, r), l, y, delta_z, u_prev);
}

double recover_omega(double u_fbl, double v, double heading_error) {
  if (v == 0.0 || std::abs(heading_error) >= std::numbers::pi / 2.0 - 1e-6) {
    throw SingularTransformError("recover_omega: outside validity region");
  }
  return u_fbl / (v * std::cos(heading_error));
}

// ---------------------------------------------------------------------------
// FBL MPC controller

FblMpcController::FblMpcController(const Config& config, const DisturbanceGp* gp_z1,
                                   const DisturbanceGp* gp_z2)
    : config_(config), gp_z1_(gp_z1), gp_z2_(gp_z2) {
  std::tie(f_, g_) = fbl_matrices(config.timestep);
  std::tie(l_, m_) = fbl_batch_matrices(config.timestep, config.horizon);
  const int n = config.horizon;
  q_ = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (int i = 0; i < n; ++i) {
    q_(2 * i, 2 * i) = config.weights.q_lateral;
    q_(2 * i + 1, 2 * i + 1) = config.weights.q_lateral_rate;
  }
  r_ = config.weights.r_fbl * Eigen::MatrixXd::Identity(n, n);
  gains_ = make_fblmpc_gains(m_, q_, r_);
  reset();
}

void FblMpcController::reset() {
  y_ = Eigen::VectorXd::Zero(2 * config_.horizon);
  u_seq_ = Eigen::VectorXd::Zero(config_.horizon);
  prev_z_.setZero();
  prev_u_applied_ = 0.0;
  observed_v_ = config_.target_speed;
  observed_omega_ = 0.0;
  // Deployments start near the path origin; seeding the progress hint
  // there keeps the first lookup off intersecting branches.
  progress_ = 0.0;
  first_ = true;
}

void FblMpcController::observe_actuals(double v_act, double omega_act) {
  observed_v_ = v_act;
  observed_omega_ = omega_act;
}

ControllerOutput FblMpcController::step(const RobotPose& pose, const PathDef& path) {
  const int n = config_.horizon;
  ControllerOutput out;
  out.errors = path_errors(pose, path, progress_);
  progress_ = out.errors.progress;
  out.v_cmd = config_.target_speed;
  out.gp_mean = Eigen::VectorXd::Zero(2);
  out.gp_var = Eigen::VectorXd::Zero(2);

  const Eigen::Vector2d z(out.errors.lateral, observed_v_ * std::sin(out.errors.heading));
  if (first_) {
    for (int i = 0; i < n; ++i) y_.segment<2>(2 * i) = z;
    prev_z_ = z;
    first_ = false;
  }
  const Eigen::Vector2d delta_z = z - prev_z_;

  // GP corrections accumulated along the prediction roll.
  Eigen::VectorXd correction = Eigen::VectorXd::Zero(2 * n);
  if (gp_z1_ != nullptr && gp_z2_ != nullptr) {
    Eigen::Vector2d z_roll = z;
    Eigen::Vector2d offset = Eigen::Vector2d::Zero();
    for (int b = 0; b < n; ++b) {
      Eigen::VectorXd query(6);
      const double u_now = u_seq_(b);
      const double u_before = b == 0 ? prev_u_applied_ : u_seq_(b - 1);
      query << z_roll(0), z_roll(1), observed_v_, observed_omega_, u_now, u_before;
      const GpPrediction d1 = disturbance_predict(*gp_z1_, query);
      const GpPrediction d2 = disturbance_predict(*gp_z2_, query);
      const Eigen::Vector2d d(d1.mean, d2.mean);
      if (b == 0) {
        out.gp_mean = d;
        out.gp_var = Eigen::Vector2d(d1.variance, d2.variance);
      }
      z_roll = f_ * z_roll + g_ * u_now + d;
      offset = f_ * offset + d;
      correction.segment<2>(2 * b) = offset;
    }
  }

  const Eigen::VectorXd delta_u =
      fblmpc_delta_u(gains_, l_, y_ + correction, delta_z, u_seq_);
  u_seq_ += delta_u;
  y_ += l_ * delta_z + m_ * delta_u;
  prev_z_ = z;

  out.u_fbl = u_seq_(0);
  const double v = config_.target_speed;
  if (v == 0.0 || std::abs(out.errors.heading) >= std::numbers::pi / 2.0 - 1e-6) {
    out.fallback = true;
    out.omega_cmd = out.errors.heading > 0.0 ? -config_.omega_max : config_.omega_max;
  } else {
    out.omega_cmd =
        std::clamp(recover_omega(out.u_fbl, v, out.errors.heading), -config_.omega_max,
                   config_.omega_max);
  }
  prev_u_applied_ = out.u_fbl;
  return out;
}

// ---------------------------------------------------------------------------
// NMPC controller

HybridModel make_unicycle_hybrid_model(double timestep, const DisturbanceGp* gp_x,
                                       const DisturbanceGp* gp_y,
                                       const DisturbanceGp* gp_heading) {
  HybridModel model;
  model.state_dim = 7;
  model.input_dim = 2;
  const double t = timestep;
  // The realized-velocity entries hold their last measured values over
  // the horizon: future actuals are unknowable and the training queries
  // carry measured values, so holding keeps predictions on-distribution.
  model.dynamics = [t](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd next(7);
    next(0) = x(0) + t * u(0) * std::cos(x(2));
    next(1) = x(1) + t * u(0) * std::sin(x(2));
    next(2) = x(2) + t * u(1);
    next(3) = x(3);
    next(4) = x(4);
    next(5) = u(0);
    next(6) = u(1);
    return next;
  };
  model.jac_state = [t](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(7, 7);
    j(0, 0) = 1.0;
    j(0, 2) = -t * u(0) * std::sin(x(2));
    j(1, 1) = 1.0;
    j(1, 2) = t * u(0) * std::cos(x(2));
    j(2, 2) = 1.0;
    j(3, 3) = 1.0;
    j(4, 4) = 1.0;
    return j;
  };
  model.jac_input = [t](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    (void)u;
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(7, 2);
    j(0, 0) = t * std::cos(x(2));
    j(1, 0) = t * std::sin(x(2));
    j(2, 1) = t;
    j(5, 0) = 1.0;
    j(6, 1) = 1.0;
    return j;
  };
  if (gp_x != nullptr && gp_y != nullptr && gp_heading != nullptr) {
    model.gp_placement = Eigen::MatrixXd::Zero(7, 3);
    model.gp_placement(0, 0) = 1.0;
    model.gp_placement(1, 1) = 1.0;
    model.gp_placement(2, 2) = 1.0;
    model.gp_dims = {*gp_x, *gp_y, *gp_heading};
    model.process_noise_var = Eigen::VectorXd::Zero(3);
    // Query layout: pose, previous actual velocity, command, previous command.
    model.gp_input_map = {0, 1, 2, 3, 4, 7, 8, 5, 6};
  } else {
    model.gp_placement = Eigen::MatrixXd::Zero(7, 0);
    model.process_noise_var = Eigen::VectorXd::Zero(0);
  }
  return model;
}

NmpcPathController::NmpcPathController(const Config& config, const DisturbanceGp* gp_x,
                                       const DisturbanceGp* gp_y,
                                       const DisturbanceGp* gp_heading)
    : config_(config) {
  model_ = make_unicycle_hybrid_model(config.timestep, gp_x, gp_y, gp_heading);
  Eigen::VectorXd state_diag(7);
  state_diag << config.weights.q_xy, config.weights.q_xy, config.weights.q_heading, 0.0,
      0.0, 0.0, 0.0;
  Eigen::VectorXd input_diag(2);
  input_diag << config.weights.r_v, config.weights.r_omega;
  weights_ = MpcWeights::uniform(state_diag, input_diag, config.horizon);
  reset();
}

void NmpcPathController::reset() {
  u_seq_ = Eigen::MatrixXd::Zero(2, config_.horizon);
  u_seq_.row(0).setConstant(config_.target_speed);
  observed_vel_ = Eigen::Vector2d(config_.target_speed, 0.0);
  prev_cmd_ = Eigen::Vector2d(config_.target_speed, 0.0);
  progress_ = 0.0;
  first_ = true;
}

void NmpcPathController::observe_actuals(double v_act, double omega_act) {
  observed_vel_ = Eigen::Vector2d(v_act, omega_act);
}

ControllerOutput NmpcPathController::step(const RobotPose& pose, const PathDef& path) {
  const int n = config_.horizon;
  ControllerOutput out;
  out.errors = path_errors(pose, path, progress_);
  progress_ = out.errors.progress;

  // Reference resampled from the current progress at the target speed,
  // with the heading reference kept continuous around the current one.
  Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(7, n);
  double theta_prev = pose.heading;
  for (int b = 1; b <= n; ++b) {
    const double s =
        out.errors.progress + config_.target_speed * config_.timestep * b;
    const Eigen::Vector2d point = path_point(path, s);
    const double tangent = path_tangent_heading(path, s);
    const double theta_ref = theta_prev + wrap_angle(tangent - theta_prev);
    ref(0, b - 1) = point.x();
    ref(1, b - 1) = point.y();
    ref(2, b - 1) = theta_ref;
    theta_prev = theta_ref;
  }

  Eigen::VectorXd x_now(7);
  x_now << pose.x, pose.y, pose.heading, observed_vel_(0), observed_vel_(1), prev_cmd_(0),
      prev_cmd_(1);

  if (!first_) {
    // Shift the previous solution for the warm start.
    Eigen::MatrixXd shifted(2, n);
    shifted.leftCols(n - 1) = u_seq_.rightCols(n - 1);
    shifted.col(n - 1) = u_seq_.col(n - 1);
    u_seq_ = shifted;
  }
  first_ = false;

  auto [u0, diag] = gp_nmpc_step(model_, x_now, ref, weights_, u_seq_, config_.options);
  u_seq_ = diag.input_sequence;

  out.v_cmd = std::clamp(u0(0), 0.0, config_.v_max);
  out.omega_cmd = std::clamp(u0(1), -config_.omega_max, config_.omega_max);
  out.converged = diag.converged;
  out.iterations = diag.iterations;
  out.predicted_cost = diag.iteration_costs.empty() ? 0.0 : diag.iteration_costs.back();
  out.iteration_costs = diag.iteration_costs;
  out.iteration_delta_norms = diag.delta_u_norms;
  if (model_.gp_count() > 0) {
    const Eigen::VectorXd q = gp_query(model_, x_now, Eigen::Vector2d(out.v_cmd, out.omega_cmd));
    out.gp_mean = Eigen::VectorXd::Zero(3);
    out.gp_var = Eigen::VectorXd::Zero(3);
    for (int i = 0; i < 3; ++i) {
      const GpPrediction p = disturbance_predict(model_.gp_dims[i], q);
      out.gp_mean(i) = p.mean;
      out.gp_var(i) = p.variance;
    }
  } else {
    out.gp_mean = Eigen::VectorXd::Zero(3);
    out.gp_var = Eigen::VectorXd::Zero(3);
  }
  prev_cmd_ = Eigen::Vector2d(out.v_cmd, out.omega_cmd);
  return out;
}

}  // namespace gpmpc
