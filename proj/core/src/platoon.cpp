#include "gpmpc/platoon.hpp"

#include <Eigen/QR>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "gpmpc/errors.hpp"
#include "gpmpc/mpc.hpp"
#include "gpmpc/rng.hpp"

namespace gpmpc {

double arx_predict(const ArxModel& model, const Eigen::Vector4d& hv_hist,
                   const Eigen::Vector4d& lead_hist) {
  return -model.hv_coeffs.dot(hv_hist) + model.lead_coeffs.dot(lead_hist);
}

ArxModel fit_arx(const Eigen::VectorXd& hv_velocity, const Eigen::VectorXd& lead_velocity) {
  if (hv_velocity.size() != lead_velocity.size()) {
    throw std::invalid_argument("fit_arx: series length mismatch");
  }
  const int n = static_cast<int>(hv_velocity.size());
  const int rows = n - 4;
  if (rows < 50) {
    throw InsufficientDataError("fit_arx: needs at least 50 usable samples, got " +
                                std::to_string(std::max(rows, 0)));
  }
  Eigen::MatrixXd phi(rows, 8);
  Eigen::VectorXd target(rows);
  for (int k = 4; k < n; ++k) {
    for (int lag = 1; lag <= 4; ++lag) {
      phi(k - 4, lag - 1) = -hv_velocity(k - lag);
      phi(k - 4, 3 + lag) = lead_velocity(k - lag);
    }
    target(k - 4) = hv_velocity(k);
  }
  // Column-pivoted QR also handles rank-deficient but consistent data
  // (e.g. constant-velocity logs).
  const Eigen::VectorXd coeffs = phi.colPivHouseholderQr().solve(target);
  ArxModel model;
  model.hv_coeffs = coeffs.head<4>();
  model.lead_coeffs = coeffs.tail<4>();
  return model;
}

GpArxPrediction gp_arx_predict(const ArxModel& model, const DisturbanceGp& gp,
                               const Eigen::Vector4d& hv_hist,
                               const Eigen::Vector4d& lead_hist) {
  Eigen::Vector2d query(hv_hist(0), lead_hist(0));
  const GpPrediction p = disturbance_predict(gp, query);
  return {arx_predict(model, hv_hist, lead_hist) + p.mean, p.variance};
}

std::pair<double, double> av_step(double position, double velocity, double acceleration,
                                  double timestep) {
  if (!(timestep > 0.0)) throw std::invalid_argument("av_step: timestep must be > 0");
  return {position + timestep * velocity, velocity + timestep * acceleration};
}

HvBelief hv_belief_step(const HvBelief& belief, double nominal_velocity, double gp_mean,
                        double gp_var, double timestep) {
  if (belief.var < 0.0 || gp_var < 0.0) {
    throw std::invalid_argument("hv_belief_step: negative variance");
  }
  return {belief.mean + timestep * nominal_velocity + timestep * gp_mean,
          belief.var + timestep * timestep * gp_var};
}

void PlatoonLimits::validate() const {
  if (!(min_gap > 0.0)) throw std::invalid_argument("limits: min_gap must be > 0");
  if (!(extra_gap >= 0.0)) throw std::invalid_argument("limits: extra_gap must be >= 0");
  if (!(p_def >= 0.5 && p_def < 1.0)) {
    throw std::invalid_argument("limits: p_def must be in [0.5, 1)");
  }
  if (!(v_min < v_max)) throw std::invalid_argument("limits: v_min must be < v_max");
  if (!(acc_min < 0.0 && acc_max > 0.0)) {
    throw std::invalid_argument("limits: acceleration box must contain 0");
  }
  if (!(timestep > 0.0) || horizon < 1) {
    throw std::invalid_argument("limits: bad timestep or horizon");
  }
  if (!(weight_acc > 0.0)) throw std::invalid_argument("limits: weight_acc must be > 0");
}

void PlatoonState::validate(const PlatoonLimits& limits) const {
  (void)limits;
  if (av_count() < 1) throw std::invalid_argument("platoon state: needs at least one AV");
  if (av_vel.size() != av_pos.size()) {
    throw std::invalid_argument("platoon state: position/velocity size mismatch");
  }
  for (int i = 1; i < av_count(); ++i) {
    if (!(av_pos(i - 1) > av_pos(i))) {
      throw std::invalid_argument("platoon state: AV ordering violated");
    }
  }
  if (!(av_pos(av_count() - 1) > hv_pos)) {
    throw std::invalid_argument("platoon state: HV must trail the platoon");
  }
}

TightenedGap tightened_distance(double last_av_pos, const HvBelief& belief,
                                const PlatoonLimits& limits) {
  const double required = limits.min_gap + limits.extra_gap +
                          inv_norm_cdf(limits.p_def) * std::sqrt(std::max(belief.var, 0.0));
  return {required, last_av_pos - belief.mean >= required};
}

namespace {

/// Scalar affine form c + w . a over the stacked acceleration variables.
struct Affine {
  double c = 0.0;
  Eigen::VectorXd w;

  explicit Affine(int nv) : w(Eigen::VectorXd::Zero(nv)) {}
  Affine(double c0, int nv) : c(c0), w(Eigen::VectorXd::Zero(nv)) {}
};

Affine operator+(const Affine& a, const Affine& b) {
  Affine out(a.c + b.c, static_cast<int>(a.w.size()));
  out.w = a.w + b.w;
  return out;
}

Affine scaled(const Affine& a, double s) {
  Affine out(a.c * s, static_cast<int>(a.w.size()));
  out.w = a.w * s;
  return out;
}

struct QpAssembly {
  QpProblem qp;
  // Affine forms needed to decode the solution.
  std::vector<std::vector<Affine>> av_vel;  // [i][b], b = 0..N
  std::vector<std::vector<Affine>> av_pos;
  std::vector<Affine> hv_vel;               // [b], b = 1..N (index b-1)
  std::vector<Affine> hv_mean;              // belief mean at 1..N
  Eigen::VectorXd hv_var;                   // N
  Eigen::VectorXd gp_mean, gp_var;          // frozen terms, N
  int distance_constraints = 0;             // leading rows of qp.ineq
};

QpAssembly build_platoon_qp(const PlatoonState& state, const Eigen::VectorXd& v_ref,
                            const PlatoonLimits& limits, const ArxModel& arx,
                            const DisturbanceGp* gp, const PlatoonSolution* previous) {
  const int n_av = state.av_count();
  const int n = limits.horizon;
  const double t = limits.timestep;
  const int nv = n_av * n;
  const auto var_index = [n](int vehicle, int step) { return vehicle * n + step; };

  QpAssembly out;
  out.av_vel.assign(n_av, {});
  out.av_pos.assign(n_av, {});
  for (int i = 0; i < n_av; ++i) {
    out.av_vel[i].reserve(n + 1);
    out.av_pos[i].reserve(n + 1);
    out.av_vel[i].emplace_back(state.av_vel(i), nv);
    out.av_pos[i].emplace_back(state.av_pos(i), nv);
    for (int b = 1; b <= n; ++b) {
      Affine v = out.av_vel[i][b - 1];
      v.w(var_index(i, b - 1)) += t;
      out.av_vel[i].push_back(v);
      Affine p = out.av_pos[i][b - 1] + scaled(out.av_vel[i][b - 1], t);
      out.av_pos[i].push_back(p);
    }
  }

  // Nominal HV velocity chain; lags fall back to measured history.
  const int lead = n_av - 1;
  out.hv_vel.reserve(n);
  for (int b = 1; b <= n; ++b) {
    Affine v(nv);
    for (int lag = 1; lag <= 4; ++lag) {
      const int step = b - lag;
      if (step >= 1) {
        v = v + scaled(out.hv_vel[step - 1], -arx.hv_coeffs(lag - 1));
        v = v + scaled(out.av_vel[lead][step], arx.lead_coeffs(lag - 1));
      } else {
        v.c += -arx.hv_coeffs(lag - 1) * state.hv_vel_hist(-step);
        v.c += arx.lead_coeffs(lag - 1) * state.lead_vel_hist(-step);
      }
    }
    out.hv_vel.push_back(v);
  }

  // Frozen GP corrections. Queries for the first two belief steps are at
  // measured velocities; later steps reuse the previous solution's
  // predicted trajectory (constant-velocity rollout on a cold start).
  out.gp_mean = Eigen::VectorXd::Zero(n);
  out.gp_var = Eigen::VectorXd::Zero(n);
  if (gp != nullptr) {
    Eigen::MatrixXd queries(n, 2);
    for (int b = 0; b < n; ++b) {
      double q_hv = state.hv_vel_hist(0);
      double q_lead = state.lead_vel_hist(0);
      if (b == 0) {
        q_hv = state.hv_vel_hist(1);
        q_lead = state.lead_vel_hist(1);
      } else if (b == 1) {
        q_hv = state.hv_vel_hist(0);
        q_lead = state.lead_vel_hist(0);
      } else if (previous != nullptr) {
        if (b - 2 < previous->hv_vel_pred.size()) q_hv = previous->hv_vel_pred(b - 2);
        if (b < previous->av_vel_pred.cols()) q_lead = previous->av_vel_pred(lead, b);
      }
      queries(b, 0) = q_hv;
      queries(b, 1) = q_lead;
    }
    auto [means, vars] = disturbance_predict_batch(*gp, queries);
    out.gp_mean = means;
    out.gp_var = vars;
  }

  // Belief recursion over the horizon from the measured HV position.
  out.hv_mean.reserve(n);
  out.hv_var = Eigen::VectorXd::Zero(n);
  {
    Affine mean(state.hv_pos, nv);
    double var = 0.0;
    for (int b = 0; b < n; ++b) {
      const Affine v_nom =
          b == 0 ? Affine(state.hv_vel_hist(0), nv) : out.hv_vel[b - 1];
      mean = mean + scaled(v_nom, t);
      mean.c += t * out.gp_mean(b);
      var += t * t * out.gp_var(b);
      out.hv_mean.push_back(mean);
      out.hv_var(b) = var;
    }
  }

  // Quadratic cost: 1/2 a^T H a + g^T a (plus a constant dropped here).
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(nv, nv);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(nv);
  for (int i = 0; i < nv; ++i) hess(i, i) += 2.0 * limits.weight_acc;
  const auto add_square = [&](const Affine& term, double weight) {
    hess += 2.0 * weight * term.w * term.w.transpose();
    grad += 2.0 * weight * term.c * term.w;
  };
  for (int b = 1; b <= n; ++b) {
    Affine track = out.av_vel[0][b];
    track.c -= v_ref(std::min<int>(b - 1, v_ref.size() - 1));
    add_square(track, limits.weight_ref);
    for (int i = 1; i < n_av; ++i) {
      Affine coh = out.av_vel[i][b] + scaled(out.av_vel[i - 1][b], -1.0);
      add_square(coh, limits.weight_coh);
    }
  }

  // Constraints, distance rows first so slack decoration stays simple.
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> bounds;
  const double quantile = inv_norm_cdf(limits.p_def);
  for (int b = 1; b <= n; ++b) {
    for (int i = 1; i < n_av; ++i) {
      // p_{i-1} - p_i >= min_gap
      const Affine gap = out.av_pos[i - 1][b] + scaled(out.av_pos[i][b], -1.0);
      rows.push_back(-gap.w);
      bounds.push_back(gap.c - limits.min_gap);
    }
    const Affine hv_gap = out.av_pos[n_av - 1][b] + scaled(out.hv_mean[b - 1], -1.0);
    const double required =
        limits.min_gap + limits.extra_gap + quantile * std::sqrt(out.hv_var(b - 1));
    rows.push_back(-hv_gap.w);
    bounds.push_back(hv_gap.c - required);
  }
  out.distance_constraints = static_cast<int>(rows.size());
  for (int i = 0; i < n_av; ++i) {
    for (int b = 1; b <= n; ++b) {
      rows.push_back(out.av_vel[i][b].w);
      bounds.push_back(limits.v_max - out.av_vel[i][b].c);
      rows.push_back(-out.av_vel[i][b].w);
      bounds.push_back(out.av_vel[i][b].c - limits.v_min);
    }
  }
  for (int j = 0; j < nv; ++j) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(nv);
    e(j) = 1.0;
    rows.push_back(e);
    bounds.push_back(limits.acc_max);
    rows.push_back(-e);
    bounds.push_back(-limits.acc_min);
  }

  out.qp.hessian = hess;
  out.qp.gradient = grad;
  out.qp.ineq.resize(static_cast<int>(rows.size()), nv);
  out.qp.bounds.resize(static_cast<int>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.qp.ineq.row(static_cast<int>(r)) = rows[r].transpose();
    out.qp.bounds(static_cast<int>(r)) = bounds[r];
  }
  return out;
}

/// Distance constraints soften with quadratic slack penalties; boxes
/// stay hard (always satisfiable from a valid state).
QpProblem soften_distance_constraints(const QpProblem& hard, int distance_rows,
                                      double slack_weight) {
  const int nv = static_cast<int>(hard.hessian.rows());
  const int m = static_cast<int>(hard.ineq.rows());
  const int ns = distance_rows;
  QpProblem soft;
  soft.hessian = Eigen::MatrixXd::Zero(nv + ns, nv + ns);
  soft.hessian.topLeftCorner(nv, nv) = hard.hessian;
  soft.hessian.bottomRightCorner(ns, ns) =
      2.0 * slack_weight * Eigen::MatrixXd::Identity(ns, ns);
  soft.gradient = Eigen::VectorXd::Zero(nv + ns);
  soft.gradient.head(nv) = hard.gradient;
  soft.ineq = Eigen::MatrixXd::Zero(m + ns, nv + ns);
  soft.ineq.topLeftCorner(m, nv) = hard.ineq;
  soft.bounds.resize(m + ns);
  soft.bounds.head(m) = hard.bounds;
  for (int j = 0; j < ns; ++j) {
    soft.ineq(j, nv + j) = -1.0;           // gap + slack >= bound
    soft.ineq(m + j, nv + j) = -1.0;       // slack >= 0
    soft.bounds(m + j) = 0.0;
  }
  return soft;
}

}  // namespace

PlatoonQp platoon_qp_data(const PlatoonState& state, const Eigen::VectorXd& v_ref,
                          const PlatoonLimits& limits, const ArxModel& arx,
                          const DisturbanceGp* gp, const PlatoonSolution* previous) {
  limits.validate();
  state.validate(limits);
  QpAssembly assembly = build_platoon_qp(state, v_ref, limits, arx, gp, previous);
  PlatoonQp out;
  out.qp = std::move(assembly.qp);
  out.distance_constraints = assembly.distance_constraints;
  out.gp_mean = std::move(assembly.gp_mean);
  out.gp_var = std::move(assembly.gp_var);
  return out;
}

PlatoonSolution solve_platoon_ocp(const PlatoonState& state, const Eigen::VectorXd& v_ref,
                                  const PlatoonLimits& limits, const ArxModel& arx,
                                  const DisturbanceGp* gp,
                                  const PlatoonSolution* previous) {
  limits.validate();
  state.validate(limits);
  if (v_ref.size() < 1) throw std::invalid_argument("solve_platoon_ocp: empty reference");

  QpAssembly assembly = build_platoon_qp(state, v_ref, limits, arx, gp, previous);
  const int n_av = state.av_count();
  const int n = limits.horizon;
  const int nv = n_av * n;

  PlatoonSolution sol;
  QpSolution qp = solve_qp(assembly.qp);
  if (qp.status != QpStatus::Optimal) {
    const QpProblem soft =
        soften_distance_constraints(assembly.qp, assembly.distance_constraints, 1e6);
    QpSolution soft_sol = solve_qp(soft);
    if (soft_sol.status != QpStatus::Optimal) {
      throw SolverError("solve_platoon_ocp: soft-constrained QP failed");
    }
    sol.soft_fallback = true;
    sol.max_slack = soft_sol.x.tail(assembly.distance_constraints).cwiseAbs().maxCoeff();
    qp = std::move(soft_sol);
  }

  const Eigen::VectorXd acc = qp.x.head(nv);
  sol.acc_seq.resize(n_av, n);
  for (int i = 0; i < n_av; ++i) {
    for (int b = 0; b < n; ++b) sol.acc_seq(i, b) = acc(i * n + b);
  }
  sol.acc_first = sol.acc_seq.col(0);

  const auto eval = [&](const Affine& a) { return a.c + a.w.dot(acc); };
  sol.av_vel_pred.resize(n_av, n + 1);
  sol.av_pos_pred.resize(n_av, n + 1);
  for (int i = 0; i < n_av; ++i) {
    for (int b = 0; b <= n; ++b) {
      sol.av_vel_pred(i, b) = eval(assembly.av_vel[i][b]);
      sol.av_pos_pred(i, b) = eval(assembly.av_pos[i][b]);
    }
  }
  sol.hv_vel_pred.resize(n);
  sol.hv_mean_pred.resize(n);
  for (int b = 0; b < n; ++b) {
    sol.hv_vel_pred(b) = eval(assembly.hv_vel[b]);
    sol.hv_mean_pred(b) = eval(assembly.hv_mean[b]);
  }
  sol.hv_var_pred = assembly.hv_var;
  sol.gp_mean_used = assembly.gp_mean;
  sol.gp_var_used = assembly.gp_var;
  sol.objective = qp.objective;
  sol.kkt_residual = qp.kkt_residual;
  sol.qp_iterations = qp.iterations;
  return sol;
}

Eigen::VectorXd synth_hv_driver(const Eigen::VectorXd& lead_velocity,
                                const HvDriverParams& params, std::uint64_t seed) {
  if (params.delay_steps < 0) throw std::invalid_argument("synth_hv_driver: bad delay");
  Rng rng(seed);
  const int n = static_cast<int>(lead_velocity.size());
  Eigen::VectorXd hv(n);
  for (int k = 0; k < n; ++k) {
    const int src = std::max(0, k - params.delay_steps);
    double v = params.gain * lead_velocity(src);
    if (params.noise_std > 0.0) v += params.noise_std * rng.gaussian();
    hv(k) = std::clamp(v, 0.0, params.v_sat);
  }
  return hv;
}

Eigen::VectorXd speed_profile(SpeedProfileKind kind, double timestep, double duration,
                              std::uint64_t seed, const SpeedProfileParams& params) {
  if (!(duration > 0.0) || !(timestep > 0.0)) {
    throw std::invalid_argument("speed_profile: duration and timestep must be > 0");
  }
  const int n = static_cast<int>(std::floor(duration / timestep)) + 1;
  Eigen::VectorXd v(n);
  switch (kind) {
    case SpeedProfileKind::Constant:
      v.setConstant(params.v_cruise);
      break;
    case SpeedProfileKind::EmergencyBrake: {
      const double t_brake = 0.4 * duration;
      const double stop_dur = params.v_cruise / params.brake_decel;
      const double t_zero = t_brake + stop_dur;
      const double t_resume = t_zero + std::max(2.0, 0.1 * duration);
      for (int k = 0; k < n; ++k) {
        const double t = k * timestep;
        if (t < t_brake) {
          v(k) = params.v_cruise;
        } else if (t < t_zero) {
          v(k) = std::max(0.0, params.v_cruise - params.brake_decel * (t - t_brake));
        } else if (t < t_resume) {
          v(k) = 0.0;
        } else {
          v(k) = std::min(params.v_cruise, 0.5 * params.acc_max * (t - t_resume));
        }
      }
      break;
    }
    case SpeedProfileKind::WltpLike: {
      Rng rng(seed);
      double current = 0.0;
      double target = 0.3 * params.v_max;
      int hold = 0;
      const double ramp = 0.8 * params.acc_max * timestep;
      for (int k = 0; k < n; ++k) {
        if (hold <= 0) {
          // Alternate urban / extra-urban targets with occasional stops.
          const double pick = rng.uniform();
          if (pick < 0.15) {
            target = 0.0;
          } else if (pick < 0.6) {
            target = (0.2 + 0.4 * rng.uniform()) * params.v_max;
          } else {
            target = (0.55 + 0.45 * rng.uniform()) * params.v_max;
          }
          hold = rng.uniform_int(40, 140);
        }
        --hold;
        const double delta = std::clamp(target - current, -ramp, ramp);
        current = std::clamp(current + delta, 0.0, params.v_max);
        v(k) = current;
      }
      break;
    }
  }
  return v;
}

}  // namespace gpmpc
