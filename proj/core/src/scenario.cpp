#include "gpmpc/scenario.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "gpmpc/errors.hpp"
#include "gpmpc/model_io.hpp"

namespace gpmpc {

namespace {

using nlohmann::json;

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

GpDataset subsample(const GpDataset& data, int max_points) {
  if (data.size() <= max_points) return data;
  GpDataset out;
  out.inputs.resize(max_points, data.dim());
  out.targets.resize(max_points);
  for (int i = 0; i < max_points; ++i) {
    const int src = static_cast<int>(
        std::llround(static_cast<double>(i) * (data.size() - 1) / (max_points - 1)));
    out.inputs.row(i) = data.inputs.row(src);
    out.targets(i) = data.targets(src);
  }
  return out;
}

GpHyperparams data_scaled_init(const GpDataset& data, const GpOptions& options) {
  GpHyperparams h;
  h.signal_std = std::max(options.init_signal_std, 1e-6);
  h.noise_std = std::max(options.init_noise_std, 1e-8);
  h.length_scales.resize(data.dim());
  for (int d = 0; d < data.dim(); ++d) {
    const double mean = data.inputs.col(d).mean();
    const double sd = std::sqrt((data.inputs.col(d).array() - mean).square().sum() /
                                std::max(1, data.size() - 1));
    h.length_scales(d) = std::max(sd, 1e-2) * options.init_length_scale;
  }
  const double target_sd = std::sqrt(
      (data.targets.array() - data.targets.mean()).square().sum() /
      std::max(1, data.size() - 1));
  if (target_sd > 1e-9) h.signal_std = std::max(h.signal_std, target_sd);
  return h;
}

PathDef build_path(const PathfollowScenario& scenario, const std::string& kind_override) {
  const std::string kind = kind_override.empty() ? scenario.path_kind : kind_override;
  if (kind == "straight") {
    return make_straight_path(scenario.path_length, scenario.path_direction,
                              scenario.target_speed);
  }
  if (kind == "circle") return make_circle_path(scenario.path_scale, scenario.target_speed);
  if (kind == "figure_eight") {
    return make_figure_eight_path(scenario.path_scale, scenario.target_speed);
  }
  if (kind == "file") {
    const GpDataset raw = [&] {
      GpDataset d;  // reuse the CSV reader via a plain table
      const CsvTable table = read_csv(scenario.path_file);
      if (table.columns.size() != 2 || table.columns[0] != "x" || table.columns[1] != "y") {
        throw std::runtime_error("path file must have columns x,y");
      }
      d.inputs.resize(table.rows.size(), 2);
      for (std::size_t i = 0; i < table.rows.size(); ++i) {
        d.inputs(static_cast<int>(i), 0) = table.rows[i][0];
        d.inputs(static_cast<int>(i), 1) = table.rows[i][1];
      }
      d.targets = Eigen::VectorXd::Zero(d.inputs.rows());
      return d;
    }();
    return path_from_waypoints(raw.inputs, scenario.target_speed, false);
  }
  throw std::invalid_argument("unknown path kind '" + kind + "'");
}

struct PathfollowEpisode {
  std::vector<PathfollowRecord> records;
  CsvTable steps;
  CsvTable diag;
  double mean_solve_ms = 0.0;
  double max_solve_ms = 0.0;
};

PathfollowEpisode run_pathfollow_episode(const ScenarioConfig& config, const PathDef& path,
                                         ControllerKind controller_kind,
                                         const DisturbanceGp* gp_a, const DisturbanceGp* gp_b,
                                         const DisturbanceGp* gp_c, Rng plant_rng,
                                         bool collection_dither = false) {
  const auto& sc = config.pathfollow;
  const double t = config.timestep;
  const int steps = static_cast<int>(std::llround(config.duration / t));

  const bool is_fbl = controller_kind == ControllerKind::Fblmpc ||
                      controller_kind == ControllerKind::GpFblmpc;
  std::unique_ptr<FblMpcController> fbl;
  std::unique_ptr<NmpcPathController> nmpc;
  if (is_fbl) {
    FblMpcController::Config cc;
    cc.timestep = t;
    cc.horizon = config.horizon;
    cc.weights = sc.weights;
    cc.target_speed = sc.target_speed;
    cc.omega_max = sc.omega_max;
    fbl = std::make_unique<FblMpcController>(cc, gp_a, gp_b);
  } else {
    NmpcPathController::Config cc;
    cc.timestep = t;
    cc.horizon = config.horizon;
    cc.weights = sc.weights;
    cc.target_speed = sc.target_speed;
    cc.v_max = sc.v_max;
    cc.omega_max = sc.omega_max;
    nmpc = std::make_unique<NmpcPathController>(cc, gp_a, gp_b, gp_c);
  }

  RobotPose pose;
  {
    const Eigen::Vector2d start = path_point(path, 0.0);
    const double tangent = path_tangent_heading(path, 0.0);
    pose.x = start.x() - std::sin(tangent) * sc.start_lateral_offset;
    pose.y = start.y() + std::cos(tangent) * sc.start_lateral_offset;
    pose.heading = tangent;
  }

  PathfollowEpisode ep;
  ep.steps.columns = {"step",      "time",      "x",          "y",         "heading",
                      "eps_lateral", "eps_heading", "progress", "v_cmd",    "omega_cmd",
                      "v_act",     "omega_act", "u_fbl",      "fallback",  "converged",
                      "iterations", "gp_mean_0", "gp_mean_1",  "gp_mean_2", "gp_var_0",
                      "gp_var_1",  "gp_var_2",  "dist_x",     "dist_y",    "dist_heading",
                      "cost"};
  ep.diag.columns = {"step", "iteration", "cost", "delta_u_norm"};

  double solve_accum = 0.0;
  for (int k = 0; k <= steps; ++k) {
    if (k == steps) {
      // Terminal row: state only.
      const PathErrors err = path_errors(pose, path, -1.0);
      ep.steps.rows.push_back({static_cast<double>(k), k * t, pose.x, pose.y, pose.heading,
                               err.lateral, err.heading, err.progress, 0, 0, 0, 0, 0, 0, 1,
                               0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
      break;
    }
    const double t0 = now_ms();
    ControllerOutput out = is_fbl ? fbl->step(pose, path) : nmpc->step(pose, path);
    const double solve_ms = now_ms() - t0;
    solve_accum += solve_ms;
    ep.max_solve_ms = std::max(ep.max_solve_ms, solve_ms);

    if (collection_dither) {
      // Deterministic two-tone excitation; ensures the command entries of
      // the disturbance queries cover a usable range and decorrelate from
      // the path position.
      const double time = k * t;
      out.v_cmd = std::max(
          0.1, out.v_cmd + sc.dither_v * (0.6 * std::sin(0.9 * time + 0.7) +
                                          0.4 * std::sin(2.31 * time + 2.4)));
      out.omega_cmd += sc.dither_omega * (0.6 * std::sin(1.13 * time + 1.9) +
                                          0.4 * std::sin(2.71 * time + 0.3));
    }

    PlantStep plant = disturbed_plant_step(pose, out.v_cmd, out.omega_cmd, t, sc.slip,
                                           plant_rng);

    // Realized one-step disturbance in pose coordinates.
    const RobotPose nominal = unicycle_step(pose, out.v_cmd, out.omega_cmd, t);
    const double dist_x = plant.pose.x - nominal.x;
    const double dist_y = plant.pose.y - nominal.y;
    const double dist_heading = wrap_angle(plant.pose.heading - nominal.heading);

    PathfollowRecord rec;
    rec.pose = pose;
    rec.v_cmd = out.v_cmd;
    rec.omega_cmd = out.omega_cmd;
    rec.v_act = plant.v_act;
    rec.omega_act = plant.omega_act;
    rec.u_fbl = out.u_fbl;
    ep.records.push_back(rec);

    const auto mean_at = [&](int i) {
      return i < out.gp_mean.size() ? out.gp_mean(i) : 0.0;
    };
    const auto var_at = [&](int i) { return i < out.gp_var.size() ? out.gp_var(i) : 0.0; };
    ep.steps.rows.push_back({static_cast<double>(k), k * t, pose.x, pose.y, pose.heading,
                             out.errors.lateral, out.errors.heading, out.errors.progress,
                             out.v_cmd, out.omega_cmd, plant.v_act, plant.omega_act,
                             out.u_fbl, out.fallback ? 1.0 : 0.0,
                             out.converged ? 1.0 : 0.0, static_cast<double>(out.iterations),
                             mean_at(0), mean_at(1), mean_at(2), var_at(0), var_at(1),
                             var_at(2), dist_x, dist_y, dist_heading, out.predicted_cost});
    if (out.iteration_costs.empty()) {
      ep.diag.rows.push_back({static_cast<double>(k), 0.0, out.predicted_cost, 0.0});
    } else {
      for (std::size_t i = 0; i < out.iteration_costs.size(); ++i) {
        ep.diag.rows.push_back({static_cast<double>(k), static_cast<double>(i),
                                out.iteration_costs[i], out.iteration_delta_norms[i]});
      }
    }

    // The controller learns the realized velocities from pose differences,
    // matching how the training datasets are built.
    const double dx = plant.pose.x - pose.x;
    const double dy = plant.pose.y - pose.y;
    const double v_est = std::sqrt(dx * dx + dy * dy) / t;
    const double omega_est = wrap_angle(plant.pose.heading - pose.heading) / t;
    if (is_fbl) {
      fbl->observe_actuals(v_est, omega_est);
    } else {
      nmpc->observe_actuals(v_est, omega_est);
    }
    pose = plant.pose;
  }
  ep.mean_solve_ms = steps > 0 ? solve_accum / steps : 0.0;
  return ep;
}

void summarize_pathfollow(const PathfollowEpisode& ep, bool gp_active,
                          std::map<std::string, double>& summary) {
  const auto& rows = ep.steps.rows;
  const int eps_l = ep.steps.column_index("eps_lateral");
  const int eps_h = ep.steps.column_index("eps_heading");
  const int v_act = ep.steps.column_index("v_act");
  const int fallback = ep.steps.column_index("fallback");
  const int converged = ep.steps.column_index("converged");
  double sum_l2 = 0.0, sum_h2 = 0.0, max_l = 0.0, sum_v = 0.0;
  double fallbacks = 0.0, nonconverged = 0.0;
  double dist_sq = 0.0, pred_sq = 0.0;
  const int gm0 = ep.steps.column_index("gp_mean_0");
  const int dx = ep.steps.column_index("dist_x");
  const int n = static_cast<int>(rows.size()) - 1;  // command rows
  for (int k = 0; k < n; ++k) {
    const auto& r = rows[k];
    sum_l2 += r[eps_l] * r[eps_l];
    sum_h2 += r[eps_h] * r[eps_h];
    max_l = std::max(max_l, std::abs(r[eps_l]));
    sum_v += r[v_act];
    fallbacks += r[fallback];
    nonconverged += 1.0 - r[converged];
    for (int d = 0; d < 3; ++d) {
      const double realized = r[dx + d];
      const double predicted = gp_active ? r[gm0 + d] : 0.0;
      dist_sq += realized * realized;
      pred_sq += (realized - predicted) * (realized - predicted);
    }
  }
  summary["rms_eps_lateral"] = std::sqrt(sum_l2 / std::max(1, n));
  summary["rms_eps_heading"] = std::sqrt(sum_h2 / std::max(1, n));
  summary["max_abs_eps_lateral"] = max_l;
  summary["mean_speed"] = sum_v / std::max(1, n);
  summary["fallback_steps"] = fallbacks;
  summary["nonconverged_steps"] = nonconverged;
  summary["disturbance_rms"] = std::sqrt(dist_sq / std::max(1, 3 * n));
  summary["disturbance_residual_rms"] = std::sqrt(pred_sq / std::max(1, 3 * n));
  summary["mean_solve_ms"] = ep.mean_solve_ms;
  summary["max_solve_ms"] = ep.max_solve_ms;
}

RunLog run_pathfollow_scenario(const ScenarioConfig& config,
                               const std::filesystem::path& out_dir) {
  RunLog log;
  log.application = to_string(config.application);
  log.controller = to_string(config.controller);
  log.seed = config.seed;
  const Rng base(config.seed);

  const PathDef deploy_path = build_path(config.pathfollow, "");
  const bool use_gp = controller_uses_gp(config.controller);
  const bool is_fbl = config.controller == ControllerKind::Fblmpc ||
                      config.controller == ControllerKind::GpFblmpc;

  std::vector<DisturbanceGp> gps;
  if (use_gp) {
    // Phase 1: collect with the matching plain controller on the training
    // path (same plant noise stream as deployment, so runs pair exactly).
    const PathDef train_path = build_path(config.pathfollow,
                                          config.pathfollow.train_path_kind);
    const ControllerKind plain = is_fbl ? ControllerKind::Fblmpc : ControllerKind::Nmpc;
    PathfollowEpisode collect = run_pathfollow_episode(config, train_path, plain, nullptr,
                                                       nullptr, nullptr, base.split(20),
                                                       /*collection_dither=*/true);
    // Drop the approach transient: its large residuals would bias the
    // normalization offset the models fall back to far from data.
    const int warmup = static_cast<int>(10.0 / config.timestep);
    if (static_cast<int>(collect.records.size()) > warmup + 60) {
      collect.records.erase(collect.records.begin(), collect.records.begin() + warmup);
    }
    const int dims = is_fbl ? 2 : 3;
    std::vector<GpDataset> datasets;
    if (is_fbl) {
      auto d = collect_fbl_disturbance_data(collect.records, train_path, config.timestep,
                                            config.pathfollow.target_speed);
      datasets.assign(d.begin(), d.end());
    } else {
      auto d = collect_pose_disturbance_data(collect.records, config.timestep);
      datasets.assign(d.begin(), d.end());
    }
    for (int d = 0; d < dims; ++d) {
      const GpDataset capped = subsample(datasets[d], config.gp.max_points);
      const bool sparse = config.controller == ControllerKind::SparseGpMpc;
      SavedModel saved = train_saved_model(capped, data_scaled_init(capped, config.gp),
                                           config.gp.optimize_budget, sparse,
                                           config.gp.inducing_count, config.gp.strategy,
                                           Rng::mix(config.seed, 40 + d),
                                           config.gp.min_scale_fraction);
      if (!out_dir.empty()) {
        save_model(out_dir / ("models/gp_" + std::to_string(d) + ".json"), saved);
        save_dataset_csv(out_dir / ("datasets/gp_" + std::to_string(d) + ".csv"), capped);
      }
      gps.push_back(refit_saved_model(saved));
    }
  }

  PathfollowEpisode deploy = run_pathfollow_episode(
      config, deploy_path, config.controller, gps.size() > 0 ? &gps[0] : nullptr,
      gps.size() > 1 ? &gps[1] : nullptr, gps.size() > 2 ? &gps[2] : nullptr,
      base.split(20));

  summarize_pathfollow(deploy, use_gp, log.summary);
  log.steps = std::move(deploy.steps);
  log.solver_diag = std::move(deploy.diag);
  return log;
}

// ---------------------------------------------------------------------------
// Platoon

struct PlatoonEpisode {
  CsvTable steps;
  CsvTable diag;
  Eigen::VectorXd hv_actual;    // realized HV velocities
  Eigen::VectorXd lead_actual;  // realized trailing-AV velocities
  double mean_solve_ms = 0.0;
  double max_solve_ms = 0.0;
  double min_gap_av_hv = std::numeric_limits<double>::infinity();
  double min_gap_av_av = std::numeric_limits<double>::infinity();
  double hv_pred_sq = 0.0;
  int hv_pred_count = 0;
  bool failed = false;
  int failure_step = -1;
  std::string failure_reason;
};

PlatoonEpisode run_platoon_episode(const ScenarioConfig& config, const ArxModel& arx,
                                   const DisturbanceGp* gp, const Eigen::VectorXd& profile,
                                   Rng driver_rng) {
  const auto& sc = config.platoon;
  const double t = config.timestep;
  const int steps = static_cast<int>(std::llround(config.duration / t));
  const int n_av = sc.av_count;
  PlatoonLimits limits = sc.limits;
  limits.timestep = t;
  limits.horizon = config.horizon;

  PlatoonEpisode ep;
  ep.steps.columns = {"step", "time", "vehicle", "position", "velocity", "acc",
                      "hv_belief_mean", "hv_belief_std", "required_gap", "gap_front",
                      "slack", "soft_fallback", "qp_iterations", "v_ref"};
  ep.diag.columns = {"step", "objective", "kkt_residual", "qp_iterations", "max_slack",
                     "soft_fallback"};

  const double v0 = profile(0);
  PlatoonState state;
  state.av_pos.resize(n_av);
  state.av_vel = Eigen::VectorXd::Constant(n_av, v0);
  for (int i = 0; i < n_av; ++i) state.av_pos(i) = -sc.initial_gap * i;
  state.hv_pos = state.av_pos(n_av - 1) - sc.hv_initial_gap;
  state.hv_vel_hist.setConstant(v0);
  state.lead_vel_hist.setConstant(v0);

  // The driver responds to the trailing AV's realized velocity trace.
  std::vector<double> lead_trace(steps + 1, v0);
  ep.hv_actual.resize(steps + 1);
  ep.lead_actual.resize(steps + 1);
  double hv_vel = v0;
  const auto driver_next = [&](int k) {
    const int src = std::max(0, k - sc.driver.delay_steps);
    double v = sc.driver.gain * lead_trace[src];
    if (sc.driver.noise_std > 0.0) v += sc.driver.noise_std * driver_rng.gaussian();
    return std::clamp(v, 0.0, sc.driver.v_sat);
  };

  PlatoonSolution prev;
  const PlatoonSolution* prev_ptr = nullptr;
  double solve_accum = 0.0;

  for (int k = 0; k <= steps; ++k) {
    ep.hv_actual(k) = hv_vel;
    ep.lead_actual(k) = state.av_vel(n_av - 1);

    // Log all vehicles at time k (controls filled after the solve below).
    const double gap_av_hv = state.av_pos(n_av - 1) - state.hv_pos;
    double min_av_av = std::numeric_limits<double>::infinity();
    for (int i = 1; i < n_av; ++i) {
      min_av_av = std::min(min_av_av, state.av_pos(i - 1) - state.av_pos(i));
    }
    ep.min_gap_av_hv = std::min(ep.min_gap_av_hv, gap_av_hv);
    if (n_av > 1) ep.min_gap_av_av = std::min(ep.min_gap_av_av, min_av_av);

    if (gap_av_hv < limits.min_gap ||
        (n_av > 1 && min_av_av < limits.min_gap - 1e-9)) {
      ep.failed = true;
      ep.failure_step = k;
      ep.failure_reason = "hard distance violation";
    }

    const int ref_index = std::min<int>(k, profile.size() - 1);
    if (k == steps || ep.failed) {
      for (int i = 0; i < n_av; ++i) {
        const double gap_front = i == 0 ? 0.0 : state.av_pos(i - 1) - state.av_pos(i);
        ep.steps.rows.push_back({static_cast<double>(k), k * t, static_cast<double>(i),
                                 state.av_pos(i), state.av_vel(i), 0.0, 0.0, 0.0, 0.0,
                                 gap_front, 0.0, 0.0, 0.0, profile(ref_index)});
      }
      ep.steps.rows.push_back({static_cast<double>(k), k * t, static_cast<double>(n_av),
                               state.hv_pos, hv_vel, 0.0, 0.0, 0.0, 0.0, gap_av_hv, 0.0,
                               0.0, 0.0, profile(ref_index)});
      break;
    }

    Eigen::VectorXd v_ref(limits.horizon);
    for (int b = 0; b < limits.horizon; ++b) {
      v_ref(b) = profile(std::min<int>(k + 1 + b, profile.size() - 1));
    }

    const double t0 = now_ms();
    PlatoonSolution sol = solve_platoon_ocp(state, v_ref, limits, arx, gp, prev_ptr);
    const double solve_ms = now_ms() - t0;
    solve_accum += solve_ms;
    ep.max_solve_ms = std::max(ep.max_solve_ms, solve_ms);

    // One-step HV prediction (nominal + GP correction); the realized
    // value arrives after the driver update below.
    {
      double pred = arx_predict(arx, state.hv_vel_hist, state.lead_vel_hist);
      if (gp != nullptr) {
        pred += disturbance_predict(
                    *gp, Eigen::Vector2d(state.hv_vel_hist(0), state.lead_vel_hist(0)))
                    .mean;
      }
      prev = sol;
      prev_ptr = &prev;
      ep.diag.rows.push_back({static_cast<double>(k), sol.objective, sol.kkt_residual,
                              static_cast<double>(sol.qp_iterations), sol.max_slack,
                              sol.soft_fallback ? 1.0 : 0.0});

      const HvBelief belief1{sol.hv_mean_pred(0), sol.hv_var_pred(0)};
      const TightenedGap req = tightened_distance(state.av_pos(n_av - 1), belief1, limits);
      for (int i = 0; i < n_av; ++i) {
        const double gap_front = i == 0 ? 0.0 : state.av_pos(i - 1) - state.av_pos(i);
        ep.steps.rows.push_back({static_cast<double>(k), k * t, static_cast<double>(i),
                                 state.av_pos(i), state.av_vel(i), sol.acc_first(i), 0.0,
                                 0.0, 0.0, gap_front, sol.max_slack,
                                 sol.soft_fallback ? 1.0 : 0.0,
                                 static_cast<double>(sol.qp_iterations),
                                 profile(ref_index)});
      }
      ep.steps.rows.push_back({static_cast<double>(k), k * t, static_cast<double>(n_av),
                               state.hv_pos, hv_vel, 0.0, sol.hv_mean_pred(0),
                               std::sqrt(std::max(sol.hv_var_pred(0), 0.0)), req.required,
                               gap_av_hv, sol.max_slack, sol.soft_fallback ? 1.0 : 0.0,
                               static_cast<double>(sol.qp_iterations), profile(ref_index)});

      // Advance the plant.
      for (int i = 0; i < n_av; ++i) {
        auto [p_next, v_next] = av_step(state.av_pos(i), state.av_vel(i), sol.acc_first(i), t);
        state.av_pos(i) = p_next;
        state.av_vel(i) = std::clamp(v_next, limits.v_min, limits.v_max);
      }
      state.hv_pos += t * hv_vel;
      lead_trace[k + 1] = state.av_vel(n_av - 1);
      const double hv_next = driver_next(k + 1);
      ep.hv_pred_sq += (pred - hv_next) * (pred - hv_next);
      ++ep.hv_pred_count;
      hv_vel = hv_next;
      for (int lag = 3; lag >= 1; --lag) {
        state.hv_vel_hist(lag) = state.hv_vel_hist(lag - 1);
        state.lead_vel_hist(lag) = state.lead_vel_hist(lag - 1);
      }
      state.hv_vel_hist(0) = hv_vel;
      state.lead_vel_hist(0) = state.av_vel(n_av - 1);
    }
  }
  ep.mean_solve_ms = steps > 0 ? solve_accum / steps : 0.0;
  return ep;
}

RunLog run_platoon_scenario(const ScenarioConfig& config,
                            const std::filesystem::path& out_dir) {
  RunLog log;
  log.application = to_string(config.application);
  log.controller = to_string(config.controller);
  log.seed = config.seed;
  const Rng base(config.seed);
  const auto& sc = config.platoon;

  // Phase 1: collection run with the bootstrap follower model on a rich
  // profile; fits the ARX (and the GP residual model when requested).
  ScenarioConfig collect_cfg = config;
  collect_cfg.controller = ControllerKind::Mpc;
  collect_cfg.duration = sc.collection_duration;
  ArxModel bootstrap;
  bootstrap.lead_coeffs = Eigen::Vector4d(1.0, 0.0, 0.0, 0.0);
  const Eigen::VectorXd collect_profile =
      speed_profile(SpeedProfileKind::WltpLike, config.timestep, sc.collection_duration,
                    Rng::mix(config.seed, 10), sc.profile_params)
          .cwiseMax(sc.collection_v_floor);
  PlatoonEpisode collect = run_platoon_episode(collect_cfg, bootstrap, nullptr,
                                               collect_profile, base.split(12));
  if (collect.failed) {
    throw std::runtime_error("platoon data collection failed at step " +
                             std::to_string(collect.failure_step));
  }
  const ArxModel arx = fit_arx(collect.hv_actual, collect.lead_actual);

  std::optional<DisturbanceGp> gp;
  if (controller_uses_gp(config.controller)) {
    const int n = static_cast<int>(collect.hv_actual.size());
    GpDataset residuals;
    residuals.inputs.resize(n - 4, 2);
    residuals.targets.resize(n - 4);
    for (int k = 4; k < n; ++k) {
      Eigen::Vector4d hv_hist, lead_hist;
      for (int lag = 1; lag <= 4; ++lag) {
        hv_hist(lag - 1) = collect.hv_actual(k - lag);
        lead_hist(lag - 1) = collect.lead_actual(k - lag);
      }
      residuals.inputs(k - 4, 0) = hv_hist(0);
      residuals.inputs(k - 4, 1) = lead_hist(0);
      residuals.targets(k - 4) = collect.hv_actual(k) - arx_predict(arx, hv_hist, lead_hist);
    }
    const GpDataset capped = subsample(residuals, config.gp.max_points);
    const bool sparse = config.controller == ControllerKind::SparseGpMpc;
    SavedModel saved = train_saved_model(capped, data_scaled_init(capped, config.gp),
                                         config.gp.optimize_budget, sparse,
                                         config.gp.inducing_count, config.gp.strategy,
                                         Rng::mix(config.seed, 41),
                                         config.gp.min_scale_fraction);
    if (!out_dir.empty()) {
      save_model(out_dir / "models/hv_gp.json", saved);
      save_dataset_csv(out_dir / "datasets/hv_residuals.csv", capped);
    }
    gp = refit_saved_model(saved);
  }
  if (!out_dir.empty()) {
    json arx_json;
    arx_json["hv_coeffs"] = {arx.hv_coeffs(0), arx.hv_coeffs(1), arx.hv_coeffs(2),
                             arx.hv_coeffs(3)};
    arx_json["lead_coeffs"] = {arx.lead_coeffs(0), arx.lead_coeffs(1), arx.lead_coeffs(2),
                               arx.lead_coeffs(3)};
    write_file(out_dir / "models/arx.json", arx_json.dump(2) + "\n");
  }

  SpeedProfileKind kind = SpeedProfileKind::Constant;
  if (sc.profile == "emergency_brake") kind = SpeedProfileKind::EmergencyBrake;
  if (sc.profile == "wltp_like") kind = SpeedProfileKind::WltpLike;
  const Eigen::VectorXd profile = speed_profile(kind, config.timestep, config.duration,
                                                Rng::mix(config.seed, 11),
                                                sc.profile_params);

  PlatoonEpisode deploy = run_platoon_episode(config, arx, gp ? &*gp : nullptr, profile,
                                              base.split(13));

  log.steps = std::move(deploy.steps);
  log.solver_diag = std::move(deploy.diag);
  log.failed = deploy.failed;
  log.failure_step = deploy.failure_step;
  log.failure_reason = deploy.failure_reason;

  const int vel = log.steps.column_index("velocity");
  const int vehicle = log.steps.column_index("vehicle");
  double leader_speed = 0.0, hv_speed = 0.0;
  int leader_rows = 0, hv_rows = 0;
  double soft_steps = 0.0;
  for (const auto& r : log.solver_diag.rows) soft_steps += r[5];
  for (const auto& r : log.steps.rows) {
    if (static_cast<int>(r[vehicle]) == 0) {
      leader_speed += r[vel];
      ++leader_rows;
    } else if (static_cast<int>(r[vehicle]) == config.platoon.av_count) {
      hv_speed += r[vel];
      ++hv_rows;
    }
  }
  log.summary["min_gap_av_hv"] = deploy.min_gap_av_hv;
  log.summary["min_gap_av_av"] =
      std::isfinite(deploy.min_gap_av_av) ? deploy.min_gap_av_av : 0.0;
  log.summary["mean_speed_leader"] = leader_rows ? leader_speed / leader_rows : 0.0;
  log.summary["mean_speed_hv"] = hv_rows ? hv_speed / hv_rows : 0.0;
  log.summary["hard_violations"] = deploy.failed ? 1.0 : 0.0;
  log.summary["soft_fallback_steps"] = soft_steps;
  log.summary["hv_pred_rmse"] =
      deploy.hv_pred_count > 0 ? std::sqrt(deploy.hv_pred_sq / deploy.hv_pred_count) : 0.0;
  log.summary["mean_solve_ms"] = deploy.mean_solve_ms;
  log.summary["max_solve_ms"] = deploy.max_solve_ms;
  return log;
}

void write_summary_json(const RunLog& log, const std::filesystem::path& path) {
  json j;
  j["application"] = log.application;
  j["controller"] = log.controller;
  j["seed"] = log.seed;
  j["failed"] = log.failed;
  j["failure_step"] = log.failure_step;
  j["failure_reason"] = log.failure_reason;
  json metrics;
  for (const auto& [key, value] : log.summary) metrics[key] = value;
  j["metrics"] = metrics;
  write_file(path, j.dump(2) + "\n");
}

}  // namespace

RunLog run_scenario(const ScenarioConfig& config, const std::filesystem::path& out_dir) {
  if (!controller_valid_for(config.application, config.controller)) {
    throw std::invalid_argument("controller not valid for application");
  }
  RunLog log = config.application == Application::Pathfollow
                   ? run_pathfollow_scenario(config, out_dir)
                   : run_platoon_scenario(config, out_dir);
  if (!out_dir.empty()) {
    write_file(out_dir / "effective_config.json", effective_config_json(config));
    write_csv(out_dir / "steps.csv", log.steps);
    write_csv(out_dir / "solver_diag.csv", log.solver_diag);
    write_summary_json(log, out_dir / "summary.json");
    write_manifest(out_dir);
  }
  return log;
}

RunLog load_run(const std::filesystem::path& run_dir) {
  RunLog log;
  log.steps = read_csv(run_dir / "steps.csv");
  if (std::filesystem::exists(run_dir / "solver_diag.csv")) {
    log.solver_diag = read_csv(run_dir / "solver_diag.csv");
  }
  const json j = json::parse(read_file(run_dir / "summary.json"));
  log.application = j.at("application").get<std::string>();
  log.controller = j.at("controller").get<std::string>();
  log.seed = j.at("seed").get<std::uint64_t>();
  log.failed = j.at("failed").get<bool>();
  log.failure_step = j.at("failure_step").get<int>();
  log.failure_reason = j.at("failure_reason").get<std::string>();
  for (const auto& [key, value] : j.at("metrics").items()) {
    log.summary[key] = value.get<double>();
  }
  return log;
}

void write_manifest(const std::filesystem::path& out_dir) {
  json artifacts = json::array();
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(out_dir)) {
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    json item;
    item["file"] = std::filesystem::relative(file, out_dir).generic_string();
    item["hash"] = content_hash_hex(read_file(file));
    artifacts.push_back(std::move(item));
  }
  json j;
  j["artifacts"] = artifacts;
  write_file(out_dir / "manifest.json", j.dump(2) + "\n");
}

}  // namespace gpmpc
