#include <json.hpp>

#include "gpmpc/scenario.hpp"

namespace gpmpc {

namespace {

using nlohmann::json;

struct Checker {
  std::vector<ConfigIssue>& issues;

  void unknown_keys(const json& j, const std::string& where,
                    std::initializer_list<const char*> allowed) {
    if (!j.is_object()) {
      issues.push_back({where, "expected an object"});
      return;
    }
    for (const auto& [key, value] : j.items()) {
      (void)value;
      bool ok = false;
      for (const char* a : allowed) {
        if (key == a) {
          ok = true;
          break;
        }
      }
      if (!ok) issues.push_back({where + "/" + key, "unknown key"});
    }
  }

  template <typename T>
  void read(const json& j, const std::string& where, const char* key, T& out,
            bool required = false) {
    if (!j.is_object() || !j.contains(key)) {
      if (required) issues.push_back({where + "/" + key, "missing required field"});
      return;
    }
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception&) {
      issues.push_back({where + "/" + key, "wrong type"});
    }
  }

  void require_positive(double value, const std::string& where) {
    if (!(value > 0.0)) issues.push_back({where, "must be > 0"});
  }
};

}  // namespace

std::string to_string(Application application) {
  return application == Application::Pathfollow ? "pathfollow" : "platoon";
}

std::string to_string(ControllerKind controller) {
  switch (controller) {
    case ControllerKind::Nmpc: return "nmpc";
    case ControllerKind::GpNmpc: return "gp-nmpc";
    case ControllerKind::Fblmpc: return "fblmpc";
    case ControllerKind::GpFblmpc: return "gp-fblmpc";
    case ControllerKind::Mpc: return "mpc";
    case ControllerKind::GpMpc: return "gp-mpc";
    case ControllerKind::SparseGpMpc: return "sparse-gp-mpc";
  }
  return "?";
}

bool controller_uses_gp(ControllerKind controller) {
  return controller == ControllerKind::GpNmpc || controller == ControllerKind::GpFblmpc ||
         controller == ControllerKind::GpMpc || controller == ControllerKind::SparseGpMpc;
}

bool controller_valid_for(Application application, ControllerKind controller) {
  if (application == Application::Pathfollow) {
    return controller == ControllerKind::Nmpc || controller == ControllerKind::GpNmpc ||
           controller == ControllerKind::Fblmpc || controller == ControllerKind::GpFblmpc;
  }
  return controller == ControllerKind::Mpc || controller == ControllerKind::GpMpc ||
         controller == ControllerKind::SparseGpMpc;
}

ConfigParse validate_config_text(const std::string& text) {
  ConfigParse out;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    out.issues.push_back({"/", std::string("parse error: ") + e.what()});
    return out;
  }
  Checker check{out.issues};
  ScenarioConfig cfg;

  check.unknown_keys(j, "", {"application", "controller", "seed", "duration", "timestep",
                             "horizon", "gp", "pathfollow", "platoon"});

  std::string application = "pathfollow";
  std::string controller;
  check.read(j, "", "application", application);
  if (application == "pathfollow") {
    cfg.application = Application::Pathfollow;
    cfg.controller = ControllerKind::Fblmpc;
  } else if (application == "platoon") {
    cfg.application = Application::Platoon;
    cfg.controller = ControllerKind::Mpc;
  } else {
    out.issues.push_back({"/application", "must be 'pathfollow' or 'platoon'"});
  }
  check.read(j, "", "controller", controller);
  if (!controller.empty()) {
    bool found = false;
    for (ControllerKind kind :
         {ControllerKind::Nmpc, ControllerKind::GpNmpc, ControllerKind::Fblmpc,
          ControllerKind::GpFblmpc, ControllerKind::Mpc, ControllerKind::GpMpc,
          ControllerKind::SparseGpMpc}) {
      if (to_string(kind) == controller) {
        cfg.controller = kind;
        found = true;
        break;
      }
    }
    if (!found) {
      out.issues.push_back({"/controller", "unknown controller '" + controller + "'"});
    } else if (!controller_valid_for(cfg.application, cfg.controller)) {
      out.issues.push_back({"/controller", "controller '" + controller +
                                               "' is not valid for application '" +
                                               application + "'"});
    }
  }

  if (!j.contains("seed")) {
    out.issues.push_back({"/seed", "missing required field 'seed'"});
  } else {
    check.read(j, "", "seed", cfg.seed, true);
  }
  check.read(j, "", "duration", cfg.duration);
  check.read(j, "", "timestep", cfg.timestep);
  check.read(j, "", "horizon", cfg.horizon);
  check.require_positive(cfg.duration, "/duration");
  check.require_positive(cfg.timestep, "/timestep");
  if (cfg.horizon < 1) out.issues.push_back({"/horizon", "must be >= 1"});

  if (j.contains("gp")) {
    const json& g = j["gp"];
    check.unknown_keys(g, "/gp",
                       {"inducing_count", "strategy", "optimize_budget", "max_points",
                        "init_signal_std", "init_length_scale", "init_noise_std",
                        "min_scale_fraction"});
    check.read(g, "/gp", "inducing_count", cfg.gp.inducing_count);
    check.read(g, "/gp", "optimize_budget", cfg.gp.optimize_budget);
    check.read(g, "/gp", "max_points", cfg.gp.max_points);
    check.read(g, "/gp", "init_signal_std", cfg.gp.init_signal_std);
    check.read(g, "/gp", "init_length_scale", cfg.gp.init_length_scale);
    check.read(g, "/gp", "init_noise_std", cfg.gp.init_noise_std);
    check.read(g, "/gp", "min_scale_fraction", cfg.gp.min_scale_fraction);
    std::string strategy;
    check.read(g, "/gp", "strategy", strategy);
    if (!strategy.empty()) {
      if (strategy == "subset-random") {
        cfg.gp.strategy = InducingStrategy::SubsetRandom;
      } else if (strategy == "kmeans-like") {
        cfg.gp.strategy = InducingStrategy::KMeansLike;
      } else if (strategy == "greedy-variance") {
        cfg.gp.strategy = InducingStrategy::GreedyVariance;
      } else {
        out.issues.push_back({"/gp/strategy", "unknown strategy '" + strategy + "'"});
      }
    }
    if (cfg.gp.inducing_count < 1) out.issues.push_back({"/gp/inducing_count", "must be >= 1"});
  }

  if (j.contains("pathfollow")) {
    const json& p = j["pathfollow"];
    check.unknown_keys(p, "/pathfollow",
                       {"path", "path_file", "path_scale", "path_direction", "path_length",
                        "target_speed", "start_lateral_offset", "slip", "weights", "v_max",
                        "omega_max", "train_path"});
    check.read(p, "/pathfollow", "path", cfg.pathfollow.path_kind);
    check.read(p, "/pathfollow", "path_file", cfg.pathfollow.path_file);
    check.read(p, "/pathfollow", "path_scale", cfg.pathfollow.path_scale);
    check.read(p, "/pathfollow", "path_direction", cfg.pathfollow.path_direction);
    check.read(p, "/pathfollow", "path_length", cfg.pathfollow.path_length);
    check.read(p, "/pathfollow", "target_speed", cfg.pathfollow.target_speed);
    check.read(p, "/pathfollow", "start_lateral_offset", cfg.pathfollow.start_lateral_offset);
    check.read(p, "/pathfollow", "v_max", cfg.pathfollow.v_max);
    check.read(p, "/pathfollow", "omega_max", cfg.pathfollow.omega_max);
    check.read(p, "/pathfollow", "train_path", cfg.pathfollow.train_path_kind);
    const bool known_kind =
        cfg.pathfollow.path_kind == "straight" || cfg.pathfollow.path_kind == "circle" ||
        cfg.pathfollow.path_kind == "figure_eight" || cfg.pathfollow.path_kind == "file";
    if (!known_kind) {
      out.issues.push_back({"/pathfollow/path", "unknown path kind"});
    }
    if (cfg.pathfollow.path_kind == "file") {
      if (cfg.pathfollow.path_file.empty()) {
        out.issues.push_back({"/pathfollow/path_file", "required for path kind 'file'"});
      } else if (!std::filesystem::exists(cfg.pathfollow.path_file)) {
        out.issues.push_back(
            {"/pathfollow/path_file", "file not found: " + cfg.pathfollow.path_file});
      }
    }
    check.require_positive(cfg.pathfollow.target_speed, "/pathfollow/target_speed");
    if (p.contains("slip")) {
      const json& s = p["slip"];
      check.unknown_keys(s, "/pathfollow/slip",
                         {"gain_v", "gain_omega", "bias_v", "bias_omega", "noise_std_v",
                          "noise_std_omega"});
      check.read(s, "/pathfollow/slip", "gain_v", cfg.pathfollow.slip.gain_v);
      check.read(s, "/pathfollow/slip", "gain_omega", cfg.pathfollow.slip.gain_omega);
      check.read(s, "/pathfollow/slip", "bias_v", cfg.pathfollow.slip.bias_v);
      check.read(s, "/pathfollow/slip", "bias_omega", cfg.pathfollow.slip.bias_omega);
      check.read(s, "/pathfollow/slip", "noise_std_v", cfg.pathfollow.slip.noise_std_v);
      check.read(s, "/pathfollow/slip", "noise_std_omega",
                 cfg.pathfollow.slip.noise_std_omega);
    }
    if (p.contains("weights")) {
      const json& w = p["weights"];
      check.unknown_keys(w, "/pathfollow/weights",
                         {"q_xy", "q_heading", "r_v", "r_omega", "q_lateral",
                          "q_lateral_rate", "r_fbl"});
      check.read(w, "/pathfollow/weights", "q_xy", cfg.pathfollow.weights.q_xy);
      check.read(w, "/pathfollow/weights", "q_heading", cfg.pathfollow.weights.q_heading);
      check.read(w, "/pathfollow/weights", "r_v", cfg.pathfollow.weights.r_v);
      check.read(w, "/pathfollow/weights", "r_omega", cfg.pathfollow.weights.r_omega);
      check.read(w, "/pathfollow/weights", "q_lateral", cfg.pathfollow.weights.q_lateral);
      check.read(w, "/pathfollow/weights", "q_lateral_rate",
                 cfg.pathfollow.weights.q_lateral_rate);
      check.read(w, "/pathfollow/weights", "r_fbl", cfg.pathfollow.weights.r_fbl);
    }
  }

  if (j.contains("platoon")) {
    const json& p = j["platoon"];
    check.unknown_keys(p, "/platoon",
                       {"av_count", "profile", "profile_params", "limits", "driver",
                        "initial_gap", "hv_initial_gap", "collection_duration",
                        "collection_v_floor"});
    check.read(p, "/platoon", "av_count", cfg.platoon.av_count);
    check.read(p, "/platoon", "profile", cfg.platoon.profile);
    check.read(p, "/platoon", "initial_gap", cfg.platoon.initial_gap);
    check.read(p, "/platoon", "hv_initial_gap", cfg.platoon.hv_initial_gap);
    check.read(p, "/platoon", "collection_duration", cfg.platoon.collection_duration);
    check.read(p, "/platoon", "collection_v_floor", cfg.platoon.collection_v_floor);
    if (cfg.platoon.av_count < 1) out.issues.push_back({"/platoon/av_count", "must be >= 1"});
    if (cfg.platoon.profile != "constant" && cfg.platoon.profile != "emergency_brake" &&
        cfg.platoon.profile != "wltp_like") {
      out.issues.push_back({"/platoon/profile", "unknown profile kind"});
    }
    if (p.contains("profile_params")) {
      const json& pp = p["profile_params"];
      check.unknown_keys(pp, "/platoon/profile_params",
                         {"v_cruise", "v_max", "acc_max", "brake_decel"});
      check.read(pp, "/platoon/profile_params", "v_cruise",
                 cfg.platoon.profile_params.v_cruise);
      check.read(pp, "/platoon/profile_params", "v_max", cfg.platoon.profile_params.v_max);
      check.read(pp, "/platoon/profile_params", "acc_max",
                 cfg.platoon.profile_params.acc_max);
      check.read(pp, "/platoon/profile_params", "brake_decel",
                 cfg.platoon.profile_params.brake_decel);
    }
    if (p.contains("limits")) {
      const json& l = p["limits"];
      check.unknown_keys(l, "/platoon/limits",
                         {"min_gap", "extra_gap", "p_def", "v_min", "v_max", "acc_min",
                          "acc_max", "weight_acc", "weight_ref", "weight_coh"});
      check.read(l, "/platoon/limits", "min_gap", cfg.platoon.limits.min_gap);
      check.read(l, "/platoon/limits", "extra_gap", cfg.platoon.limits.extra_gap);
      check.read(l, "/platoon/limits", "p_def", cfg.platoon.limits.p_def);
      check.read(l, "/platoon/limits", "v_min", cfg.platoon.limits.v_min);
      check.read(l, "/platoon/limits", "v_max", cfg.platoon.limits.v_max);
      check.read(l, "/platoon/limits", "acc_min", cfg.platoon.limits.acc_min);
      check.read(l, "/platoon/limits", "acc_max", cfg.platoon.limits.acc_max);
      check.read(l, "/platoon/limits", "weight_acc", cfg.platoon.limits.weight_acc);
      check.read(l, "/platoon/limits", "weight_ref", cfg.platoon.limits.weight_ref);
      check.read(l, "/platoon/limits", "weight_coh", cfg.platoon.limits.weight_coh);
      try {
        cfg.platoon.limits.validate();
      } catch (const std::exception& e) {
        out.issues.push_back({"/platoon/limits", e.what()});
      }
    }
    if (p.contains("driver")) {
      const json& d = p["driver"];
      check.unknown_keys(d, "/platoon/driver", {"delay_steps", "gain", "noise_std", "v_sat"});
      check.read(d, "/platoon/driver", "delay_steps", cfg.platoon.driver.delay_steps);
      check.read(d, "/platoon/driver", "gain", cfg.platoon.driver.gain);
      check.read(d, "/platoon/driver", "noise_std", cfg.platoon.driver.noise_std);
      check.read(d, "/platoon/driver", "v_sat", cfg.platoon.driver.v_sat);
    }
  }

  // Horizon and timestep flow into the platoon limits.
  cfg.platoon.limits.horizon = cfg.horizon;
  cfg.platoon.limits.timestep = cfg.timestep;

  if (out.issues.empty()) out.config = cfg;
  return out;
}

ConfigParse validate_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    ConfigParse out;
    out.issues.push_back({"/", e.what()});
    return out;
  }
  return validate_config_text(text);
}

std::string effective_config_json(const ScenarioConfig& config) {
  nlohmann::json j;
  j["application"] = to_string(config.application);
  j["controller"] = to_string(config.controller);
  j["seed"] = config.seed;
  j["duration"] = config.duration;
  j["timestep"] = config.timestep;
  j["horizon"] = config.horizon;
  const char* strategy = config.gp.strategy == InducingStrategy::SubsetRandom
                             ? "subset-random"
                             : config.gp.strategy == InducingStrategy::KMeansLike
                                   ? "kmeans-like"
                                   : "greedy-variance";
  j["gp"] = {{"inducing_count", config.gp.inducing_count},
             {"strategy", strategy},
             {"optimize_budget", config.gp.optimize_budget},
             {"max_points", config.gp.max_points},
             {"init_signal_std", config.gp.init_signal_std},
             {"init_length_scale", config.gp.init_length_scale},
             {"init_noise_std", config.gp.init_noise_std},
             {"min_scale_fraction", config.gp.min_scale_fraction}};
  if (config.application == Application::Pathfollow) {
    const auto& p = config.pathfollow;
    j["pathfollow"] = {
        {"path", p.path_kind},
        {"path_file", p.path_file},
        {"path_scale", p.path_scale},
        {"path_direction", p.path_direction},
        {"path_length", p.path_length},
        {"target_speed", p.target_speed},
        {"start_lateral_offset", p.start_lateral_offset},
        {"v_max", p.v_max},
        {"omega_max", p.omega_max},
        {"train_path", p.train_path_kind},
        {"slip",
         {{"gain_v", p.slip.gain_v},
          {"gain_omega", p.slip.gain_omega},
          {"bias_v", p.slip.bias_v},
          {"bias_omega", p.slip.bias_omega},
          {"noise_std_v", p.slip.noise_std_v},
          {"noise_std_omega", p.slip.noise_std_omega}}},
        {"weights",
         {{"q_xy", p.weights.q_xy},
          {"q_heading", p.weights.q_heading},
          {"r_v", p.weights.r_v},
          {"r_omega", p.weights.r_omega},
          {"q_lateral", p.weights.q_lateral},
          {"q_lateral_rate", p.weights.q_lateral_rate},
          {"r_fbl", p.weights.r_fbl}}}};
  } else {
    const auto& p = config.platoon;
    j["platoon"] = {
        {"av_count", p.av_count},
        {"profile", p.profile},
        {"initial_gap", p.initial_gap},
        {"hv_initial_gap", p.hv_initial_gap},
        {"collection_duration", p.collection_duration},
        {"collection_v_floor", p.collection_v_floor},
        {"profile_params",
         {{"v_cruise", p.profile_params.v_cruise},
          {"v_max", p.profile_params.v_max},
          {"acc_max", p.profile_params.acc_max},
          {"brake_decel", p.profile_params.brake_decel}}},
        {"limits",
         {{"min_gap", p.limits.min_gap},
          {"extra_gap", p.limits.extra_gap},
          {"p_def", p.limits.p_def},
          {"v_min", p.limits.v_min},
          {"v_max", p.limits.v_max},
          {"acc_min", p.limits.acc_min},
          {"acc_max", p.limits.acc_max},
          {"weight_acc", p.limits.weight_acc},
          {"weight_ref", p.limits.weight_ref},
          {"weight_coh", p.limits.weight_coh}}},
        {"driver",
         {{"delay_steps", p.driver.delay_steps},
          {"gain", p.driver.gain},
          {"noise_std", p.driver.noise_std},
          {"v_sat", p.driver.v_sat}}}};
  }
  return j.dump(2) + "\n";
}

}  // namespace gpmpc
