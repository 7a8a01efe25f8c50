#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gpmpc/csv.hpp"
#include "gpmpc/pathfollow.hpp"
#include "gpmpc/platoon.hpp"

namespace gpmpc {

enum class Application { Pathfollow, Platoon };

enum class ControllerKind { Nmpc, GpNmpc, Fblmpc, GpFblmpc, Mpc, GpMpc, SparseGpMpc };

std::string to_string(Application application);
std::string to_string(ControllerKind controller);
bool controller_uses_gp(ControllerKind controller);
bool controller_valid_for(Application application, ControllerKind controller);

struct GpOptions {
  int inducing_count = 20;
  InducingStrategy strategy = InducingStrategy::GreedyVariance;
  int optimize_budget = 40;
  int max_points = 400;
  double init_signal_std = 0.05;
  double init_length_scale = 1.0;
  double init_noise_std = 0.01;
  /// Floor on optimized length scales, as a fraction of the per-column
  /// input span. Keeps learned corrections smooth.
  double min_scale_fraction = 0.3;
};

struct PathfollowScenario {
  std::string path_kind = "straight";  // straight | circle | figure_eight | file
  std::string path_file;
  double path_scale = 8.0;        // circle radius / figure-eight size
  double path_direction = 0.785398163397448;  // straight-path heading
  double path_length = 40.0;
  double target_speed = 1.0;
  double start_lateral_offset = 0.3;
  SlipParams slip{0.85, 0.9, 0.0, 0.08, 0.002, 0.002};
  PathfollowWeights weights;
  double v_max = 2.0;
  double omega_max = 2.5;
  /// Exploratory command dither amplitudes, applied only during the
  /// data-collection phase so the datasets excite the command inputs.
  double dither_v = 0.08;
  double dither_omega = 0.15;
  /// Optional override: train on this path instead of the deployment
  /// path (the cross-path transfer setup).
  std::string train_path_kind;
};

struct PlatoonScenario {
  int av_count = 3;
  std::string profile = "constant";  // constant | emergency_brake | wltp_like
  SpeedProfileParams profile_params;
  PlatoonLimits limits;
  HvDriverParams driver{6, 1.0, 0.15, 40.0};
  double initial_gap = 14.0;
  double hv_initial_gap = 16.0;
  double collection_duration = 120.0;
  /// Lower speed bound applied to the data-collection profile; keeps the
  /// training regime away from rare emergency speeds so the GP variance
  /// reflects their scarcity.
  double collection_v_floor = 6.0;
};

struct ScenarioConfig {
  Application application = Application::Pathfollow;
  ControllerKind controller = ControllerKind::Fblmpc;
  std::uint64_t seed = 0;
  double duration = 60.0;
  double timestep = 0.1;
  int horizon = 20;
  GpOptions gp;
  PathfollowScenario pathfollow;
  PlatoonScenario platoon;
};

struct ConfigIssue {
  std::string where;  // JSON-pointer-ish location
  std::string message;
};

struct ConfigParse {
  std::optional<ScenarioConfig> config;
  std::vector<ConfigIssue> issues;

  bool ok() const { return issues.empty() && config.has_value(); }
};

/// Parse + validate. Reports every issue found, not just the first.
ConfigParse validate_config_text(const std::string& text);
ConfigParse validate_config(const std::filesystem::path& path);

/// The configuration with defaults filled in, serialized back out.
std::string effective_config_json(const ScenarioConfig& config);

struct RunLog {
  std::string application;
  std::string controller;
  std::uint64_t seed = 0;
  CsvTable steps;
  CsvTable solver_diag;
  std::map<std::string, double> summary;
  bool failed = false;
  int failure_step = -1;
  std::string failure_reason;
};

/// Execute the scenario: data collection + model training when the
/// controller is GP-based, then closed-loop deployment. Writes steps.csv,
/// solver_diag.csv, summary.json, trained models, and a hash manifest
/// under out_dir (when non-empty).
RunLog run_scenario(const ScenarioConfig& config, const std::filesystem::path& out_dir);

/// Load a previously written run directory.
RunLog load_run(const std::filesystem::path& run_dir);

struct MetricDelta {
  double value_a = 0.0;
  double value_b = 0.0;
  double delta = 0.0;  // value_b - value_a
};

struct Comparison {
  std::map<std::string, MetricDelta> metrics;
  std::string application;
  std::uint64_t seed = 0;
};

/// Paired comparison of two runs from the same application and seed.
Comparison compare_runs(const RunLog& a, const RunLog& b);
std::string comparison_json(const Comparison& comparison);

/// Deterministic SVG panels: lateral/heading errors for path following,
/// velocity/position/distance for platooning. Returns the files written.
std::vector<std::filesystem::path> export_plots(const RunLog& log,
                                                const std::filesystem::path& out_dir);

/// manifest.json listing every artifact in the directory with its hash.
void write_manifest(const std::filesystem::path& out_dir);

}  // namespace gpmpc
