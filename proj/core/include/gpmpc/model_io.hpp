#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "gpmpc/disturbance.hpp"

namespace gpmpc {

/// Persistable model description: hyperparameters, the normalization
/// offset applied to the targets, and the raw (already offset-removed)
/// dataset. Factorizations are recomputed on load.
struct SavedModel {
  int schema = 1;
  std::string kind = "exact";  // "exact" | "sparse"
  GpHyperparams hyperparams;
  double target_offset = 0.0;
  GpDataset dataset;
  std::optional<Eigen::MatrixXd> inducing;
};

std::string to_model_json(const SavedModel& model);
SavedModel from_model_json(const std::string& text);

void save_model(const std::filesystem::path& path, const SavedModel& model);
SavedModel load_model(const std::filesystem::path& path);

/// Rebuild the predictor; exact or sparse per the saved kind.
DisturbanceGp refit_saved_model(const SavedModel& model);

/// Dataset CSV: columns x0..x{d-1}, then y.
void save_dataset_csv(const std::filesystem::path& path, const GpDataset& data);
GpDataset load_dataset_csv(const std::filesystem::path& path);

/// Offset-normalizing training helper: centers the targets, optimizes
/// hyperparameters from the given initialization, and returns the saved
/// form ready for refit_saved_model. Optimized length scales are floored
/// at `min_scale_fraction` of each input column's span, which stops the
/// marginal-likelihood optimum from memorizing one closed-loop trajectory
/// and keeps the posterior mean smooth enough for control linearization.
SavedModel train_saved_model(const GpDataset& data, const GpHyperparams& init,
                             int optimize_budget, bool sparse, int inducing_count,
                             InducingStrategy strategy, std::uint64_t seed,
                             double min_scale_fraction = 0.2);

}  // namespace gpmpc
