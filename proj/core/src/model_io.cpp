#include "gpmpc/model_io.hpp"

#include <json.hpp>
#include <stdexcept>

#include "gpmpc/csv.hpp"

namespace gpmpc {

namespace {

using nlohmann::json;

constexpr int kSchemaVersion = 1;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw std::runtime_error("model: bad matrix block");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols) {
      throw std::runtime_error("model: ragged matrix block");
    }
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

}  // namespace

std::string to_model_json(const SavedModel& model) {
  json j;
  j["schema"] = model.schema;
  j["kind"] = model.kind;
  j["hyperparams"] = {{"signal_std", model.hyperparams.signal_std},
                      {"noise_std", model.hyperparams.noise_std},
                      {"length_scales", json::array()}};
  for (int d = 0; d < model.hyperparams.input_dim(); ++d) {
    j["hyperparams"]["length_scales"].push_back(model.hyperparams.length_scales(d));
  }
  j["target_offset"] = model.target_offset;
  j["dataset"] = {{"inputs", matrix_to_json(model.dataset.inputs)},
                  {"targets", json::array()}};
  for (int i = 0; i < model.dataset.size(); ++i) {
    j["dataset"]["targets"].push_back(model.dataset.targets(i));
  }
  if (model.inducing.has_value()) j["inducing"] = matrix_to_json(*model.inducing);
  return j.dump(2) + "\n";
}

SavedModel from_model_json(const std::string& text) {
  json j = json::parse(text);
  SavedModel model;
  model.schema = j.at("schema").get<int>();
  if (model.schema > kSchemaVersion) {
    throw std::runtime_error("model: schema " + std::to_string(model.schema) +
                             " is newer than supported " + std::to_string(kSchemaVersion));
  }
  model.kind = j.at("kind").get<std::string>();
  if (model.kind != "exact" && model.kind != "sparse") {
    throw std::runtime_error("model: unknown kind '" + model.kind + "'");
  }
  const json& h = j.at("hyperparams");
  model.hyperparams.signal_std = h.at("signal_std").get<double>();
  model.hyperparams.noise_std = h.at("noise_std").get<double>();
  const json& ls = h.at("length_scales");
  model.hyperparams.length_scales.resize(ls.size());
  for (std::size_t d = 0; d < ls.size(); ++d) {
    model.hyperparams.length_scales(d) = ls[d].get<double>();
  }
  model.target_offset = j.at("target_offset").get<double>();
  model.dataset.inputs = matrix_from_json(j.at("dataset").at("inputs"));
  const json& targets = j.at("dataset").at("targets");
  model.dataset.targets.resize(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    model.dataset.targets(i) = targets[i].get<double>();
  }
  if (j.contains("inducing")) model.inducing = matrix_from_json(j.at("inducing"));
  if (model.kind == "sparse" && !model.inducing.has_value()) {
    throw std::runtime_error("model: sparse kind requires an inducing block");
  }
  return model;
}

void save_model(const std::filesystem::path& path, const SavedModel& model) {
  write_file(path, to_model_json(model));
}

SavedModel load_model(const std::filesystem::path& path) {
  return from_model_json(read_file(path));
}

DisturbanceGp refit_saved_model(const SavedModel& model) {
  if (model.kind == "sparse") {
    SparseGpModel fit = fic_fit(model.dataset, model.hyperparams, *model.inducing);
    fit.target_offset = model.target_offset;
    return fit;
  }
  GpModel fit = gp_fit(model.dataset, model.hyperparams);
  fit.target_offset = model.target_offset;
  return fit;
}

void save_dataset_csv(const std::filesystem::path& path, const GpDataset& data) {
  CsvTable table;
  for (int d = 0; d < data.dim(); ++d) table.columns.push_back("x" + std::to_string(d));
  table.columns.push_back("y");
  table.rows.reserve(data.size());
  for (int i = 0; i < data.size(); ++i) {
    std::vector<double> row(data.dim() + 1);
    for (int d = 0; d < data.dim(); ++d) row[d] = data.inputs(i, d);
    row[data.dim()] = data.targets(i);
    table.rows.push_back(std::move(row));
  }
  write_csv(path, table);
}

GpDataset load_dataset_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  const int cols = static_cast<int>(table.columns.size());
  if (cols < 2 || table.columns[cols - 1] != "y") {
    throw std::runtime_error("dataset CSV must end with a 'y' column: " + path.string());
  }
  for (int d = 0; d < cols - 1; ++d) {
    if (table.columns[d] != "x" + std::to_string(d)) {
      throw std::runtime_error("dataset CSV columns must be x0..x{d-1},y: " + path.string());
    }
  }
  GpDataset data;
  data.inputs.resize(table.rows.size(), cols - 1);
  data.targets.resize(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (int d = 0; d < cols - 1; ++d) data.inputs(static_cast<int>(i), d) = table.rows[i][d];
    data.targets(static_cast<int>(i)) = table.rows[i][cols - 1];
  }
  return data;
}

SavedModel train_saved_model(const GpDataset& data, const GpHyperparams& init,
                             int optimize_budget, bool sparse, int inducing_count,
                             InducingStrategy strategy, std::uint64_t seed,
                             double min_scale_fraction) {
  SavedModel out;
  out.target_offset = data.targets.mean();
  out.dataset.inputs = data.inputs;
  out.dataset.targets = data.targets.array() - out.target_offset;
  out.hyperparams = optimize_budget > 0
                        ? optimize_hyperparams(out.dataset, init, optimize_budget)
                        : init;
  if (min_scale_fraction > 0.0) {
    for (int d = 0; d < out.dataset.dim(); ++d) {
      const double span = out.dataset.inputs.col(d).maxCoeff() -
                          out.dataset.inputs.col(d).minCoeff();
      out.hyperparams.length_scales(d) =
          std::max(out.hyperparams.length_scales(d), min_scale_fraction * span);
    }
  }
  if (sparse) {
    out.kind = "sparse";
    const int count = std::min<int>(inducing_count, data.size());
    out.inducing = select_inducing(out.dataset, count, strategy, seed);
  }
  return out;
}

}  // namespace gpmpc
