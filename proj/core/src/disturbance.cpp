#include "gpmpc/disturbance.hpp"

#include <stdexcept>

namespace gpmpc {

GpPrediction disturbance_predict(const DisturbanceGp& gp, const Eigen::VectorXd& query) {
  return std::visit(
      [&](const auto& m) -> GpPrediction {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GpPrior>) {
          if (query.size() != m.hyperparams.input_dim()) {
            throw std::invalid_argument("disturbance_predict: query dimension mismatch");
          }
          return {m.target_offset,
                  m.hyperparams.signal_std * m.hyperparams.signal_std};
        } else if constexpr (std::is_same_v<T, GpModel>) {
          return gp_predict(m, query);
        } else {
          return fic_predict(m, query);
        }
      },
      gp);
}

Eigen::VectorXd disturbance_mean_gradient(const DisturbanceGp& gp,
                                          const Eigen::VectorXd& query) {
  return std::visit(
      [&](const auto& m) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GpPrior>) {
          if (query.size() != m.hyperparams.input_dim()) {
            throw std::invalid_argument("disturbance_mean_gradient: dimension mismatch");
          }
          return Eigen::VectorXd::Zero(query.size());
        } else if constexpr (std::is_same_v<T, GpModel>) {
          return gp_mean_gradient(m, query);
        } else {
          return fic_mean_gradient(m, query);
        }
      },
      gp);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> disturbance_predict_batch(
    const DisturbanceGp& gp, const Eigen::MatrixXd& queries) {
  return std::visit(
      [&](const auto& m) -> std::pair<Eigen::VectorXd, Eigen::VectorXd> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GpPrior>) {
          if (queries.cols() != m.hyperparams.input_dim()) {
            throw std::invalid_argument("disturbance_predict_batch: dimension mismatch");
          }
          const double sf2 = m.hyperparams.signal_std * m.hyperparams.signal_std;
          return {Eigen::VectorXd::Constant(queries.rows(), m.target_offset),
                  Eigen::VectorXd::Constant(queries.rows(), sf2)};
        } else if constexpr (std::is_same_v<T, GpModel>) {
          return gp_predict_batch(m, queries);
        } else {
          return fic_predict_batch(m, queries);
        }
      },
      gp);
}

int disturbance_input_dim(const DisturbanceGp& gp) {
  return std::visit(
      [](const auto& m) -> int {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, GpPrior>) {
          return m.hyperparams.input_dim();
        } else if constexpr (std::is_same_v<T, GpModel>) {
          return m.dataset.dim();
        } else {
          return m.dim();
        }
      },
      gp);
}

}  // namespace gpmpc
