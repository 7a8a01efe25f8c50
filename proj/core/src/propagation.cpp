#include "gpmpc/propagation.hpp"

#include <stdexcept>
#include <string>

#include "gpmpc/errors.hpp"

namespace gpmpc {

GaussianBelief GaussianBelief::certain(const Eigen::VectorXd& mean) {
  return {mean, Eigen::MatrixXd::Zero(mean.size(), mean.size())};
}

ControlMoments ControlMoments::deterministic(const Eigen::VectorXd& u, int state_dim) {
  return {u, Eigen::MatrixXd::Zero(u.size(), u.size()),
          Eigen::MatrixXd::Zero(state_dim, u.size())};
}

void HybridModel::validate() const {
  if (state_dim < 1 || input_dim < 0) {
    throw std::invalid_argument("HybridModel: bad dimensions");
  }
  if (!dynamics) throw std::invalid_argument("HybridModel: dynamics not set");
  const int n_d = gp_count();
  if (gp_placement.rows() != state_dim || gp_placement.cols() != n_d) {
    throw std::invalid_argument("HybridModel: placement matrix shape mismatch");
  }
  if (process_noise_var.size() != n_d) {
    throw std::invalid_argument("HybridModel: noise variance length mismatch");
  }
  if (n_d > 0 && (process_noise_var.array() < 0.0).any()) {
    throw std::invalid_argument("HybridModel: negative noise variance");
  }
  for (int idx : gp_input_map) {
    if (idx < 0 || idx >= state_dim + input_dim) {
      throw std::invalid_argument("HybridModel: gp_input_map index out of range");
    }
  }
  for (const auto& gp : gp_dims) {
    if (disturbance_input_dim(gp) != static_cast<int>(gp_input_map.size())) {
      throw std::invalid_argument("HybridModel: GP input dimension != input map size");
    }
  }
}

Eigen::VectorXd gp_query(const HybridModel& model, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& u) {
  Eigen::VectorXd z(model.state_dim + model.input_dim);
  z << x, u;
  Eigen::VectorXd q(model.gp_input_map.size());
  for (std::size_t j = 0; j < model.gp_input_map.size(); ++j) {
    q(j) = z(model.gp_input_map[j]);
  }
  return q;
}

namespace {

Eigen::MatrixXd fd_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& fn,
    const Eigen::VectorXd& at, int out_dim) {
  Eigen::MatrixXd jac(out_dim, at.size());
  Eigen::VectorXd probe = at;
  for (int j = 0; j < at.size(); ++j) {
    const double h = 1e-6 * (1.0 + std::abs(at(j)));
    probe(j) = at(j) + h;
    const Eigen::VectorXd hi = fn(probe);
    probe(j) = at(j) - h;
    const Eigen::VectorXd lo = fn(probe);
    probe(j) = at(j);
    jac.col(j) = (hi - lo) / (2.0 * h);
  }
  return jac;
}

/// Per-dimension GP means/variances and the gradient matrix lifted into
/// z-space (zero columns for unselected components).
struct GpEval {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  Eigen::MatrixXd grad_z;  // n_d x n_z
};

GpEval eval_gps(const HybridModel& model, const Eigen::VectorXd& x_mean,
                const Eigen::VectorXd& u_mean, bool with_gradient) {
  const int n_d = model.gp_count();
  const int n_z = model.state_dim + model.input_dim;
  GpEval out;
  out.mean = Eigen::VectorXd::Zero(n_d);
  out.var = Eigen::VectorXd::Zero(n_d);
  out.grad_z = Eigen::MatrixXd::Zero(n_d, n_z);
  if (n_d == 0) return out;
  const Eigen::VectorXd q = gp_query(model, x_mean, u_mean);
  for (int i = 0; i < n_d; ++i) {
    const GpPrediction p = disturbance_predict(model.gp_dims[i], q);
    out.mean(i) = p.mean;
    out.var(i) = p.variance;
    if (with_gradient) {
      const Eigen::VectorXd g = disturbance_mean_gradient(model.gp_dims[i], q);
      for (std::size_t j = 0; j < model.gp_input_map.size(); ++j) {
        out.grad_z(i, model.gp_input_map[j]) += g(j);
      }
    }
  }
  return out;
}

Eigen::MatrixXd assemble_cov_z(const HybridModel& model, const GaussianBelief& belief,
                               const ControlMoments& control) {
  const int n_x = model.state_dim;
  const int n_u = model.input_dim;
  Eigen::MatrixXd cov_z(n_x + n_u, n_x + n_u);
  cov_z.topLeftCorner(n_x, n_x) = belief.cov;
  cov_z.topRightCorner(n_x, n_u) = control.cross_xu;
  cov_z.bottomLeftCorner(n_u, n_x) = control.cross_xu.transpose();
  cov_z.bottomRightCorner(n_u, n_u) = control.cov;
  return cov_z;
}

Eigen::MatrixXd cov_step_impl(const Eigen::MatrixXd& nominal_jac_z,
                              const HybridModel& model, const GaussianBelief& belief,
                              const ControlMoments& control, CovMethod method) {
  const int n_x = model.state_dim;
  const int n_d = model.gp_count();
  const Eigen::MatrixXd cov_z = assemble_cov_z(model, belief, control);
  clamp_psd(cov_z);  // rejects non-PSD inputs early

  const GpEval gps = eval_gps(model, belief.mean, control.mean,
                              method == CovMethod::Taylor);

  const int n_z = cov_z.rows();
  Eigen::MatrixXd joint(n_z + n_d, n_z + n_d);
  joint.topLeftCorner(n_z, n_z) = cov_z;
  if (n_d > 0) {
    Eigen::MatrixXd cov_zd = Eigen::MatrixXd::Zero(n_z, n_d);
    Eigen::MatrixXd cov_d = gps.var.asDiagonal();
    if (method == CovMethod::Taylor) {
      cov_zd = cov_z * gps.grad_z.transpose();
      cov_d += gps.grad_z * cov_z * gps.grad_z.transpose();
    }
    joint.topRightCorner(n_z, n_d) = cov_zd;
    joint.bottomLeftCorner(n_d, n_z) = cov_zd.transpose();
    joint.bottomRightCorner(n_d, n_d) =
        cov_d + Eigen::MatrixXd(model.process_noise_var.asDiagonal());
  }

  Eigen::MatrixXd front(n_x, n_z + n_d);
  front.leftCols(n_z) = nominal_jac_z;
  if (n_d > 0) front.rightCols(n_d) = model.gp_placement;
  return clamp_psd(front * joint * front.transpose());
}

}  // namespace

Eigen::MatrixXd model_jac_state(const HybridModel& model, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& u) {
  if (model.jac_state) return model.jac_state(x, u);
  return fd_jacobian([&](const Eigen::VectorXd& xx) { return model.dynamics(xx, u); }, x,
                     model.state_dim);
}

Eigen::MatrixXd model_jac_input(const HybridModel& model, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& u) {
  if (model.jac_input) return model.jac_input(x, u);
  return fd_jacobian([&](const Eigen::VectorXd& uu) { return model.dynamics(x, uu); }, u,
                     model.state_dim);
}

JointBlocks joint_blocks(const HybridModel& model, const GaussianBelief& belief,
                         const ControlMoments& control, CovMethod method) {
  const Eigen::MatrixXd cov_z = assemble_cov_z(model, belief, control);
  const GpEval gps = eval_gps(model, belief.mean, control.mean,
                              method == CovMethod::Taylor);
  JointBlocks out;
  out.cov_z = cov_z;
  out.cov_zd = Eigen::MatrixXd::Zero(cov_z.rows(), model.gp_count());
  out.cov_d = gps.var.asDiagonal();
  if (method == CovMethod::Taylor && model.gp_count() > 0) {
    out.cov_zd = cov_z * gps.grad_z.transpose();
    out.cov_d += gps.grad_z * cov_z * gps.grad_z.transpose();
  }
  return out;
}

Eigen::VectorXd mean_step(const HybridModel& model, const GaussianBelief& belief,
                          const Eigen::VectorXd& u_mean) {
  model.validate();
  if (belief.mean.size() != model.state_dim || u_mean.size() != model.input_dim) {
    throw std::invalid_argument("mean_step: dimension mismatch");
  }
  Eigen::VectorXd next = model.dynamics(belief.mean, u_mean);
  if (model.gp_count() > 0) {
    const GpEval gps = eval_gps(model, belief.mean, u_mean, false);
    next += model.gp_placement * gps.mean;
  }
  return next;
}

Eigen::MatrixXd cov_step_taylor(const HybridModel& model, const GaussianBelief& belief,
                                const ControlMoments& control) {
  model.validate();
  Eigen::MatrixXd jac_z(model.state_dim, model.state_dim + model.input_dim);
  jac_z << model_jac_state(model, belief.mean, control.mean),
      model_jac_input(model, belief.mean, control.mean);
  return cov_step_impl(jac_z, model, belief, control, CovMethod::Taylor);
}

Eigen::MatrixXd cov_step_meaneq(const HybridModel& model, const GaussianBelief& belief,
                                const ControlMoments& control) {
  model.validate();
  Eigen::MatrixXd jac_z(model.state_dim, model.state_dim + model.input_dim);
  jac_z << model_jac_state(model, belief.mean, control.mean),
      model_jac_input(model, belief.mean, control.mean);
  return cov_step_impl(jac_z, model, belief, control, CovMethod::MeanEquivalent);
}

Eigen::MatrixXd cov_step_linear(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                const HybridModel& model, const GaussianBelief& belief,
                                const ControlMoments& control, CovMethod method) {
  model.validate();
  if (a.rows() != model.state_dim || a.cols() != model.state_dim ||
      b.rows() != model.state_dim || b.cols() != model.input_dim) {
    throw std::invalid_argument("cov_step_linear: A/B shape mismatch");
  }
  Eigen::MatrixXd jac_z(model.state_dim, model.state_dim + model.input_dim);
  jac_z << a, b;
  return cov_step_impl(jac_z, model, belief, control, method);
}

std::vector<GaussianBelief> belief_rollout(const HybridModel& model,
                                           const GaussianBelief& initial,
                                           const std::vector<ControlMoments>& controls,
                                           int steps, CovMethod method) {
  if (steps < 1) throw std::invalid_argument("belief_rollout: steps must be >= 1");
  if (static_cast<int>(controls.size()) < steps) {
    throw std::invalid_argument("belief_rollout: not enough controls for horizon");
  }
  std::vector<GaussianBelief> beliefs;
  beliefs.reserve(steps + 1);
  beliefs.push_back(initial);
  for (int b = 0; b < steps; ++b) {
    try {
      GaussianBelief next;
      next.mean = mean_step(model, beliefs.back(), controls[b].mean);
      next.cov = method == CovMethod::Taylor
                     ? cov_step_taylor(model, beliefs.back(), controls[b])
                     : cov_step_meaneq(model, beliefs.back(), controls[b]);
      beliefs.push_back(std::move(next));
    } catch (const std::exception& e) {
      throw NumericalError("belief_rollout step " + std::to_string(b) + ": " + e.what());
    }
  }
  return beliefs;
}

}  // namespace gpmpc
