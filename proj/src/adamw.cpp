#include "mcr/adamw.hpp"

#include <cmath>
#include <stdexcept>

namespace mcr {

OptimizerState::OptimizerState(const MlpModel& model, AdamwConfig config)
    : config_(config) {
  m_.reserve(model.params().size());
  v_.reserve(model.params().size());
  for (const auto& p : model.params()) {
    m_.push_back(DenseTensor::zeros(p.shape()));
    v_.push_back(DenseTensor::zeros(p.shape()));
  }
}

void adamw_step(MlpModel& model, std::span<const DenseTensor> grads,
                OptimizerState& state) {
  auto& params = model.params();
  if (grads.size() != params.size() || state.m_.size() != params.size()) {
    throw std::invalid_argument("adamw_step: gradient/state count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(params[i])) {
      throw std::invalid_argument("adamw_step: gradient shape mismatch for " +
                                  model.param_name(i));
    }
    if (!grads[i].all_finite()) {
      throw std::runtime_error("adamw_step: non-finite gradient for " +
                               model.param_name(i));
    }
  }

  const AdamwConfig& cfg = state.config_;
  ++state.step_;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_));

  for (std::size_t i = 0; i < params.size(); ++i) {
    double* w = params[i].raw();
    double* m = state.m_[i].raw();
    double* v = state.v_[i].raw();
    const double* g = grads[i].raw();
    for (std::size_t k = 0, n = params[i].numel(); k < n; ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      double m_hat = m[k] / bc1;
      double v_hat = v[k] / bc2;
      w[k] -= cfg.learning_rate *
              (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * w[k]);
    }
  }
}

std::vector<DenseTensor> grads_in_param_order(const GradientRecord& record,
                                              const MlpBinding& binding) {
  std::vector<DenseTensor> out;
  out.reserve(binding.params.size());
  for (NodeId id : binding.params) {
    const DenseTensor* g = record.find(id);
    if (g == nullptr) {
      throw std::invalid_argument(
          "grads_in_param_order: missing gradient for node " +
          std::to_string(id));
    }
    out.push_back(*g);
  }
  return out;
}

}  // namespace mcr
