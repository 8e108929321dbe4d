#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mcr/mlp.hpp"
#include "mcr/tensor.hpp"

namespace mcr {

struct AdamwConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

/// Bias-corrected adaptive-moment state for one model's parameter list.
class OptimizerState {
 public:
  OptimizerState() = default;
  OptimizerState(const MlpModel& model, AdamwConfig config);

  const AdamwConfig& config() const { return config_; }
  long step_count() const { return step_; }

 private:
  friend void adamw_step(MlpModel&, std::span<const DenseTensor>,
                         OptimizerState&);
  AdamwConfig config_;
  std::vector<DenseTensor> m_;
  std::vector<DenseTensor> v_;
  long step_ = 0;
};

/// w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w).
/// grads[i] aligns with model.params()[i]; a non-finite gradient entry is
/// rejected naming the parameter.
void adamw_step(MlpModel& model, std::span<const DenseTensor> grads,
                OptimizerState& state);

/// Reorders a GradientRecord produced against `binding` back into model
/// parameter order.
std::vector<DenseTensor> grads_in_param_order(const GradientRecord& record,
                                              const MlpBinding& binding);

}  // namespace mcr
