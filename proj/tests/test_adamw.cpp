#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "mcr/adamw.hpp"
#include "mcr/mlp.hpp"

using mcr::AdamwConfig;
using mcr::DenseTensor;
using mcr::MlpModel;
using mcr::MlpSpec;
using mcr::OptimizerState;

namespace {
MlpModel scalar_model(double w) {
  MlpSpec spec;
  spec.input_dim = 1;
  spec.output_dim = 1;
  MlpModel m = mcr::init_mlp(spec, 0);
  m.params()[0].at(0, 0) = w;
  return m;
}

std::vector<DenseTensor> grads_like(const MlpModel& m, double weight_grad) {
  std::vector<DenseTensor> g;
  for (const auto& p : m.params()) g.push_back(DenseTensor::zeros(p.shape()));
  g[0][0] = weight_grad;
  return g;
}
}  // namespace

TEST_SUITE("adamw") {

TEST_CASE("first step matches the hand-evaluated update") {
  MlpModel m = scalar_model(0.0);
  AdamwConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;
  OptimizerState state(m, cfg);
  adamw_step(m, grads_like(m, 1.0), state);
  // m_hat = 1, v_hat = 1 -> w = -0.1 / (1 + eps)
  CHECK(m.params()[0][0] ==
        doctest::Approx(-0.1 / (1.0 + cfg.eps)).epsilon(1e-12));
  CHECK(state.step_count() == 1);
}

TEST_CASE("zero gradients and zero decay leave parameters unchanged") {
  MlpModel m = mcr::init_mlp(MlpSpec::make(3, {4}, 2, true), 8);
  std::uint64_t before = m.checksum();
  AdamwConfig cfg;
  cfg.learning_rate = 0.05;
  OptimizerState state(m, cfg);
  std::vector<DenseTensor> zeros;
  for (const auto& p : m.params()) zeros.push_back(DenseTensor::zeros(p.shape()));
  for (int i = 0; i < 3; ++i) adamw_step(m, zeros, state);
  CHECK(m.checksum() == before);
}

TEST_CASE("decoupled decay shrinks weights geometrically") {
  MlpModel m = scalar_model(2.0);
  AdamwConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  OptimizerState state(m, cfg);
  double w = 2.0;
  for (int i = 0; i < 4; ++i) {
    adamw_step(m, grads_like(m, 0.0), state);
    w *= 1.0 - cfg.learning_rate * cfg.weight_decay;
    CHECK(m.params()[0][0] == doctest::Approx(w).epsilon(1e-12));
  }
}

TEST_CASE("non-finite gradients are rejected with the parameter name") {
  MlpModel m = mcr::init_mlp(MlpSpec::make(2, {3}, 1, false), 4);
  OptimizerState state(m, AdamwConfig{});
  auto g = grads_like(m, 0.0);
  g[1][0] = std::nan("");
  CHECK_THROWS_WITH_AS(adamw_step(m, g, state),
                       doctest::Contains("layer0.bias"), std::runtime_error);
}

}  // TEST_SUITE
