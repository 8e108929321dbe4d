// Test-only oracles, independent of the tape engine: a plain-loop MLP
// evaluator (forward + analytic input gradient) and finite-difference
// helpers. Kept deliberately naive.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mcr/mlp.hpp"
#include "mcr/tensor.hpp"

namespace testutil {

struct PlainMlp {
  // weights[l] has shape {fan_in, fan_out}; biases[l] has shape {fan_out}.
  std::vector<mcr::DenseTensor> weights;
  std::vector<mcr::DenseTensor> biases;

  mcr::DenseTensor forward(const mcr::DenseTensor& x) const {
    mcr::DenseTensor h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const auto& w = weights[l];
      const auto& b = biases[l];
      mcr::DenseTensor out = mcr::DenseTensor::zeros({h.rows(), w.cols()});
      for (std::size_t i = 0; i < h.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
          double s = b[j];
          for (std::size_t k = 0; k < w.rows(); ++k) {
            s += h.at(i, k) * w.at(k, j);
          }
          bool last = l + 1 == weights.size();
          out.at(i, j) = !last && s < 0.0 ? 0.0 : s;
        }
      }
      h = std::move(out);
    }
    return h;
  }

  // Per-sample gradient of a scalar-output network with respect to its
  // input, via explicit backward loops over stored preactivations.
  mcr::DenseTensor input_gradient(const mcr::DenseTensor& x) const {
    std::size_t batch = x.rows();
    mcr::DenseTensor grads = mcr::DenseTensor::zeros(
        {batch, x.cols()});
    for (std::size_t i = 0; i < batch; ++i) {
      // forward, keeping activations per layer
      std::vector<std::vector<double>> acts;
      std::vector<double> cur(x.cols());
      for (std::size_t k = 0; k < x.cols(); ++k) cur[k] = x.at(i, k);
      acts.push_back(cur);
      for (std::size_t l = 0; l < weights.size(); ++l) {
        const auto& w = weights[l];
        std::vector<double> nxt(w.cols());
        for (std::size_t j = 0; j < w.cols(); ++j) {
          double s = biases[l][j];
          for (std::size_t k = 0; k < w.rows(); ++k) s += cur[k] * w.at(k, j);
          bool last = l + 1 == weights.size();
          nxt[j] = !last && s < 0.0 ? 0.0 : s;
        }
        cur = nxt;
        acts.push_back(cur);
      }
      // backward: delta over layer outputs, seeded with 1 on the scalar out
      std::vector<double> delta(1, 1.0);
      for (std::size_t l = weights.size(); l-- > 0;) {
        const auto& w = weights[l];
        std::vector<double> prev(w.rows(), 0.0);
        for (std::size_t k = 0; k < w.rows(); ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < w.cols(); ++j) {
            s += w.at(k, j) * delta[j];
          }
          prev[k] = s;
        }
        if (l > 0) {
          // gate by the ReLU that produced acts[l]
          for (std::size_t k = 0; k < prev.size(); ++k) {
            if (acts[l][k] <= 0.0) prev[k] = 0.0;
          }
        }
        delta = prev;
      }
      for (std::size_t k = 0; k < x.cols(); ++k) grads.at(i, k) = delta[k];
    }
    return grads;
  }
};

// Splits a no-batch-norm model's flat parameter list back into layers.
inline PlainMlp plain_from_model(const mcr::MlpModel& model) {
  PlainMlp p;
  const auto& params = model.params();
  for (std::size_t i = 0; i + 1 < params.size(); i += 2) {
    p.weights.push_back(params[i]);
    p.biases.push_back(params[i + 1]);
  }
  return p;
}

inline double central_difference(double& slot, double step,
                                 const std::function<double()>& eval) {
  double orig = slot;
  slot = orig + step;
  double up = eval();
  slot = orig - step;
  double down = eval();
  slot = orig;
  return (up - down) / (2.0 * step);
}

inline double rel_error(double got, double want, double scale) {
  return std::abs(got - want) / std::max(scale, 1e-6);
}

}  // namespace testutil
