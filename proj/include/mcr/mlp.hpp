#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcr/tape.hpp"
#include "mcr/tensor.hpp"

namespace mcr {

enum class Activation { kRelu };

/// Layer layout of a feed-forward network: hidden layers get the
/// activation (and optionally batch norm), the output layer is linear.
struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 0;
  Activation activation = Activation::kRelu;
  std::vector<bool> batch_norm;  // per hidden layer; empty means none

  static MlpSpec make(std::size_t in, std::vector<std::size_t> hidden,
                      std::size_t out, bool batch_norm_all = false);

  void validate() const;
  std::size_t layer_count() const { return hidden.size() + 1; }
  bool has_batch_norm(std::size_t hidden_idx) const;
  /// Trainable parameter count, including batch-norm scale/shift.
  std::size_t parameter_count() const;
};

/// Parameters plus batch-norm running statistics for one network.
/// Trainable tensors live in a flat ordered list: per layer weight, bias,
/// then scale and shift when that hidden layer carries batch norm.
class MlpModel {
 public:
  MlpModel() = default;
  explicit MlpModel(MlpSpec spec);

  const MlpSpec& spec() const { return spec_; }
  std::vector<DenseTensor>& params() { return params_; }
  const std::vector<DenseTensor>& params() const { return params_; }
  std::string param_name(std::size_t i) const;

  std::vector<DenseTensor>& running_mean() { return running_mean_; }
  std::vector<DenseTensor>& running_var() { return running_var_; }
  const std::vector<DenseTensor>& running_mean() const { return running_mean_; }
  const std::vector<DenseTensor>& running_var() const { return running_var_; }

  bool train_mode() const { return train_mode_; }
  void set_train_mode(bool on) { train_mode_ = on; }

  /// FNV-1a over the parameter and running-statistic bytes; used to prove
  /// that probes leave a model untouched.
  std::uint64_t checksum() const;

 private:
  friend MlpModel init_mlp(const MlpSpec&, std::uint64_t);
  MlpSpec spec_;
  std::vector<DenseTensor> params_;
  std::vector<std::string> param_names_;
  std::vector<DenseTensor> running_mean_;
  std::vector<DenseTensor> running_var_;
  bool train_mode_ = false;
};

/// Batch-norm constants: small variance-floor epsilon and the running
/// statistic update momentum.
inline constexpr double kBatchNormEps = 1e-8;
inline constexpr double kBatchNormMomentum = 0.1;

/// Fan-in scaled uniform init U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero
/// biases, identity batch-norm. Deterministic per seed.
MlpModel init_mlp(const MlpSpec& spec, std::uint64_t seed);

/// Tape leaves for every trainable parameter, in model order.
struct MlpBinding {
  std::vector<NodeId> params;
};
MlpBinding bind_params(Tape& tape, const MlpModel& model);

/// Appends the forward graph for a batch already on the tape. Train mode
/// uses batch statistics and updates the model's running statistics as a
/// side effect; eval mode normalizes with the frozen running statistics.
NodeId mlp_apply(Tape& tape, MlpModel& model, const MlpBinding& binding,
                 NodeId input, bool train_mode);

/// Plain forward pass on a scratch tape.
DenseTensor predict(MlpModel& model, const DenseTensor& batch, bool train_mode);

/// Clamp every trainable entry to [-c, c].
void clip_weights(MlpModel& model, double c);

/// Checkpoint round-trip as a JSON text document; bit-exact.
std::string save_checkpoint(const MlpModel& model);
MlpModel load_checkpoint(const std::string& text);

}  // namespace mcr
