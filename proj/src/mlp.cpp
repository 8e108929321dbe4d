#include "mcr/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mcr/rng.hpp"

namespace mcr {

using json = nlohmann::json;

MlpSpec MlpSpec::make(std::size_t in, std::vector<std::size_t> hidden_dims,
                      std::size_t out, bool batch_norm_all) {
  MlpSpec spec;
  spec.input_dim = in;
  spec.hidden = std::move(hidden_dims);
  spec.output_dim = out;
  spec.batch_norm.assign(spec.hidden.size(), batch_norm_all);
  spec.validate();
  return spec;
}

void MlpSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) {
    throw std::invalid_argument("MlpSpec: zero input or output dim");
  }
  for (std::size_t w : hidden) {
    if (w == 0) throw std::invalid_argument("MlpSpec: zero hidden width");
  }
  if (!batch_norm.empty() && batch_norm.size() != hidden.size()) {
    throw std::invalid_argument(
        "MlpSpec: batch_norm flags must match hidden layer count");
  }
}

bool MlpSpec::has_batch_norm(std::size_t hidden_idx) const {
  return hidden_idx < batch_norm.size() && batch_norm[hidden_idx];
}

std::size_t MlpSpec::parameter_count() const {
  std::size_t count = 0;
  std::size_t fan_in = input_dim;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    count += fan_in * hidden[l] + hidden[l];
    if (has_batch_norm(l)) count += 2 * hidden[l];
    fan_in = hidden[l];
  }
  count += fan_in * output_dim + output_dim;
  return count;
}

MlpModel::MlpModel(MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
}

std::string MlpModel::param_name(std::size_t i) const {
  return i < param_names_.size() ? param_names_[i]
                                 : "param" + std::to_string(i);
}

std::uint64_t MlpModel::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const DenseTensor& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.raw());
    for (std::size_t i = 0, n = t.numel() * sizeof(double); i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params_) feed(p);
  for (const auto& p : running_mean_) feed(p);
  for (const auto& p : running_var_) feed(p);
  return h;
}

MlpModel init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  MlpModel model(spec);
  Rng rng(seed);

  std::size_t fan_in = spec.input_dim;
  auto push_layer = [&](std::size_t l, std::size_t fan_out, bool bn) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    DenseTensor w = DenseTensor::zeros({fan_in, fan_out});
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    model.params_.push_back(std::move(w));
    model.param_names_.push_back("layer" + std::to_string(l) + ".weight");
    model.params_.push_back(DenseTensor::zeros({fan_out}));
    model.param_names_.push_back("layer" + std::to_string(l) + ".bias");
    if (bn) {
      model.params_.push_back(DenseTensor::full({fan_out}, 1.0));
      model.param_names_.push_back("layer" + std::to_string(l) + ".bn_scale");
      model.params_.push_back(DenseTensor::zeros({fan_out}));
      model.param_names_.push_back("layer" + std::to_string(l) + ".bn_shift");
      model.running_mean_.push_back(DenseTensor::zeros({fan_out}));
      model.running_var_.push_back(DenseTensor::full({fan_out}, 1.0));
    }
    fan_in = fan_out;
  };

  for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
    push_layer(l, spec.hidden[l], spec.has_batch_norm(l));
  }
  push_layer(spec.hidden.size(), spec.output_dim, false);
  return model;
}

MlpBinding bind_params(Tape& tape, const MlpModel& model) {
  MlpBinding binding;
  binding.params.reserve(model.params().size());
  for (const auto& p : model.params()) binding.params.push_back(tape.leaf(p));
  return binding;
}

NodeId mlp_apply(Tape& tape, MlpModel& model, const MlpBinding& binding,
                 NodeId input, bool train_mode) {
  const MlpSpec& spec = model.spec();
  if (tape.value(input).cols() != spec.input_dim) {
    throw std::invalid_argument(
        "mlp_apply: batch width " +
        std::to_string(tape.value(input).cols()) + " != input dim " +
        std::to_string(spec.input_dim));
  }

  NodeId h = input;
  std::size_t p = 0;
  std::size_t bn_idx = 0;
  for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
    NodeId w = binding.params[p++];
    NodeId b = binding.params[p++];
    h = tape.add_rowvec(tape.matmul(h, w), b);
    if (spec.has_batch_norm(l)) {
      NodeId scale = binding.params[p++];
      NodeId shift = binding.params[p++];
      std::size_t batch = tape.value(h).rows();
      if (train_mode) {
        if (batch < 2) {
          throw std::invalid_argument(
              "mlp_apply: batch norm in train mode needs batch size >= 2");
        }
        NodeId mu = tape.col_mean(h);
        NodeId centered = tape.add_rowvec(h, tape.neg(mu));
        NodeId var = tape.col_mean(tape.mul(centered, centered));
        NodeId inv_std =
            tape.pow_scalar(tape.add_scalar(var, kBatchNormEps), -0.5);
        h = tape.add_rowvec(
            tape.mul_rowvec(tape.mul_rowvec(centered, inv_std), scale), shift);
        // Exponential moving average of the batch statistics.
        DenseTensor& rm = model.running_mean()[bn_idx];
        DenseTensor& rv = model.running_var()[bn_idx];
        const DenseTensor& mu_v = tape.value(mu);
        const DenseTensor& var_v = tape.value(var);
        for (std::size_t j = 0; j < rm.numel(); ++j) {
          rm[j] = (1.0 - kBatchNormMomentum) * rm[j] +
                  kBatchNormMomentum * mu_v[j];
          rv[j] = (1.0 - kBatchNormMomentum) * rv[j] +
                  kBatchNormMomentum * var_v[j];
        }
      } else {
        NodeId mu = tape.leaf(model.running_mean()[bn_idx]);
        DenseTensor inv = model.running_var()[bn_idx];
        for (double& v : inv.data()) v = 1.0 / std::sqrt(v + kBatchNormEps);
        NodeId inv_std = tape.leaf(std::move(inv));
        NodeId centered = tape.add_rowvec(h, tape.neg(mu));
        h = tape.add_rowvec(
            tape.mul_rowvec(tape.mul_rowvec(centered, inv_std), scale), shift);
      }
      ++bn_idx;
    }
    h = tape.relu(h);
  }
  NodeId w = binding.params[p++];
  NodeId b = binding.params[p++];
  return tape.add_rowvec(tape.matmul(h, w), b);
}

DenseTensor predict(MlpModel& model, const DenseTensor& batch,
                    bool train_mode) {
  Tape tape;
  NodeId x = tape.leaf(batch);
  MlpBinding binding = bind_params(tape, model);
  NodeId out = mlp_apply(tape, model, binding, x, train_mode);
  return tape.value(out);
}

void clip_weights(MlpModel& model, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("clip_weights: c must be > 0");
  for (auto& p : model.params()) {
    for (double& v : p.data()) v = std::clamp(v, -c, c);
  }
}

namespace {

json tensor_to_json(const DenseTensor& t) {
  json j;
  j["shape"] = t.shape();
  j["data"] = std::vector<double>(t.data().begin(), t.data().end());
  return j;
}

DenseTensor tensor_from_json(const json& j) {
  return DenseTensor(j.at("shape").get<std::vector<std::size_t>>(),
                     j.at("data").get<std::vector<double>>());
}

}  // namespace

std::string save_checkpoint(const MlpModel& model) {
  json j;
  j["format"] = "mcr-mlp-v1";
  const MlpSpec& spec = model.spec();
  j["spec"] = {{"input_dim", spec.input_dim},
               {"hidden", spec.hidden},
               {"output_dim", spec.output_dim},
               {"activation", "relu"},
               {"batch_norm", spec.batch_norm}};
  j["params"] = json::array();
  for (const auto& p : model.params()) j["params"].push_back(tensor_to_json(p));
  j["running_mean"] = json::array();
  for (const auto& p : model.running_mean()) {
    j["running_mean"].push_back(tensor_to_json(p));
  }
  j["running_var"] = json::array();
  for (const auto& p : model.running_var()) {
    j["running_var"].push_back(tensor_to_json(p));
  }
  j["train_mode"] = model.train_mode();
  return j.dump(2);
}

MlpModel load_checkpoint(const std::string& text) {
  json j = json::parse(text);
  if (j.at("format") != "mcr-mlp-v1") {
    throw std::invalid_argument("load_checkpoint: unknown format");
  }
  MlpSpec spec;
  spec.input_dim = j.at("spec").at("input_dim").get<std::size_t>();
  spec.hidden = j.at("spec").at("hidden").get<std::vector<std::size_t>>();
  spec.output_dim = j.at("spec").at("output_dim").get<std::size_t>();
  spec.batch_norm = j.at("spec").at("batch_norm").get<std::vector<bool>>();
  spec.validate();

  MlpModel model = init_mlp(spec, 0);
  auto& params = model.params();
  const json& jp = j.at("params");
  if (jp.size() != params.size()) {
    throw std::invalid_argument("load_checkpoint: parameter count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] = tensor_from_json(jp[i]);
  }
  auto load_stats = [&](const char* key, std::vector<DenseTensor>& dst) {
    const json& arr = j.at(key);
    if (arr.size() != dst.size()) {
      throw std::invalid_argument("load_checkpoint: running stats mismatch");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = tensor_from_json(arr[i]);
    }
  };
  load_stats("running_mean", model.running_mean());
  load_stats("running_var", model.running_var());
  model.set_train_mode(j.at("train_mode").get<bool>());
  return model;
}

}  // namespace mcr
