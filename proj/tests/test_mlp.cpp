#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "mcr/mlp.hpp"
#include "mcr/rng.hpp"

using mcr::DenseTensor;
using mcr::MlpModel;
using mcr::MlpSpec;
using mcr::Rng;

TEST_SUITE("mlp") {

TEST_CASE("parameter counts for the reference predictor shape") {
  MlpSpec spec = MlpSpec::make(30, {64, 64}, 20, /*batch_norm_all=*/false);
  CHECK(spec.parameter_count() == 30 * 64 + 64 + 64 * 64 + 64 + 64 * 20 + 20);
  MlpSpec bn = MlpSpec::make(30, {64, 64}, 20, /*batch_norm_all=*/true);
  CHECK(bn.parameter_count() == spec.parameter_count() + 2 * (64 + 64));
  CHECK(spec.parameter_count() == 7508);
}

TEST_CASE("init is deterministic per seed and differs across seeds") {
  MlpSpec spec = MlpSpec::make(4, {8}, 2, true);
  MlpModel a = mcr::init_mlp(spec, 31);
  MlpModel b = mcr::init_mlp(spec, 31);
  MlpModel c = mcr::init_mlp(spec, 32);
  CHECK(a.checksum() == b.checksum());
  CHECK(a.checksum() != c.checksum());
  bool any_diff = false;
  for (std::size_t k = 0; k < a.params()[0].numel(); ++k) {
    any_diff = any_diff || a.params()[0][k] != c.params()[0][k];
  }
  CHECK(any_diff);
}

TEST_CASE("zero weights map everything to zero") {
  MlpSpec spec = MlpSpec::make(3, {4}, 2, false);
  MlpModel m = mcr::init_mlp(spec, 1);
  for (auto& p : m.params()) {
    for (double& v : p.data()) v = 0.0;
  }
  DenseTensor x = DenseTensor::matrix(2, 3, {1, -2, 3, 0.5, 0, -1});
  DenseTensor y = predict(m, x, false);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("identity single-layer model reproduces its input") {
  MlpSpec spec;
  spec.input_dim = 3;
  spec.output_dim = 3;
  spec.validate();
  MlpModel m = mcr::init_mlp(spec, 1);
  auto& w = m.params()[0];
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) w.at(i, j) = i == j ? 1.0 : 0.0;
  }
  DenseTensor x = DenseTensor::matrix(2, 3, {1, 2, 3, -4, 5, -6});
  DenseTensor y = predict(m, x, false);
  CHECK(y.bit_equal(x));
}

TEST_CASE("eval outputs are row-wise and batch-composition invariant") {
  MlpSpec spec = MlpSpec::make(5, {16, 8}, 3, true);
  MlpModel m = mcr::init_mlp(spec, 77);
  Rng rng(4);
  DenseTensor x = DenseTensor::zeros({6, 5});
  for (double& v : x.data()) v = rng.normal();
  // push some statistics into the running averages first
  (void)predict(m, x, true);

  DenseTensor full = predict(m, x, false);
  auto perm = rng.permutation(6);
  DenseTensor shuffled = x.gather_rows(perm);
  DenseTensor out_shuffled = predict(m, shuffled, false);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(out_shuffled.at(i, j) == full.at(perm[i], j));
    }
  }
  // single rows evaluate identically to their batch slice
  DenseTensor one = predict(m, x.slice_rows(2, 3), false);
  for (std::size_t j = 0; j < 3; ++j) CHECK(one.at(0, j) == full.at(2, j));
}

TEST_CASE("train-mode batch norm standardizes each feature") {
  MlpSpec spec = MlpSpec::make(4, {6}, 2, true);
  MlpModel m = mcr::init_mlp(spec, 9);
  Rng rng(10);
  DenseTensor x = DenseTensor::zeros({64, 4});
  for (double& v : x.data()) v = 2.0 + 3.0 * rng.normal();

  mcr::Tape tape;
  mcr::NodeId xin = tape.leaf(x);
  mcr::MlpBinding bind = mcr::bind_params(tape, m);
  // hidden preactivation -> batch norm output sits right before the relu;
  // rebuild the first block by hand to inspect the normalized values
  mcr::NodeId pre = tape.add_rowvec(tape.matmul(xin, bind.params[0]),
                                    bind.params[1]);
  mcr::NodeId mu = tape.col_mean(pre);
  mcr::NodeId centered = tape.add_rowvec(pre, tape.neg(mu));
  mcr::NodeId var = tape.col_mean(tape.mul(centered, centered));
  mcr::NodeId inv = tape.pow_scalar(tape.add_scalar(var, mcr::kBatchNormEps),
                                    -0.5);
  mcr::NodeId normalized = tape.mul_rowvec(centered, inv);
  const DenseTensor& nv = tape.value(normalized);
  for (std::size_t j = 0; j < 6; ++j) {
    double mean = 0.0, msq = 0.0;
    for (std::size_t i = 0; i < 64; ++i) mean += nv.at(i, j);
    mean /= 64.0;
    for (std::size_t i = 0; i < 64; ++i) {
      msq += (nv.at(i, j) - mean) * (nv.at(i, j) - mean);
    }
    msq /= 64.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(msq - 1.0) < 1e-6);
  }
}

TEST_CASE("batch of one is rejected in train mode with batch norm") {
  MlpSpec spec = MlpSpec::make(3, {4}, 1, true);
  MlpModel m = mcr::init_mlp(spec, 2);
  DenseTensor x = DenseTensor::matrix(1, 3, {1, 2, 3});
  CHECK_THROWS_AS((void)predict(m, x, true), std::invalid_argument);
  CHECK_NOTHROW((void)predict(m, x, false));
}

TEST_CASE("clip_weights clamps and is idempotent in range") {
  MlpSpec spec = MlpSpec::make(3, {4}, 1, false);
  MlpModel m = mcr::init_mlp(spec, 3);
  m.params()[0].at(0, 0) = 0.5;
  mcr::clip_weights(m, 0.01);
  CHECK(m.params()[0].at(0, 0) == 0.01);
  for (const auto& p : m.params()) {
    for (double v : p.data()) CHECK(std::abs(v) <= 0.01);
  }
  std::uint64_t before = m.checksum();
  mcr::clip_weights(m, 0.01);
  CHECK(m.checksum() == before);
  CHECK_THROWS_AS(mcr::clip_weights(m, 0.0), std::invalid_argument);
}

TEST_CASE("clipped critic input-gradient norm respects the operator bound") {
  MlpSpec spec = MlpSpec::make(4, {8, 8}, 1, false);
  MlpModel m = mcr::init_mlp(spec, 5);
  mcr::clip_weights(m, 0.05);
  // spectral norm of each layer is at most its Frobenius norm
  double bound = 1.0;
  for (std::size_t l = 0; l < m.params().size(); l += 2) {
    double fro = 0.0;
    for (double v : m.params()[l].data()) fro += v * v;
    bound *= std::sqrt(fro);
  }
  Rng rng(6);
  DenseTensor x = DenseTensor::zeros({32, 4});
  for (double& v : x.data()) v = rng.normal();
  mcr::Tape tape;
  mcr::NodeId xin = tape.leaf(x);
  mcr::MlpBinding bind = mcr::bind_params(tape, m);
  mcr::NodeId out = mcr::mlp_apply(tape, m, bind, xin, false);
  mcr::NodeId gx = tape.input_gradient(out, xin);
  const DenseTensor& g = tape.value(gx);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < g.cols(); ++j) sq += g.at(i, j) * g.at(i, j);
    CHECK(std::sqrt(sq) <= bound + 1e-12);
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  MlpSpec spec = MlpSpec::make(7, {5, 3}, 2, true);
  MlpModel m = mcr::init_mlp(spec, 2024);
  Rng rng(1);
  DenseTensor x = DenseTensor::zeros({8, 7});
  for (double& v : x.data()) v = rng.normal();
  (void)predict(m, x, true);  // move running stats off their defaults

  std::string text = mcr::save_checkpoint(m);
  MlpModel back = mcr::load_checkpoint(text);
  CHECK(back.checksum() == m.checksum());
  REQUIRE(back.params().size() == m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    CHECK(back.params()[i].bit_equal(m.params()[i]));
  }
  for (std::size_t i = 0; i < m.running_mean().size(); ++i) {
    CHECK(back.running_mean()[i].bit_equal(m.running_mean()[i]));
    CHECK(back.running_var()[i].bit_equal(m.running_var()[i]));
  }
}

}  // TEST_SUITE
