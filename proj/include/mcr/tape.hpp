#pragma once

#include <span>
#include <vector>

#include "mcr/tensor.hpp"

namespace mcr {

using NodeId = int;

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kAddScalar,
  kMulScalar,
  kPowScalar,
  kSqrt,
  kRelu,
  kReluStep,
  kMatMul,    // A * B
  kMatMulNT,  // A * B^T
  kMatMulTN,  // A^T * B
  kAddRowVec,
  kMulRowVec,
  kColSum,
  kColMean,
  kRowSum,
  kConcatCols,
  kExpandScalar,
  kSum,
  kMean,
};

const char* op_name(OpKind kind);

/// One recorded operation: inputs, scalar attribute, and the cached
/// forward value. grad_level distinguishes primal nodes (0) from nodes
/// created by symbolic differentiation (1).
struct TapeNode {
  OpKind kind;
  NodeId a = -1;
  NodeId b = -1;
  double c = 0.0;
  DenseTensor value;
  int grad_level = 0;
};

/// Append-only expression tape with eager forward evaluation.
///
/// Building an expression computes and caches its value (the forward
/// pass); backward() runs a numeric reverse sweep; input_gradient()
/// differentiates symbolically, appending nodes that themselves support
/// one further backward() (gradient-of-gradient). Deeper nesting is
/// rejected. Single-writer; independent tapes are thread-safe.
class Tape {
 public:
  Tape() = default;

  NodeId leaf(DenseTensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId add_scalar(NodeId a, double c);
  NodeId mul_scalar(NodeId a, double c);
  NodeId pow_scalar(NodeId a, double c);
  NodeId sqrt(NodeId a);
  NodeId relu(NodeId a);
  NodeId relu_step(NodeId a);
  NodeId matmul(NodeId a, NodeId b);
  NodeId matmul_nt(NodeId a, NodeId b);
  NodeId matmul_tn(NodeId a, NodeId b);
  NodeId add_rowvec(NodeId x, NodeId v);
  NodeId mul_rowvec(NodeId x, NodeId v);
  NodeId col_sum(NodeId x);
  NodeId col_mean(NodeId x);
  NodeId row_sum(NodeId x);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId expand_scalar(NodeId s, std::vector<std::size_t> shape);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);

  const DenseTensor& value(NodeId id) const;
  const TapeNode& node(NodeId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Exact reverse-mode gradients of a scalar output with respect to the
  /// given leaves. Leaves outside the graph receive zero gradients.
  /// Accumulation order is fixed by node ids, so results are deterministic.
  GradientRecord backward(NodeId output, std::span<const NodeId> wrt) const;

  /// Gradient of sum(output) with respect to `input`, built as new tape
  /// nodes so the result can itself be differentiated once more via
  /// backward(). Rejects ops without a symbolic rule and any attempt to
  /// nest beyond gradient-of-gradient.
  NodeId input_gradient(NodeId output, NodeId input);

  /// Recomputes every cached value from the leaves; true iff all values
  /// reproduce bit-exactly (determinism check used by tests).
  bool replay_matches() const;

 private:
  NodeId push(OpKind kind, NodeId a, NodeId b, double c, DenseTensor value,
              int grad_level);
  void check_id(NodeId id) const;
  DenseTensor eval(OpKind kind, const DenseTensor* va, const DenseTensor* vb,
                   double c, const std::vector<std::size_t>* shape_attr) const;

  std::vector<TapeNode> nodes_;
  // Target shape attribute for kExpandScalar nodes, keyed by node id.
  std::vector<std::pair<NodeId, std::vector<std::size_t>>> expand_shapes_;
};

}  // namespace mcr
