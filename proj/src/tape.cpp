#include "mcr/tape.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>

namespace mcr {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap map2d(const DenseTensor& t) {
  return ConstMap(t.raw(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

void require(bool cond, OpKind kind, const std::string& detail) {
  if (!cond) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": " + detail);
  }
}

void require_same_shape(OpKind kind, const DenseTensor& a,
                        const DenseTensor& b) {
  require(a.same_shape(b), kind,
          "shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

void require_matrix(OpKind kind, const DenseTensor& t, const char* role) {
  require(t.rank() == 2, kind,
          std::string(role) + " must be rank 2, got " + t.shape_string());
}

// dst += src, elementwise.
void add_into(DenseTensor& dst, const DenseTensor& src) {
  double* d = dst.raw();
  const double* s = src.raw();
  for (std::size_t i = 0, n = dst.numel(); i < n; ++i) d[i] += s[i];
}

void sub_into(DenseTensor& dst, const DenseTensor& src) {
  double* d = dst.raw();
  const double* s = src.raw();
  for (std::size_t i = 0, n = dst.numel(); i < n; ++i) d[i] -= s[i];
}

// dst += u * v, elementwise.
void add_prod_into(DenseTensor& dst, const DenseTensor& u,
                   const DenseTensor& v) {
  double* d = dst.raw();
  const double* a = u.raw();
  const double* b = v.raw();
  for (std::size_t i = 0, n = dst.numel(); i < n; ++i) d[i] += a[i] * b[i];
}

void add_scaled_into(DenseTensor& dst, const DenseTensor& src, double s) {
  double* d = dst.raw();
  const double* a = src.raw();
  for (std::size_t i = 0, n = dst.numel(); i < n; ++i) d[i] += s * a[i];
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kNeg: return "neg";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kMulScalar: return "mul_scalar";
    case OpKind::kPowScalar: return "pow_scalar";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kRelu: return "relu";
    case OpKind::kReluStep: return "relu_step";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kMatMulNT: return "matmul_nt";
    case OpKind::kMatMulTN: return "matmul_tn";
    case OpKind::kAddRowVec: return "add_rowvec";
    case OpKind::kMulRowVec: return "mul_rowvec";
    case OpKind::kColSum: return "col_sum";
    case OpKind::kColMean: return "col_mean";
    case OpKind::kRowSum: return "row_sum";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kExpandScalar: return "expand_scalar";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
  }
  return "unknown";
}

DenseTensor Tape::eval(OpKind kind, const DenseTensor* va,
                       const DenseTensor* vb, double c,
                       const std::vector<std::size_t>* shape_attr) const {
  switch (kind) {
    case OpKind::kLeaf:
      throw std::logic_error("eval on leaf");
    case OpKind::kAdd: {
      DenseTensor out = *va;
      add_into(out, *vb);
      return out;
    }
    case OpKind::kSub: {
      DenseTensor out = *va;
      sub_into(out, *vb);
      return out;
    }
    case OpKind::kMul: {
      DenseTensor out = DenseTensor::zeros(va->shape());
      add_prod_into(out, *va, *vb);
      return out;
    }
    case OpKind::kDiv: {
      DenseTensor out = *va;
      const double* b = vb->raw();
      double* d = out.raw();
      for (std::size_t i = 0, n = out.numel(); i < n; ++i) d[i] /= b[i];
      return out;
    }
    case OpKind::kNeg: {
      DenseTensor out = *va;
      for (double& v : out.data()) v = -v;
      return out;
    }
    case OpKind::kAddScalar: {
      DenseTensor out = *va;
      for (double& v : out.data()) v += c;
      return out;
    }
    case OpKind::kMulScalar: {
      DenseTensor out = *va;
      for (double& v : out.data()) v *= c;
      return out;
    }
    case OpKind::kPowScalar: {
      DenseTensor out = *va;
      for (double& v : out.data()) v = std::pow(v, c);
      return out;
    }
    case OpKind::kSqrt: {
      DenseTensor out = *va;
      for (double& v : out.data()) v = std::sqrt(v);
      return out;
    }
    case OpKind::kRelu: {
      DenseTensor out = *va;
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case OpKind::kReluStep: {
      DenseTensor out = *va;
      for (double& v : out.data()) v = v > 0.0 ? 1.0 : 0.0;
      return out;
    }
    case OpKind::kMatMul: {
      DenseTensor out =
          DenseTensor::zeros({va->rows(), vb->cols()});
      MutMap(out.raw(), static_cast<Eigen::Index>(out.rows()),
             static_cast<Eigen::Index>(out.cols()))
          .noalias() = map2d(*va) * map2d(*vb);
      return out;
    }
    case OpKind::kMatMulNT: {
      DenseTensor out = DenseTensor::zeros({va->rows(), vb->rows()});
      MutMap(out.raw(), static_cast<Eigen::Index>(out.rows()),
             static_cast<Eigen::Index>(out.cols()))
          .noalias() = map2d(*va) * map2d(*vb).transpose();
      return out;
    }
    case OpKind::kMatMulTN: {
      DenseTensor out = DenseTensor::zeros({va->cols(), vb->cols()});
      MutMap(out.raw(), static_cast<Eigen::Index>(out.rows()),
             static_cast<Eigen::Index>(out.cols()))
          .noalias() = map2d(*va).transpose() * map2d(*vb);
      return out;
    }
    case OpKind::kAddRowVec: {
      DenseTensor out = *va;
      std::size_t r = out.rows(), cc = out.cols();
      const double* v = vb->raw();
      for (std::size_t i = 0; i < r; ++i) {
        double* row = out.raw() + i * cc;
        for (std::size_t j = 0; j < cc; ++j) row[j] += v[j];
      }
      return out;
    }
    case OpKind::kMulRowVec: {
      DenseTensor out = *va;
      std::size_t r = out.rows(), cc = out.cols();
      const double* v = vb->raw();
      for (std::size_t i = 0; i < r; ++i) {
        double* row = out.raw() + i * cc;
        for (std::size_t j = 0; j < cc; ++j) row[j] *= v[j];
      }
      return out;
    }
    case OpKind::kColSum:
    case OpKind::kColMean: {
      std::size_t r = va->rows(), cc = va->cols();
      DenseTensor out = DenseTensor::zeros({cc});
      for (std::size_t i = 0; i < r; ++i) {
        const double* row = va->raw() + i * cc;
        for (std::size_t j = 0; j < cc; ++j) out[j] += row[j];
      }
      if (kind == OpKind::kColMean) {
        for (double& v : out.data()) v /= static_cast<double>(r);
      }
      return out;
    }
    case OpKind::kRowSum: {
      std::size_t r = va->rows(), cc = va->cols();
      DenseTensor out = DenseTensor::zeros({r, 1});
      for (std::size_t i = 0; i < r; ++i) {
        const double* row = va->raw() + i * cc;
        double s = 0.0;
        for (std::size_t j = 0; j < cc; ++j) s += row[j];
        out[i] = s;
      }
      return out;
    }
    case OpKind::kConcatCols:
      return DenseTensor::hstack(*va, *vb);
    case OpKind::kExpandScalar:
      return DenseTensor::full(*shape_attr, (*va)[0]);
    case OpKind::kSum:
    case OpKind::kMean: {
      double s = 0.0;
      for (double v : va->data()) s += v;
      if (kind == OpKind::kMean) s /= static_cast<double>(va->numel());
      return DenseTensor::scalar(s);
    }
  }
  throw std::logic_error("eval: unhandled op");
}

NodeId Tape::push(OpKind kind, NodeId a, NodeId b, double c, DenseTensor value,
                  int grad_level) {
  nodes_.push_back(TapeNode{kind, a, b, c, std::move(value), grad_level});
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_id(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw std::invalid_argument("bad node id " + std::to_string(id));
  }
}

NodeId Tape::leaf(DenseTensor value) {
  if (!value.all_finite()) {
    throw std::invalid_argument("leaf: non-finite entries");
  }
  return push(OpKind::kLeaf, -1, -1, 0.0, std::move(value), 0);
}

#define MCR_BINARY_OP(fn, kind, check)                                        \
  NodeId Tape::fn(NodeId a, NodeId b) {                                       \
    check_id(a);                                                              \
    check_id(b);                                                              \
    const DenseTensor& va = nodes_[a].value;                                  \
    const DenseTensor& vb = nodes_[b].value;                                  \
    check;                                                                    \
    int lvl = std::max(nodes_[a].grad_level, nodes_[b].grad_level);           \
    return push(kind, a, b, 0.0, eval(kind, &va, &vb, 0.0, nullptr), lvl);    \
  }

MCR_BINARY_OP(add, OpKind::kAdd, require_same_shape(OpKind::kAdd, va, vb))
MCR_BINARY_OP(sub, OpKind::kSub, require_same_shape(OpKind::kSub, va, vb))
MCR_BINARY_OP(mul, OpKind::kMul, require_same_shape(OpKind::kMul, va, vb))
MCR_BINARY_OP(div, OpKind::kDiv, require_same_shape(OpKind::kDiv, va, vb))
MCR_BINARY_OP(matmul, OpKind::kMatMul, {
  require_matrix(OpKind::kMatMul, va, "lhs");
  require_matrix(OpKind::kMatMul, vb, "rhs");
  require(va.cols() == vb.rows(), OpKind::kMatMul,
          "inner dimensions differ " + va.shape_string() + " vs " +
              vb.shape_string());
})
MCR_BINARY_OP(matmul_nt, OpKind::kMatMulNT, {
  require_matrix(OpKind::kMatMulNT, va, "lhs");
  require_matrix(OpKind::kMatMulNT, vb, "rhs");
  require(va.cols() == vb.cols(), OpKind::kMatMulNT,
          "inner dimensions differ " + va.shape_string() + " vs " +
              vb.shape_string());
})
MCR_BINARY_OP(matmul_tn, OpKind::kMatMulTN, {
  require_matrix(OpKind::kMatMulTN, va, "lhs");
  require_matrix(OpKind::kMatMulTN, vb, "rhs");
  require(va.rows() == vb.rows(), OpKind::kMatMulTN,
          "inner dimensions differ " + va.shape_string() + " vs " +
              vb.shape_string());
})
MCR_BINARY_OP(add_rowvec, OpKind::kAddRowVec, {
  require_matrix(OpKind::kAddRowVec, va, "lhs");
  require(vb.rank() == 1 && vb.numel() == va.cols(), OpKind::kAddRowVec,
          "row vector " + vb.shape_string() + " does not match " +
              va.shape_string());
})
MCR_BINARY_OP(mul_rowvec, OpKind::kMulRowVec, {
  require_matrix(OpKind::kMulRowVec, va, "lhs");
  require(vb.rank() == 1 && vb.numel() == va.cols(), OpKind::kMulRowVec,
          "row vector " + vb.shape_string() + " does not match " +
              va.shape_string());
})
MCR_BINARY_OP(concat_cols, OpKind::kConcatCols, {
  require_matrix(OpKind::kConcatCols, va, "lhs");
  require_matrix(OpKind::kConcatCols, vb, "rhs");
  require(va.rows() == vb.rows(), OpKind::kConcatCols,
          "row counts differ " + va.shape_string() + " vs " +
              vb.shape_string());
})

#undef MCR_BINARY_OP

#define MCR_UNARY_OP(fn, kind, check)                                 \
  NodeId Tape::fn(NodeId a) {                                         \
    check_id(a);                                                      \
    const DenseTensor& va = nodes_[a].value;                          \
    check;                                                            \
    return push(kind, a, -1, 0.0, eval(kind, &va, nullptr, 0.0, nullptr), \
                nodes_[a].grad_level);                                \
  }

MCR_UNARY_OP(neg, OpKind::kNeg, (void)va)
MCR_UNARY_OP(sqrt, OpKind::kSqrt, (void)va)
MCR_UNARY_OP(relu, OpKind::kRelu, (void)va)
MCR_UNARY_OP(relu_step, OpKind::kReluStep, (void)va)
MCR_UNARY_OP(sum, OpKind::kSum, (void)va)
MCR_UNARY_OP(mean, OpKind::kMean, (void)va)
MCR_UNARY_OP(col_sum, OpKind::kColSum,
             require_matrix(OpKind::kColSum, va, "arg"))
MCR_UNARY_OP(col_mean, OpKind::kColMean,
             require_matrix(OpKind::kColMean, va, "arg"))
MCR_UNARY_OP(row_sum, OpKind::kRowSum,
             require_matrix(OpKind::kRowSum, va, "arg"))

#undef MCR_UNARY_OP

NodeId Tape::add_scalar(NodeId a, double c) {
  check_id(a);
  const DenseTensor& va = nodes_[a].value;
  return push(OpKind::kAddScalar, a, -1, c,
              eval(OpKind::kAddScalar, &va, nullptr, c, nullptr),
              nodes_[a].grad_level);
}

NodeId Tape::mul_scalar(NodeId a, double c) {
  check_id(a);
  const DenseTensor& va = nodes_[a].value;
  return push(OpKind::kMulScalar, a, -1, c,
              eval(OpKind::kMulScalar, &va, nullptr, c, nullptr),
              nodes_[a].grad_level);
}

NodeId Tape::pow_scalar(NodeId a, double c) {
  check_id(a);
  const DenseTensor& va = nodes_[a].value;
  return push(OpKind::kPowScalar, a, -1, c,
              eval(OpKind::kPowScalar, &va, nullptr, c, nullptr),
              nodes_[a].grad_level);
}

NodeId Tape::expand_scalar(NodeId s, std::vector<std::size_t> shape) {
  check_id(s);
  const DenseTensor& vs = nodes_[s].value;
  require(vs.numel() == 1, OpKind::kExpandScalar,
          "source is not scalar: " + vs.shape_string());
  DenseTensor value = eval(OpKind::kExpandScalar, &vs, nullptr, 0.0, &shape);
  NodeId id = push(OpKind::kExpandScalar, s, -1, 0.0, std::move(value),
                   nodes_[s].grad_level);
  expand_shapes_.emplace_back(id, std::move(shape));
  return id;
}

const DenseTensor& Tape::value(NodeId id) const {
  check_id(id);
  return nodes_[id].value;
}

const TapeNode& Tape::node(NodeId id) const {
  check_id(id);
  return nodes_[id];
}

GradientRecord Tape::backward(NodeId output, std::span<const NodeId> wrt) const {
  check_id(output);
  if (nodes_[output].value.numel() != 1) {
    throw std::invalid_argument(
        "backward: output must be scalar, got " +
        nodes_[output].value.shape_string());
  }
  for (NodeId w : wrt) {
    check_id(w);
    if (nodes_[w].kind != OpKind::kLeaf) {
      throw std::invalid_argument("backward: wrt node " + std::to_string(w) +
                                  " is not a leaf");
    }
  }

  std::vector<char> needed(nodes_.size(), 0);
  needed[static_cast<std::size_t>(output)] = 1;
  for (NodeId id = output; id >= 0; --id) {
    if (!needed[static_cast<std::size_t>(id)]) continue;
    const TapeNode& n = nodes_[static_cast<std::size_t>(id)];
    if (n.a >= 0) needed[static_cast<std::size_t>(n.a)] = 1;
    if (n.b >= 0) needed[static_cast<std::size_t>(n.b)] = 1;
  }

  std::vector<DenseTensor> adj(nodes_.size());
  std::vector<char> present(nodes_.size(), 0);
  auto grab = [&](NodeId id) -> DenseTensor& {
    auto u = static_cast<std::size_t>(id);
    if (!present[u]) {
      adj[u] = DenseTensor::zeros(nodes_[u].value.shape());
      present[u] = 1;
    }
    return adj[u];
  };

  grab(output).data()[0] = 1.0;

  for (NodeId id = output; id >= 0; --id) {
    auto u = static_cast<std::size_t>(id);
    if (!present[u]) continue;
    const TapeNode& n = nodes_[u];
    const DenseTensor& g = adj[u];
    switch (n.kind) {
      case OpKind::kLeaf:
        break;
      case OpKind::kAdd:
        add_into(grab(n.a), g);
        add_into(grab(n.b), g);
        break;
      case OpKind::kSub:
        add_into(grab(n.a), g);
        sub_into(grab(n.b), g);
        break;
      case OpKind::kMul:
        add_prod_into(grab(n.a), g, nodes_[static_cast<std::size_t>(n.b)].value);
        add_prod_into(grab(n.b), g, nodes_[static_cast<std::size_t>(n.a)].value);
        break;
      case OpKind::kDiv: {
        const DenseTensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const DenseTensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        DenseTensor& da = grab(n.a);
        DenseTensor& db = grab(n.b);
        for (std::size_t i = 0, m = g.numel(); i < m; ++i) {
          da[i] += g[i] / vb[i];
          db[i] -= g[i] * va[i] / (vb[i] * vb[i]);
        }
        break;
      }
      case OpKind::kNeg:
        sub_into(grab(n.a), g);
        break;
      case OpKind::kAddScalar:
        add_into(grab(n.a), g);
        break;
      case OpKind::kMulScalar:
        add_scaled_into(grab(n.a), g, n.c);
        break;
      case OpKind::kPowScalar: {
        const DenseTensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        DenseTensor& da = grab(n.a);
        for (std::size_t i = 0, m = g.numel(); i < m; ++i) {
          da[i] += g[i] * n.c * std::pow(va[i], n.c - 1.0);
        }
        break;
      }
      case OpKind::kSqrt: {
        DenseTensor& da = grab(n.a);
        for (std::size_t i = 0, m = g.numel(); i < m; ++i) {
          da[i] += 0.5 * g[i] / n.value[i];
        }
        break;
      }
      case OpKind::kRelu: {
        const DenseTensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        DenseTensor& da = grab(n.a);
        for (std::size_t i = 0, m = g.numel(); i < m; ++i) {
          if (va[i] > 0.0) da[i] += g[i];
        }
        break;
      }
      case OpKind::kReluStep:
        break;  // zero derivative almost everywhere
      case OpKind::kMatMul: {
        const DenseTensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const DenseTensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        DenseTensor& da = grab(n.a);
        DenseTensor& db = grab(n.b);
        MutMap(da.raw(), static_cast<Eigen::Index>(da.rows()),
               static_cast<Eigen::Index>(da.cols()))
            .noalias() += map2d(g) * map2d(vb).transpose();
        MutMap(db.raw(), static_cast<Eigen::Index>(db.rows()),
               static_cast<Eigen::Index>(db.cols()))
            .noalias() += map2d(va).transpose() * map2d(g);
        break;
      }
      case OpKind::kMatMulNT: {
        const DenseTensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const DenseTensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        DenseTensor& da = grab(n.a);
        DenseTensor& db = grab(n.b);
        MutMap(da.raw(), static_cast<Eigen::Index>(da.rows()),
               static_cast<Eigen::Index>(da.cols()))
            .noalias() += map2d(g) * map2d(vb);
        MutMap(db.raw(), static_cast<Eigen::Index>(db.rows()),
               static_cast<Eigen::Index>(db.cols()))
            .noalias() += map2d(g).transpose() * map2d(va);
        break;
      }
      case OpKind::kMatMulTN: {
        const DenseTensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const DenseTensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        DenseTensor& da = grab(n.a);
        DenseTensor& db = grab(n.b);
        MutMap(da.raw(), static_cast<Eigen::Index>(da.rows()),
               static_cast<Eigen::Index>(da.cols()))
            .noalias() += map2d(vb) * map2d(g).transpose();
        MutMap(db.raw(), static_cast<Eigen::Index>(db.rows()),
               static_cast<Eigen::Index>(db.cols()))
            .noalias() += map2d(va) * map2d(g);
        break;
      }
      case OpKind::kAddRowVec: {
        add_into(grab(n.a), g);
        DenseTensor& dv = grab(n.b);
        std::size_t r = g.rows(), cc = g.cols();
        for (std::size_t i = 0; i < r; ++i) {
          const double* row = g.raw() + i * cc;
          for (std::size_t j = 0; j < cc; ++j) dv[j] += row[j];
        }
        break;
      }
      case OpKind::kMulRowVec: {
        const DenseTensor& vx = nodes_[static_cast<std::size_t>(n.a)].value;
        const DenseTensor& vv = nodes_[static_cast<std::size_t>(n.b)].value;
        DenseTensor& dx = grab(n.a);
        DenseTensor& dv = grab(n.b);
        std::size_t r = g.rows(), cc = g.cols();
        for (std::size_t i = 0; i < r; ++i) {
          const double* grow = g.raw() + i * cc;
          const double* xrow = vx.raw() + i * cc;
          double* drow = dx.raw() + i * cc;
          for (std::size_t j = 0; j < cc; ++j) {
            drow[j] += grow[j] * vv[j];
            dv[j] += grow[j] * xrow[j];
          }
        }
        break;
      }
      case OpKind::kColSum:
      case OpKind::kColMean: {
        const DenseTensor& vx = nodes_[static_cast<std::size_t>(n.a)].value;
        DenseTensor& dx = grab(n.a);
        std::size_t r = vx.rows(), cc = vx.cols();
        double s = n.kind == OpKind::kColMean ? 1.0 / static_cast<double>(r)
                                              : 1.0;
        for (std::size_t i = 0; i < r; ++i) {
          double* drow = dx.raw() + i * cc;
          for (std::size_t j = 0; j < cc; ++j) drow[j] += s * g[j];
        }
        break;
      }
      case OpKind::kRowSum: {
        DenseTensor& dx = grab(n.a);
        std::size_t r = dx.rows(), cc = dx.cols();
        for (std::size_t i = 0; i < r; ++i) {
          double* drow = dx.raw() + i * cc;
          for (std::size_t j = 0; j < cc; ++j) drow[j] += g[i];
        }
        break;
      }
      case OpKind::kConcatCols: {
        DenseTensor& da = grab(n.a);
        DenseTensor& db = grab(n.b);
        std::size_t r = g.rows(), ca = da.cols(), cb = db.cols();
        for (std::size_t i = 0; i < r; ++i) {
          const double* grow = g.raw() + i * (ca + cb);
          double* arow = da.raw() + i * ca;
          double* brow = db.raw() + i * cb;
          for (std::size_t j = 0; j < ca; ++j) arow[j] += grow[j];
          for (std::size_t j = 0; j < cb; ++j) brow[j] += grow[ca + j];
        }
        break;
      }
      case OpKind::kExpandScalar: {
        DenseTensor& ds = grab(n.a);
        double s = 0.0;
        for (double v : g.data()) s += v;
        ds[0] += s;
        break;
      }
      case OpKind::kSum: {
        DenseTensor& dx = grab(n.a);
        double gs = g[0];
        for (double& v : dx.data()) v += gs;
        break;
      }
      case OpKind::kMean: {
        DenseTensor& dx = grab(n.a);
        double gs = g[0] / static_cast<double>(dx.numel());
        for (double& v : dx.data()) v += gs;
        break;
      }
    }
  }

  GradientRecord record;
  record.ids.reserve(wrt.size());
  record.grads.reserve(wrt.size());
  for (NodeId w : wrt) {
    auto u = static_cast<std::size_t>(w);
    record.ids.push_back(w);
    record.grads.push_back(present[u]
                               ? std::move(adj[u])
                               : DenseTensor::zeros(nodes_[u].value.shape()));
  }
  return record;
}

NodeId Tape::input_gradient(NodeId output, NodeId input) {
  check_id(output);
  check_id(input);
  if (nodes_[static_cast<std::size_t>(input)].kind != OpKind::kLeaf) {
    throw std::invalid_argument("input_gradient: input is not a leaf");
  }

  std::size_t count = static_cast<std::size_t>(output) + 1;
  std::vector<char> depends(count, 0);
  depends[static_cast<std::size_t>(input)] = 1;
  for (NodeId id = input + 1; id <= output; ++id) {
    const TapeNode& n = nodes_[static_cast<std::size_t>(id)];
    if ((n.a >= 0 && depends[static_cast<std::size_t>(n.a)]) ||
        (n.b >= 0 && depends[static_cast<std::size_t>(n.b)])) {
      depends[static_cast<std::size_t>(id)] = 1;
    }
  }

  std::vector<char> reaches(count, 0);
  reaches[static_cast<std::size_t>(output)] = 1;
  for (NodeId id = output; id >= 0; --id) {
    if (!reaches[static_cast<std::size_t>(id)]) continue;
    const TapeNode& n = nodes_[static_cast<std::size_t>(id)];
    if (n.a >= 0) reaches[static_cast<std::size_t>(n.a)] = 1;
    if (n.b >= 0) reaches[static_cast<std::size_t>(n.b)] = 1;
  }

  const DenseTensor& input_value = nodes_[static_cast<std::size_t>(input)].value;
  if (!depends[static_cast<std::size_t>(output)] ||
      !reaches[static_cast<std::size_t>(input)]) {
    return push(OpKind::kLeaf, -1, -1, 0.0,
                DenseTensor::zeros(input_value.shape()), 1);
  }

  for (NodeId id = input; id <= output; ++id) {
    auto u = static_cast<std::size_t>(id);
    if (depends[u] && reaches[u] && nodes_[u].grad_level > 0) {
      throw std::invalid_argument(
          "input_gradient: nesting beyond gradient-of-gradient (node " +
          std::to_string(id) + ", op " + op_name(nodes_[u].kind) + ")");
    }
  }

  auto raise_level = [this](NodeId id) {
    auto u = static_cast<std::size_t>(id);
    if (nodes_[u].grad_level < 1) nodes_[u].grad_level = 1;
    return id;
  };

  std::vector<NodeId> adj(count, -1);
  auto accumulate = [&](NodeId target, NodeId contribution) {
    auto u = static_cast<std::size_t>(target);
    adj[u] = adj[u] < 0 ? contribution : raise_level(add(adj[u], contribution));
  };

  adj[static_cast<std::size_t>(output)] = raise_level(
      leaf(DenseTensor::full(nodes_[static_cast<std::size_t>(output)].value.shape(), 1.0)));

  for (NodeId id = output; id > input; --id) {
    auto u = static_cast<std::size_t>(id);
    if (adj[u] < 0 || !depends[u] || !reaches[u]) continue;
    const TapeNode& n = nodes_[u];
    NodeId g = adj[u];
    bool a_dep = n.a >= 0 && depends[static_cast<std::size_t>(n.a)];
    bool b_dep = n.b >= 0 && depends[static_cast<std::size_t>(n.b)];
    switch (n.kind) {
      case OpKind::kAdd:
        if (a_dep) accumulate(n.a, g);
        if (b_dep) accumulate(n.b, g);
        break;
      case OpKind::kSub:
        if (a_dep) accumulate(n.a, g);
        if (b_dep) accumulate(n.b, raise_level(neg(g)));
        break;
      case OpKind::kMul:
        if (a_dep) accumulate(n.a, raise_level(mul(g, n.b)));
        if (b_dep) accumulate(n.b, raise_level(mul(g, n.a)));
        break;
      case OpKind::kDiv:
        if (a_dep) accumulate(n.a, raise_level(div(g, n.b)));
        if (b_dep) {
          accumulate(n.b, raise_level(neg(div(mul(g, n.a), mul(n.b, n.b)))));
        }
        break;
      case OpKind::kNeg:
        if (a_dep) accumulate(n.a, raise_level(neg(g)));
        break;
      case OpKind::kAddScalar:
        if (a_dep) accumulate(n.a, g);
        break;
      case OpKind::kMulScalar:
        if (a_dep) accumulate(n.a, raise_level(mul_scalar(g, n.c)));
        break;
      case OpKind::kPowScalar:
        if (a_dep) {
          accumulate(n.a, raise_level(mul_scalar(
                              mul(g, pow_scalar(n.a, n.c - 1.0)), n.c)));
        }
        break;
      case OpKind::kSqrt:
        if (a_dep) accumulate(n.a, raise_level(mul_scalar(div(g, id), 0.5)));
        break;
      case OpKind::kRelu:
        if (a_dep) accumulate(n.a, raise_level(mul(g, relu_step(n.a))));
        break;
      case OpKind::kReluStep:
        break;  // second derivative taken as zero almost everywhere
      case OpKind::kMatMul:
        if (a_dep) accumulate(n.a, raise_level(matmul_nt(g, n.b)));
        if (b_dep) accumulate(n.b, raise_level(matmul_tn(n.a, g)));
        break;
      case OpKind::kMatMulNT:
        if (a_dep) accumulate(n.a, raise_level(matmul(g, n.b)));
        if (b_dep) accumulate(n.b, raise_level(matmul_tn(g, n.a)));
        break;
      case OpKind::kMatMulTN:
        if (a_dep) accumulate(n.a, raise_level(matmul_nt(n.b, g)));
        if (b_dep) accumulate(n.b, raise_level(matmul(n.a, g)));
        break;
      case OpKind::kAddRowVec:
        if (a_dep) accumulate(n.a, g);
        if (b_dep) accumulate(n.b, raise_level(col_sum(g)));
        break;
      case OpKind::kMulRowVec:
        if (a_dep) accumulate(n.a, raise_level(mul_rowvec(g, n.b)));
        if (b_dep) accumulate(n.b, raise_level(col_sum(mul(g, n.a))));
        break;
      case OpKind::kSum:
        if (a_dep) {
          accumulate(n.a, raise_level(expand_scalar(
                              g, nodes_[static_cast<std::size_t>(n.a)]
                                     .value.shape())));
        }
        break;
      case OpKind::kMean:
        if (a_dep) {
          const DenseTensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
          accumulate(
              n.a,
              raise_level(mul_scalar(expand_scalar(g, va.shape()),
                                     1.0 / static_cast<double>(va.numel()))));
        }
        break;
      case OpKind::kExpandScalar:
        if (a_dep) accumulate(n.a, raise_level(sum(g)));
        break;
      case OpKind::kLeaf:
        break;
      default:
        throw std::invalid_argument(
            std::string("input_gradient: no symbolic rule for op ") +
            op_name(n.kind));
    }
  }

  NodeId result = adj[static_cast<std::size_t>(input)];
  if (result < 0) {
    result = push(OpKind::kLeaf, -1, -1, 0.0,
                  DenseTensor::zeros(input_value.shape()), 1);
  }
  return raise_level(result);
}

bool Tape::replay_matches() const {
  for (const TapeNode& n : nodes_) {
    if (n.kind == OpKind::kLeaf) continue;
    const DenseTensor* va = n.a >= 0 ? &nodes_[static_cast<std::size_t>(n.a)].value : nullptr;
    const DenseTensor* vb = n.b >= 0 ? &nodes_[static_cast<std::size_t>(n.b)].value : nullptr;
    const std::vector<std::size_t>* shape_attr = nullptr;
    if (n.kind == OpKind::kExpandScalar) {
      for (const auto& [id, shape] : expand_shapes_) {
        if (&nodes_[static_cast<std::size_t>(id)] == &n) shape_attr = &shape;
      }
    }
    DenseTensor redo = eval(n.kind, va, vb, n.c, shape_attr);
    if (!redo.bit_equal(n.value)) return false;
  }
  return true;
}

}  // namespace mcr
