#include "emokit/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace emokit::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Neg: return "neg";
    case Op::SumAxis: return "sum-over-axis";
    case Op::SumAll: return "sum";
    case Op::Broadcast: return "broadcast";
    case Op::RowSoftmax: return "row-softmax";
    case Op::L2NormRows: return "l2-normalize-rows";
    case Op::Max: return "elementwise-max";
    case Op::Scale: return "scalar-scale";
    case Op::GatherRows: return "gather-rows";
    case Op::Reshape: return "reshape";
  }
  return "?";
}

namespace {

double clamp_from_zero(double v) {
  if (v >= 0.0) return v < kClampEps ? kClampEps : v;
  return v > -kClampEps ? -kClampEps : v;
}

// Strides of `shape` as seen from `out` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    const std::size_t oi = i + (out.size() - shape.size());
    if (shape[i] != 1) strides[oi] = stride;
    stride *= shape[i];
  }
  return strides;
}

template <typename F>
Tensor elementwise_broadcast(const Tensor& a, const Tensor& b, const char* op, F&& f) {
  if (a.same_shape(b)) {  // fast path
    Tensor out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  const Shape os = broadcast_shape(a.shape(), b.shape(), op);
  Tensor out(os);
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);
  std::vector<std::size_t> idx(os.size(), 0);
  const std::size_t n = out.numel();
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(a[oa], b[ob]);
    for (std::size_t ax = os.size(); ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < os[ax]) break;
      oa -= sa[ax] * os[ax];
      ob -= sb[ax] * os[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

// Sum `g` down to `target` (inverse of broadcasting).
Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor out(target);
  const auto st = broadcast_strides(target, g.shape());
  std::vector<std::size_t> idx(g.rank(), 0);
  const std::size_t n = g.numel();
  std::size_t ot = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[ot] += g[i];
    for (std::size_t ax = g.rank(); ax-- > 0;) {
      ++idx[ax];
      ot += st[ax];
      if (idx[ax] < g.dim(ax)) break;
      ot -= st[ax] * g.dim(ax);
      idx[ax] = 0;
    }
  }
  return out;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a rank-2 tensor, got shape " +
                                shape_str(t.shape()));
  }
}

}  // namespace

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  const NodeId id = static_cast<NodeId>(nodes_.size() - 1);
  check_finite(id);
  return id;
}

void Graph::check_finite(NodeId id) const {
  const Node& n = nodes_[id];
  if (!n.value.all_finite()) {
    throw std::runtime_error(std::string(op_name(n.op)) + ": produced a non-finite value");
  }
}

NodeId Graph::input(Tensor v, bool trainable) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(v);
  n.trainable = trainable;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  Node n;
  n.op = Op::Add;
  n.inputs = {a, b};
  n.value = elementwise_broadcast(value(a), value(b), "add", [](double x, double y) { return x + y; });
  return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  Node n;
  n.op = Op::Sub;
  n.inputs = {a, b};
  n.value = elementwise_broadcast(value(a), value(b), "sub", [](double x, double y) { return x - y; });
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  Node n;
  n.op = Op::Mul;
  n.inputs = {a, b};
  n.value = elementwise_broadcast(value(a), value(b), "mul", [](double x, double y) { return x * y; });
  return push(std::move(n));
}

NodeId Graph::div(NodeId a, NodeId b) {
  Node n;
  n.op = Op::Div;
  n.inputs = {a, b};
  n.value = elementwise_broadcast(value(a), value(b), "div",
                                  [](double x, double y) { return x / clamp_from_zero(y); });
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_rank2(B, "matmul");
  if (A.rank() < 1 || A.row_len() != B.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(A.shape()) + " and " +
                                shape_str(B.shape()));
  }
  const std::size_t rows = A.row_count(), k = B.dim(0), m = B.dim(1);
  Shape os(A.shape().begin(), A.shape().end() - 1);
  os.push_back(m);
  Node n;
  n.op = Op::MatMul;
  n.inputs = {a, b};
  n.value = Tensor(os);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* ar = A.row(i);
    double* orow = n.value.row(i);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = ar[kk];
      if (av == 0.0) continue;
      const double* br = B.row(kk);
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * br[j];
    }
  }
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId a) {
  const Tensor& A = value(a);
  require_rank2(A, "transpose");
  Node n;
  n.op = Op::Transpose;
  n.inputs = {a};
  n.value = Tensor({A.dim(1), A.dim(0)});
  for (std::size_t i = 0; i < A.dim(0); ++i)
    for (std::size_t j = 0; j < A.dim(1); ++j) n.value.at(j, i) = A.at(i, j);
  return push(std::move(n));
}

NodeId Graph::exp(NodeId a) {
  Node n;
  n.op = Op::Exp;
  n.inputs = {a};
  n.value = value(a);
  for (double& v : n.value.data()) v = std::exp(v);
  return push(std::move(n));
}

NodeId Graph::log(NodeId a) {
  Node n;
  n.op = Op::Log;
  n.inputs = {a};
  n.value = value(a);
  for (double& v : n.value.data()) v = std::log(v < kClampEps ? kClampEps : v);
  return push(std::move(n));
}

NodeId Graph::neg(NodeId a) {
  Node n;
  n.op = Op::Neg;
  n.inputs = {a};
  n.value = value(a);
  for (double& v : n.value.data()) v = -v;
  return push(std::move(n));
}

NodeId Graph::sum_axis(NodeId a, int axis, bool keepdims) {
  const Tensor& A = value(a);
  if (axis < 0 || static_cast<std::size_t>(axis) >= A.rank()) {
    throw std::invalid_argument("sum-over-axis: axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(A.shape()));
  }
  const std::size_t ax = static_cast<std::size_t>(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= A.dim(i);
  for (std::size_t i = ax + 1; i < A.rank(); ++i) inner *= A.dim(i);
  Shape os;
  for (std::size_t i = 0; i < A.rank(); ++i) {
    if (i == ax) {
      if (keepdims) os.push_back(1);
    } else {
      os.push_back(A.dim(i));
    }
  }
  Node n;
  n.op = Op::SumAxis;
  n.inputs = {a};
  n.axis = axis;
  n.keepdims = keepdims;
  n.value = Tensor(os);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* base = A.data().data() + o * A.dim(ax) * inner;
    double* out = n.value.data().data() + o * inner;
    for (std::size_t m = 0; m < A.dim(ax); ++m) {
      const double* src = base + m * inner;
      for (std::size_t i = 0; i < inner; ++i) out[i] += src[i];
    }
  }
  return push(std::move(n));
}

NodeId Graph::sum_all(NodeId a) {
  Node n;
  n.op = Op::SumAll;
  n.inputs = {a};
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId Graph::broadcast(NodeId a, Shape target) {
  const Tensor& A = value(a);
  if (broadcast_shape(A.shape(), target, "broadcast") != target) {
    throw std::invalid_argument("broadcast: shape " + shape_str(A.shape()) +
                                " does not broadcast to " + shape_str(target));
  }
  Node n;
  n.op = Op::Broadcast;
  n.inputs = {a};
  n.value = elementwise_broadcast(Tensor(target, std::vector<double>(shape_numel(target), 0.0)), A,
                                  "broadcast", [](double, double y) { return y; });
  return push(std::move(n));
}

NodeId Graph::row_softmax(NodeId a) {
  const Tensor& A = value(a);
  if (A.rank() == 0) throw std::invalid_argument("row-softmax: scalar input");
  Node n;
  n.op = Op::RowSoftmax;
  n.inputs = {a};
  n.value = A;
  const std::size_t rows = A.row_count(), cols = A.row_len();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = n.value.row(r);
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= s;
  }
  return push(std::move(n));
}

NodeId Graph::l2_normalize_rows(NodeId a) {
  const Tensor& A = value(a);
  if (A.rank() == 0) throw std::invalid_argument("l2-normalize-rows: scalar input");
  Node n;
  n.op = Op::L2NormRows;
  n.inputs = {a};
  n.value = A;
  const std::size_t rows = A.row_count(), cols = A.row_len();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = n.value.row(r);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += row[j] * row[j];
    const double norm = std::sqrt(s);
    if (norm < 1e-150) {
      throw std::runtime_error("l2-normalize-rows: zero row at index " + std::to_string(r));
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= norm;
  }
  return push(std::move(n));
}

NodeId Graph::max(NodeId a, NodeId b) {
  Node n;
  n.op = Op::Max;
  n.inputs = {a, b};
  n.value = elementwise_broadcast(value(a), value(b), "elementwise-max",
                                  [](double x, double y) { return x >= y ? x : y; });
  return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double factor) {
  Node n;
  n.op = Op::Scale;
  n.inputs = {a};
  n.factor = factor;
  n.value = value(a);
  for (double& v : n.value.data()) v *= factor;
  return push(std::move(n));
}

NodeId Graph::gather_rows(NodeId a, std::vector<std::size_t> rows) {
  const Tensor& A = value(a);
  if (A.rank() == 0) throw std::invalid_argument("gather-rows: scalar input");
  const std::size_t rc = A.row_count(), rl = A.row_len();
  for (std::size_t r : rows) {
    if (r >= rc) {
      throw std::invalid_argument("gather-rows: row " + std::to_string(r) + " out of range for " +
                                  shape_str(A.shape()) + " viewed as " + std::to_string(rc) + " rows");
    }
  }
  Node n;
  n.op = Op::GatherRows;
  n.inputs = {a};
  n.value = Tensor({rows.size(), rl});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = A.row(rows[i]);
    std::copy(src, src + rl, n.value.row(i));
  }
  n.rows = std::move(rows);
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId a, Shape target) {
  const Tensor& A = value(a);
  if (shape_numel(target) != A.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(A.shape()) + " as " +
                                shape_str(target));
  }
  Node n;
  n.op = Op::Reshape;
  n.inputs = {a};
  n.value = Tensor(std::move(target), A.data());
  return push(std::move(n));
}

std::vector<std::pair<NodeId, Tensor>> Graph::backward(NodeId root) const {
  const Node& rn = nodes_[root];
  if (rn.value.rank() != 0) {
    throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                shape_str(rn.value.shape()));
  }

  // Adjoints allocated lazily; empty tensor means "no contribution yet".
  std::vector<Tensor> adj(nodes_.size());
  adj[root] = Tensor::scalar(1.0);

  auto accumulate = [&](NodeId id, Tensor g) {
    if (adj[id].numel() == 0) {
      adj[id] = std::move(g);
    } else {
      Tensor& dst = adj[id];
      for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
    }
  };

  for (NodeId id = root + 1; id-- > 0;) {
    if (adj[id].numel() == 0) continue;
    const Node& n = nodes_[id];
    const Tensor& g = adj[id];
    switch (n.op) {
      case Op::Input:
        break;
      case Op::Add: {
        accumulate(n.inputs[0], reduce_to_shape(g, value(n.inputs[0]).shape()));
        accumulate(n.inputs[1], reduce_to_shape(g, value(n.inputs[1]).shape()));
        break;
      }
      case Op::Sub: {
        accumulate(n.inputs[0], reduce_to_shape(g, value(n.inputs[0]).shape()));
        Tensor gb = g;
        for (double& v : gb.data()) v = -v;
        accumulate(n.inputs[1], reduce_to_shape(gb, value(n.inputs[1]).shape()));
        break;
      }
      case Op::Mul: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        accumulate(n.inputs[0], reduce_to_shape(elementwise_broadcast(g, b, "mul-vjp",
                                                [](double gv, double bv) { return gv * bv; }),
                                                a.shape()));
        accumulate(n.inputs[1], reduce_to_shape(elementwise_broadcast(g, a, "mul-vjp",
                                                [](double gv, double av) { return gv * av; }),
                                                b.shape()));
        break;
      }
      case Op::Div: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        accumulate(n.inputs[0], reduce_to_shape(elementwise_broadcast(g, b, "div-vjp",
                                                [](double gv, double bv) { return gv / clamp_from_zero(bv); }),
                                                a.shape()));
        // d/db (a / clamp(b)) is zero inside the clamped band.
        Tensor gb = elementwise_broadcast(g, n.value, "div-vjp",
                                          [](double gv, double qv) { return gv * qv; });
        gb = elementwise_broadcast(gb, b, "div-vjp", [](double gq, double bv) {
          if (bv > -kClampEps && bv < kClampEps) return 0.0;
          return -gq / bv;
        });
        accumulate(n.inputs[1], reduce_to_shape(gb, b.shape()));
        break;
      }
      case Op::MatMul: {
        const Tensor& A = value(n.inputs[0]);
        const Tensor& B = value(n.inputs[1]);
        const std::size_t rows = A.row_count(), k = B.dim(0), m = B.dim(1);
        Tensor ga(A.shape());
        Tensor gb(B.shape());
        for (std::size_t i = 0; i < rows; ++i) {
          const double* gr = g.row(i);
          const double* ar = A.row(i);
          double* gar = ga.row(i);
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* br = B.row(kk);
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += gr[j] * br[j];
            gar[kk] = s;
            const double av = ar[kk];
            if (av != 0.0) {
              double* gbr = gb.row(kk);
              for (std::size_t j = 0; j < m; ++j) gbr[j] += av * gr[j];
            }
          }
        }
        accumulate(n.inputs[0], std::move(ga));
        accumulate(n.inputs[1], std::move(gb));
        break;
      }
      case Op::Transpose: {
        const Tensor& A = value(n.inputs[0]);
        Tensor ga(A.shape());
        for (std::size_t i = 0; i < A.dim(0); ++i)
          for (std::size_t j = 0; j < A.dim(1); ++j) ga.at(i, j) = g.at(j, i);
        accumulate(n.inputs[0], std::move(ga));
        break;
      }
      case Op::Exp: {
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= n.value[i];
        accumulate(n.inputs[0], std::move(ga));
        break;
      }
      case Op::Log: {
        const Tensor& a = value(n.inputs[0]);
        Tensor ga = g;
        for (std::size_t i = 0; i < ga.numel(); ++i) {
          ga[i] = a[i] < kClampEps ? 0.0 : ga[i] / a[i];
        }
        accumulate(n.inputs[0], std::move(ga));
        break;
      }
      case Op::Neg: {
        Tensor ga = g;
        for (double& v : ga.data()) v = -v;
        accumulate(n.inputs[0], std::move(ga));
        break;
      }
      case Op::SumAxis: {
        const Tensor& A = value(n.inputs[0]);
        const std::size_t ax = static_cast<std::size_t>(n.axis);
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < ax; ++i) outer *= A.dim(i);
        for (std::size_t i = ax + 1; i < A.rank(); ++i) inner *= A.dim(i);
        Tensor ga(A.shape());
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = g.data().data() + o * inner;
          double* base = ga.data().data() + o * A.dim(ax) * inner;
          for (std::size_t m2 = 0; m2 < A.dim(ax); ++m2) {
            double* dst = base + m2 * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] = src[i];
          }
        }
        accumulate(n.inputs[0], std::move(ga));
        break;
      }
      case Op::SumAll: {
        const Tensor& A = value(n.inputs[0]);
        accumulate(n.inputs[0], Tensor::full(A.shape(), g.scalar_value()));
        break;
      }
      case Op::Broadcast: {
        accumulate(n.inputs[0], reduce_to_shape(g, value(n.inputs[0]).shape()));
        break;
      }
      case Op::RowSoftmax: {
        const Tensor& y = n.value;
        Tensor ga(y.shape());
        const std::size_t rows = y.row_count(), cols = y.row_len();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* yr = y.row(r);
          const double* gr = g.row(r);
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
          double* gar = ga.row(r);
          for (std::size_t j = 0; j < cols; ++j) gar[j] = yr[j] * (gr[j] - dot);
        }
        accumulate(n.inputs[0], std::move(ga));
        break;
      }
      case Op::L2NormRows: {
        const Tensor& A = value(n.inputs[0]);
        const Tensor& y = n.value;
        Tensor ga(A.shape());
        const std::size_t rows = y.row_count(), cols = y.row_len();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* ar = A.row(r);
          const double* yr = y.row(r);
          const double* gr = g.row(r);
          double s = 0.0;
          for (std::size_t j = 0; j < cols; ++j) s += ar[j] * ar[j];
          const double norm = std::sqrt(s);
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
          double* gar = ga.row(r);
          for (std::size_t j = 0; j < cols; ++j) gar[j] = (gr[j] - dot * yr[j]) / norm;
        }
        accumulate(n.inputs[0], std::move(ga));
        break;
      }
      case Op::Max: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        // Ties route the gradient to the first argument.
        Tensor pick = elementwise_broadcast(a, b, "max-vjp",
                                            [](double x, double y) { return x >= y ? 1.0 : 0.0; });
        Tensor ga = g, gb = g;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          ga[i] = g[i] * pick[i];
          gb[i] = g[i] * (1.0 - pick[i]);
        }
        accumulate(n.inputs[0], reduce_to_shape(ga, a.shape()));
        accumulate(n.inputs[1], reduce_to_shape(gb, b.shape()));
        break;
      }
      case Op::Scale: {
        Tensor ga = g;
        for (double& v : ga.data()) v *= n.factor;
        accumulate(n.inputs[0], std::move(ga));
        break;
      }
      case Op::GatherRows: {
        const Tensor& A = value(n.inputs[0]);
        Tensor ga(A.shape());
        const std::size_t rl = A.row_len();
        for (std::size_t i = 0; i < n.rows.size(); ++i) {
          const double* src = g.row(i);
          double* dst = ga.row(n.rows[i]);
          for (std::size_t j = 0; j < rl; ++j) dst[j] += src[j];
        }
        accumulate(n.inputs[0], std::move(ga));
        break;
      }
      case Op::Reshape: {
        accumulate(n.inputs[0], Tensor(value(n.inputs[0]).shape(), g.data()));
        break;
      }
    }
  }

  std::vector<std::pair<NodeId, Tensor>> grads;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].trainable) continue;
    if (adj[id].numel() == 0) adj[id] = Tensor(nodes_[id].value.shape());
    grads.emplace_back(id, std::move(adj[id]));
  }
  return grads;
}

NodeId Graph::log_row_softmax(NodeId a) {
  const Tensor& A = value(a);
  const std::size_t rows = A.row_count(), cols = A.row_len();
  Shape max_shape = A.shape();
  max_shape.back() = 1;
  Tensor row_max(max_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = A.row(r);
    double mx = ar[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, ar[j]);
    row_max[r] = mx;
  }
  const NodeId centered = sub(a, broadcast(constant(std::move(row_max)), A.shape()));
  const NodeId lse = log(sum_axis(exp(centered), static_cast<int>(A.rank()) - 1, true));
  return sub(centered, broadcast(lse, A.shape()));
}

NodeId Graph::diagonal_cross_entropy(NodeId a) {
  const Tensor& A = value(a);
  require_rank2(A, "diagonal_cross_entropy");
  if (A.dim(0) != A.dim(1)) {
    throw std::invalid_argument("diagonal_cross_entropy: matrix is not square, shape " +
                                shape_str(A.shape()));
  }
  const std::size_t n = A.dim(0);
  const NodeId picked = mul(log_row_softmax(a), constant(Tensor::identity(n)));
  return scale(sum_all(picked), -1.0 / static_cast<double>(n));
}

}  // namespace emokit::ad
