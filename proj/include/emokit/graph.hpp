#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "emokit/tensor.hpp"

namespace emokit::ad {

// Arguments of log and div denominators are clamped away from zero at this
// magnitude so degenerate similarity matrices cannot produce NaN.
inline constexpr double kClampEps = 1e-12;

enum class Op : std::uint8_t {
  Input,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  Transpose,
  Exp,
  Log,
  Neg,
  SumAxis,
  SumAll,
  Broadcast,
  RowSoftmax,
  L2NormRows,
  Max,
  Scale,
  GatherRows,
  Reshape,
};

const char* op_name(Op op);

using NodeId = std::uint32_t;

struct Node {
  Op op = Op::Input;
  std::vector<NodeId> inputs;
  Tensor value;
  bool trainable = false;          // leaves only
  int axis = -1;                   // SumAxis
  bool keepdims = false;           // SumAxis
  double factor = 0.0;             // Scale
  std::vector<std::size_t> rows;   // GatherRows
};

// Append-only forward tape over the closed primitive set. Inputs always
// precede outputs, so a single reverse sweep visits each node exactly once.
// Every primitive checks its result for non-finite values and throws.
class Graph {
 public:
  NodeId input(Tensor v, bool trainable = false);
  NodeId constant(Tensor v) { return input(std::move(v), false); }
  NodeId constant(double v) { return input(Tensor::scalar(v), false); }

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  // Applies B (k x m) to every row of A (.. x k); leading axes pass through.
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId neg(NodeId a);
  NodeId sum_axis(NodeId a, int axis, bool keepdims = false);
  NodeId sum_all(NodeId a);
  NodeId broadcast(NodeId a, Shape target);
  NodeId row_softmax(NodeId a);
  NodeId l2_normalize_rows(NodeId a);
  NodeId max(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  // Row-view gather: treats a as (row_count x row_len), may repeat rows.
  NodeId gather_rows(NodeId a, std::vector<std::size_t> rows);
  // Row-major view change; element count must match.
  NodeId reshape(NodeId a, Shape target);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  double scalar_value(NodeId id) const { return nodes_[id].value.scalar_value(); }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_[id]; }

  // Reverse-mode gradients of a scalar root. Returns one (leaf id, gradient)
  // pair per trainable input, in leaf creation order.
  std::vector<std::pair<NodeId, Tensor>> backward(NodeId root) const;

  // --- composites (built from the primitives above) ---

  // Numerically stable log(row_softmax(x)); the per-row max is injected as a
  // detached constant, which leaves values and gradients exact.
  NodeId log_row_softmax(NodeId a);
  // Mean over rows of -log_row_softmax(a)[i][i]; a must be square.
  NodeId diagonal_cross_entropy(NodeId a);

 private:
  NodeId push(Node n);
  void check_finite(NodeId id) const;

  std::vector<Node> nodes_;
};

}  // namespace emokit::ad
