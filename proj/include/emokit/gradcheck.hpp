#pragma once

#include <functional>
#include <vector>

#include "emokit/graph.hpp"

namespace emokit {

// A scalar-valued function expressed as a graph builder: given a graph and the
// node ids of its inputs, returns the root node id.
using ScalarFn = std::function<ad::NodeId(ad::Graph&, const std::vector<ad::NodeId>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central-difference check of reverse-mode gradients. Per coordinate the
// relative error is |analytic - numeric| / max(1, |analytic|, |numeric|);
// the report carries the worst coordinate.
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step = 1e-5);

}  // namespace emokit
