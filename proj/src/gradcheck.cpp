#include "emokit/gradcheck.hpp"

#include <cmath>
#include <cstdlib>

namespace emokit {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  ad::Graph g;
  std::vector<ad::NodeId> ids;
  ids.reserve(inputs.size());
  for (const Tensor& t : inputs) ids.push_back(g.input(t));
  return g.scalar_value(f(g, ids));
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step) {
  ad::Graph g;
  std::vector<ad::NodeId> ids;
  ids.reserve(inputs.size());
  for (const Tensor& t : inputs) ids.push_back(g.input(t, true));
  const ad::NodeId root = f(g, ids);
  const auto grads = g.backward(root);

  GradCheckReport report;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& grad = grads[i].second;
    for (std::size_t c = 0; c < probe[i].numel(); ++c) {
      const double orig = probe[i][c];
      probe[i][c] = orig + step;
      const double fp = evaluate(f, probe);
      probe[i][c] = orig - step;
      const double fm = evaluate(f, probe);
      probe[i][c] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = grad[c];
      const double rel = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = i;
        report.worst_coord = c;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace emokit
