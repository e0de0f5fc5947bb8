#include <algorithm>
#include <cmath>

#include "clmlf/training.hpp"

namespace clmlf {

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
  return m;
}

std::vector<std::string> GradCheckReport::failing() const {
  std::vector<std::string> out;
  for (const auto& b : blocks) {
    if (!(b.max_rel_error < threshold)) out.push_back(b.name);
  }
  return out;
}

GradCheckReport gradient_check(ParameterSet<double>& params, const std::function<Var(Graph<double>&)>& loss,
                               double eps, double threshold) {
  GradCheckReport report;
  report.threshold = threshold;

  params.zero_grad();
  {
    Graph<double> g(&params, true);
    g.backward(loss(g));
  }
  auto evaluate = [&]() {
    Graph<double> g(&params, false);
    return g.scalar(loss(g));
  };

  for (auto& p : params.all()) {
    BlockCheck check;
    check.name = p.name;
    check.elements = p.value.size();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + eps;
      const double plus = evaluate();
      p.value[i] = saved - eps;
      const double minus = evaluate();
      p.value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double analytic = p.grad[i];
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
      check.max_rel_error = std::max(check.max_rel_error, std::isfinite(abs_err) ? abs_err / denom : INFINITY);
    }
    report.blocks.push_back(check);
  }
  return report;
}

}  // namespace clmlf
