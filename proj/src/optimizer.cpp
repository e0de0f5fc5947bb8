#include <cmath>

#include "clmlf/training.hpp"

namespace clmlf {

template <typename T>
void AdamW<T>::step(ParameterSet<T>& params) {
  auto& blocks = params.all();
  if (m_.empty()) {
    for (const auto& p : blocks) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  if (m_.size() != blocks.size()) throw std::logic_error("AdamW: parameter set changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double step_size = cfg_.lr / bc1;
  const double bc2_sqrt = std::sqrt(bc2);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto& p = blocks[b];
    auto& m = m_[b];
    auto& v = v_[b];
    const double decay = p.decay ? 1.0 - cfg_.lr * cfg_.weight_decay : 1.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.empty() ? 0.0 : static_cast<double>(p.grad[i]);
      double x = static_cast<double>(p.value[i]) * decay;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double denom = std::sqrt(v[i]) / bc2_sqrt + cfg_.eps;
      x -= step_size * m[i] / denom;
      p.value[i] = static_cast<T>(x);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace clmlf
