#include "cegc/optim.hpp"

#include <cmath>

namespace cegc {

void Adam::step(ParameterStore& params) {
  auto& named = params.named();
  for (const auto& [name, t] : named) {
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in parameter '" + name + "'");
    }
  }
  if (m_.size() != named.size()) {
    m_.assign(named.size(), {});
    v_.assign(named.size(), {});
    for (std::size_t i = 0; i < named.size(); ++i) {
      m_[i].assign(named[i].second.numel(), 0.0);
      v_[i].assign(named[i].second.numel(), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor t = named[i].second;
    auto value = t.mutable_data();
    const auto grad = t.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      value[k] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
    quantize_to_float(value);
  }
}

}  // namespace cegc
