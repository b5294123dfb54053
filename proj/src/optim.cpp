#include "ssbver/optim.hpp"

#include "ssbver/errors.hpp"

#include <cmath>

namespace ssbver {

void AdamW::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeMismatchError("optimizer: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->name, p->shape);
      v_.emplace_back(p->name, p->shape);
    }
  }
  if (m_.size() != params.size()) throw ShapeMismatchError("optimizer: parameter set changed between steps");

  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps_));
  const double decay = 1.0 - lr * weight_decay;

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->values;
    const auto& g = grads[i]->values;
    auto& m = m_[i].values;
    auto& v = v_[i].values;
    if (p.size() != g.size() || p.size() != m.size()) throw ShapeMismatchError("optimizer: tensor size mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      p[j] = p[j] * decay - lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
    }
  }
}

void AdamW::restore(long steps, ParamList m, ParamList v) {
  if (!same_shapes(m, v)) throw ShapeMismatchError("optimizer: moment shapes differ");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace ssbver
