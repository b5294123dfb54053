#pragma once

#include "ssbver/tensor.hpp"

#include <span>

namespace ssbver {

/// Adam with decoupled weight decay. Moments are stored as ParamLists in the
/// order of the parameter tensors passed to step(), so the caller must pass
/// the same tensors in the same order every time.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;

  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, double lr);

  long steps() const { return steps_; }
  const ParamList& first_moments() const { return m_; }
  const ParamList& second_moments() const { return v_; }
  void restore(long steps, ParamList m, ParamList v);

 private:
  long steps_ = 0;
  ParamList m_;
  ParamList v_;
};

}  // namespace ssbver
