#pragma once

#include "ssbver/rng.hpp"
#include "ssbver/tensor.hpp"

#include <cstdint>
#include <vector>

namespace ssbver {

/// Scalar loss together with its gradient w.r.t. the primary input.
struct LossResult {
  double value = 0.0;
  Matrix grad;
};

enum class BnMode { train, eval };

/// Affine-free batch-norm bottleneck statistics.
struct BnNeckState {
  Vector running_mean;
  Vector running_var;
  double momentum = 0.1;
  double eps = 1e-5;  // variance floor

  explicit BnNeckState(int dim = 0)
      : running_mean(Vector::Zero(dim)), running_var(Vector::Ones(dim)) {}
};

struct BnNeckTrace {
  Matrix normalized;
  Vector inv_std;
};

/// Train mode normalizes with batch statistics (biased variance) and updates
/// the running statistics with the unbiased estimate; eval mode only reads them.
/// Throws DegenerateBatchError when N < 2 in train mode.
Matrix bn_neck(const Matrix& x, BnNeckState& state, BnMode mode, BnNeckTrace* trace = nullptr);
Matrix bn_neck_eval(const Matrix& x, const BnNeckState& state);
Matrix bn_neck_backward(const BnNeckTrace& trace, const Matrix& d_y);

/// Soft-margin batch-hard triplet loss, averaged over anchors:
///   mean_a log(1 + exp(max_p |x_a - x_p| - min_n |x_a - x_n|)).
/// Throws MiningError if any anchor lacks a positive or a negative.
LossResult triplet_loss(const Matrix& x, const std::vector<int>& labels);

/// Label-smoothed one-hot target: 1 - (k-1)/k * eps on the class, eps/k elsewhere.
Vector smooth_targets(int class_index, int k, double epsilon);

/// Mean over rows of -sum_j y_j log softmax(z)_j with smoothed targets.
LossResult ce_loss(const Matrix& logits, const std::vector<int>& labels, double epsilon);

/// BN bottleneck statistics plus the k-way linear classifier z = W x~ + B.
struct ReIdHeadState {
  BnNeckState bn;
  ParamList classifier;  // classifier.weight [k, d], classifier.bias [k]
  double epsilon = 0.2;
  int k = 0;

  ReIdHeadState() = default;
  ReIdHeadState(int dim, int num_classes, double smoothing, std::uint64_t seed);

  int dim() const { return static_cast<int>(bn.running_mean.size()); }
};

struct ReIdLosses {
  double classification = 0.0;  // L_c on z
  double triplet = 0.0;         // L_t on x
  Matrix d_features;            // weighted gradient w.r.t. x
};

/// Runs the head on student features x: triplet on x, BN neck (train mode) then
/// classifier and smoothed CE on z. d_features holds
/// lambda_c * dL_c/dx + lambda_t * dL_t/dx; classifier gradients are
/// accumulated (scaled by lambda_c) into classifier_grads.
ReIdLosses reid_losses(const Matrix& x, const std::vector<int>& labels, ReIdHeadState& head, double lambda_c,
                       double lambda_t, ParamList& classifier_grads);

}  // namespace ssbver
