#include "ssbver/reid_head.hpp"

#include "ssbver/errors.hpp"
#include "ssbver/nn.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace ssbver {
namespace {

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_labels(const Matrix& m, const std::vector<int>& labels, const char* what) {
  if (static_cast<std::size_t>(m.rows()) != labels.size()) {
    throw ShapeMismatchError(std::string(what) + ": " + std::to_string(m.rows()) + " rows but " +
                             std::to_string(labels.size()) + " labels");
  }
}

}  // namespace

Matrix bn_neck(const Matrix& x, BnNeckState& state, BnMode mode, BnNeckTrace* trace) {
  if (x.cols() != state.running_mean.size()) throw ShapeMismatchError("bn_neck: feature dimension mismatch");
  if (mode == BnMode::eval) return bn_neck_eval(x, state);

  const auto n = x.rows();
  if (n < 2) throw DegenerateBatchError("train-mode batch normalization needs N >= 2 (got " + std::to_string(n) + ")");
  const RowVector mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - mean;
  const RowVector var = centered.array().square().colwise().sum() / static_cast<double>(n);
  const RowVector inv_std = (var.array() + state.eps).rsqrt();
  Matrix y = centered.array().rowwise() * inv_std.array();

  const double m = state.momentum;
  const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
  state.running_mean = (1.0 - m) * state.running_mean + m * mean.transpose();
  state.running_var = (1.0 - m) * state.running_var + m * unbias * var.transpose();

  if (trace) {
    trace->normalized = y;
    trace->inv_std = inv_std.transpose();
  }
  return y;
}

Matrix bn_neck_eval(const Matrix& x, const BnNeckState& state) {
  if (x.cols() != state.running_mean.size()) throw ShapeMismatchError("bn_neck: feature dimension mismatch");
  const RowVector inv_std = (state.running_var.array() + state.eps).rsqrt().transpose();
  return (x.rowwise() - state.running_mean.transpose()).array().rowwise() * inv_std.array();
}

Matrix bn_neck_backward(const BnNeckTrace& trace, const Matrix& d_y) {
  const double n = static_cast<double>(d_y.rows());
  const RowVector sum_dy = d_y.colwise().sum();
  const RowVector sum_dy_xhat = d_y.cwiseProduct(trace.normalized).colwise().sum();
  Matrix dx = (n * d_y).rowwise() - sum_dy;
  dx -= (trace.normalized.array().rowwise() * sum_dy_xhat.array()).matrix();
  return (dx.array().rowwise() * (trace.inv_std.transpose().array() / n)).matrix();
}

LossResult triplet_loss(const Matrix& x, const std::vector<int>& labels) {
  check_labels(x, labels, "triplet_loss");
  const int n = static_cast<int>(x.rows());
  LossResult out{0.0, Matrix::Zero(x.rows(), x.cols())};
  if (n == 0) throw MiningError("empty batch");

  Matrix dist(n, n);
  for (int i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) dist(i, j) = dist(j, i) = (x.row(i) - x.row(j)).norm();
  }

  for (int a = 0; a < n; ++a) {
    int hard_pos = -1;
    int hard_neg = -1;
    for (int j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (hard_pos < 0 || dist(a, j) > dist(a, hard_pos)) hard_pos = j;
      } else if (hard_neg < 0 || dist(a, j) < dist(a, hard_neg)) {
        hard_neg = j;
      }
    }
    if (hard_pos < 0) throw MiningError("anchor " + std::to_string(a) + " has no positive");
    if (hard_neg < 0) throw MiningError("anchor " + std::to_string(a) + " has no negative");

    const double dp = dist(a, hard_pos);
    const double dn = dist(a, hard_neg);
    out.value += softplus(dp - dn);

    const double s = sigmoid(dp - dn) / n;
    if (dp > 0.0) {
      const RowVector g = s * (x.row(a) - x.row(hard_pos)) / dp;
      out.grad.row(a) += g;
      out.grad.row(hard_pos) -= g;
    }
    if (dn > 0.0) {
      const RowVector g = s * (x.row(a) - x.row(hard_neg)) / dn;
      out.grad.row(a) -= g;
      out.grad.row(hard_neg) += g;
    }
  }
  out.value /= n;
  return out;
}

Vector smooth_targets(int class_index, int k, double epsilon) {
  if (k < 1) throw RangeError("k must be >= 1");
  if (class_index < 0 || class_index >= k) {
    throw RangeError("class index " + std::to_string(class_index) + " outside [0, " + std::to_string(k) + ")");
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw RangeError("smoothing epsilon must lie in [0,1]");
  Vector y = Vector::Constant(k, epsilon / k);
  y[class_index] = 1.0 - (static_cast<double>(k - 1) / k) * epsilon;
  return y;
}

LossResult ce_loss(const Matrix& logits, const std::vector<int>& labels, double epsilon) {
  check_labels(logits, labels, "ce_loss");
  const auto n = logits.rows();
  const int k = static_cast<int>(logits.cols());
  LossResult out{0.0, Matrix::Zero(n, k)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector y = smooth_targets(labels[i], k, epsilon);
    const RowVector z = logits.row(i);
    const double zmax = z.maxCoeff();
    const RowVector shifted = z.array() - zmax;
    const double log_norm = std::log(shifted.array().exp().sum());
    const RowVector log_probs = shifted.array() - log_norm;
    out.value -= log_probs.dot(y.transpose());
    out.grad.row(i) = (log_probs.array().exp() - y.transpose().array()).matrix();
  }
  if (n > 0) {
    out.value /= static_cast<double>(n);
    out.grad /= static_cast<double>(n);
  }
  return out;
}

ReIdHeadState::ReIdHeadState(int dim, int num_classes, double smoothing, std::uint64_t seed)
    : bn(dim), epsilon(smoothing), k(num_classes) {
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  Rng rng(seed);
  Tensor w("classifier.weight", {num_classes, dim});
  for (double& v : w.values) v = rng.normal(0.0, 0.001);
  classifier.push_back(std::move(w));
  classifier.emplace_back("classifier.bias", std::vector<int>{num_classes});
}

ReIdLosses reid_losses(const Matrix& x, const std::vector<int>& labels, ReIdHeadState& head, double lambda_c,
                       double lambda_t, ParamList& classifier_grads) {
  ReIdLosses out;
  const LossResult triplet = triplet_loss(x, labels);
  out.triplet = triplet.value;

  BnNeckTrace bn_trace;
  const Matrix x_tilde = bn_neck(x, head.bn, BnMode::train, &bn_trace);
  const Matrix z = nn::linear(x_tilde, head.classifier[0], head.classifier[1]);
  const LossResult ce = ce_loss(z, labels, head.epsilon);
  out.classification = ce.value;

  const Matrix d_z = lambda_c * ce.grad;
  const Matrix d_x_tilde = nn::linear_backward(x_tilde, d_z, head.classifier[0], classifier_grads[0],
                                               classifier_grads[1]);
  out.d_features = bn_neck_backward(bn_trace, d_x_tilde) + lambda_t * triplet.grad;
  return out;
}

}  // namespace ssbver
