#include "ssbver/ssl_head.hpp"

#include "ssbver/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ssbver {
namespace {

RowVector log_softmax_row(const RowVector& logits) {
  const double m = logits.maxCoeff();
  const RowVector shifted = logits.array() - m;
  return shifted.array() - std::log(shifted.array().exp().sum());
}

void check_layout(const Matrix& student_out, const Matrix& teacher_out, const ViewLayout& layout) {
  if (layout.n_samples < 1 || layout.n_local < 0) throw ConfigError("invalid view layout");
  if (student_out.rows() != static_cast<Eigen::Index>(layout.n_samples) * layout.student_views() ||
      teacher_out.rows() != static_cast<Eigen::Index>(layout.n_samples) * 2) {
    throw ShapeMismatchError("SSL loss: row counts do not match the view layout");
  }
  if (student_out.cols() != teacher_out.cols()) {
    throw ShapeMismatchError("SSL loss: student and teacher output dimensions differ");
  }
}

}  // namespace

void TemperatureSchedule::validate() const {
  if (!(tau_s > 0.0 && tau_t_start > 0.0 && tau_t_end > 0.0)) throw ConfigError("temperatures must be positive");
  if (warmup_epochs < 0) throw ConfigError("temperature warmup epochs must be >= 0");
}

double TemperatureSchedule::teacher(long iteration, long iters_per_epoch) const {
  const long warmup_iters = static_cast<long>(warmup_epochs) * iters_per_epoch;
  if (warmup_iters <= 0 || iteration >= warmup_iters) return tau_t_end;
  const double t = static_cast<double>(iteration) / static_cast<double>(warmup_iters);
  return tau_t_start + (tau_t_end - tau_t_start) * t;
}

Vector student_probs(const Vector& g, double tau_s) {
  return log_softmax_row((g / tau_s).transpose()).array().exp().transpose();
}

Vector teacher_probs(const Vector& g, const CenterState& center, double tau_t) {
  return log_softmax_row(((g - center.c) / tau_t).transpose()).array().exp().transpose();
}

Matrix student_probs(const Matrix& g, double tau_s) {
  Matrix out(g.rows(), g.cols());
  for (Eigen::Index i = 0; i < g.rows(); ++i) out.row(i) = log_softmax_row(g.row(i) / tau_s).array().exp();
  return out;
}

Matrix teacher_probs(const Matrix& g, const CenterState& center, double tau_t) {
  Matrix out(g.rows(), g.cols());
  const RowVector c = center.c.transpose();
  for (Eigen::Index i = 0; i < g.rows(); ++i) out.row(i) = log_softmax_row((g.row(i) - c) / tau_t).array().exp();
  return out;
}

void update_center(CenterState& center, const Matrix& teacher_outputs) {
  if (teacher_outputs.rows() < 1) throw DegenerateBatchError("center update needs at least one teacher output");
  if (teacher_outputs.cols() != center.c.size()) throw ShapeMismatchError("center dimension mismatch");
  const Vector batch_mean = teacher_outputs.colwise().mean().transpose();
  center.c = center.momentum * center.c + (1.0 - center.momentum) * batch_mean;
}

LossResult dino_loss(const Matrix& student_out, const Matrix& teacher_out, const CenterState& center,
                     double tau_s, double tau_t, const ViewLayout& layout) {
  check_layout(student_out, teacher_out, layout);
  const int views = layout.student_views();
  const double pairs = ssl_pair_count(layout.n_local);
  const double scale = 1.0 / (pairs * layout.n_samples);

  const Matrix targets = teacher_probs(teacher_out, center, tau_t);
  LossResult out{0.0, Matrix::Zero(student_out.rows(), student_out.cols())};
  for (int s = 0; s < layout.n_samples; ++s) {
    for (int v = 0; v < views; ++v) {
      const Eigen::Index row = static_cast<Eigen::Index>(s) * views + v;
      const RowVector log_p = log_softmax_row(student_out.row(row) / tau_s);
      const RowVector p = log_p.array().exp();
      for (int t = 0; t < 2; ++t) {
        if (t == v) continue;  // same view
        const RowVector target = targets.row(static_cast<Eigen::Index>(s) * 2 + t);
        out.value -= scale * target.dot(log_p);
        // d/dg of -sum_i q_i log softmax(g/tau)_i with sum_i q_i = 1
        out.grad.row(row) += (scale / tau_s) * (p - target);
      }
    }
  }
  return out;
}

LossResult rmse_loss(const Matrix& student_out, const Matrix& teacher_out, const ViewLayout& layout) {
  check_layout(student_out, teacher_out, layout);
  const int views = layout.student_views();
  const double scale = 1.0 / (static_cast<double>(ssl_pair_count(layout.n_local)) * layout.n_samples);

  LossResult out{0.0, Matrix::Zero(student_out.rows(), student_out.cols())};
  for (int s = 0; s < layout.n_samples; ++s) {
    for (int v = 0; v < views; ++v) {
      const Eigen::Index row = static_cast<Eigen::Index>(s) * views + v;
      for (int t = 0; t < 2; ++t) {
        if (t == v) continue;
        const RowVector diff = student_out.row(row) - teacher_out.row(static_cast<Eigen::Index>(s) * 2 + t);
        const double norm = diff.norm();
        out.value += scale * norm;
        if (norm > 0.0) out.grad.row(row) += (scale / norm) * diff;
      }
    }
  }
  return out;
}

double mean_entropy(const Matrix& probs) {
  if (probs.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      const double p = probs(i, j);
      if (p > 0.0) total -= p * std::log(p);
    }
  }
  return total / static_cast<double>(probs.rows());
}

CollapseMonitor::Reading CollapseMonitor::observe(const Matrix& teacher_probabilities) {
  Reading r;
  r.entropy = mean_entropy(teacher_probabilities);
  r.max_mean_prob = teacher_probabilities.rows() > 0 ? teacher_probabilities.colwise().mean().maxCoeff() : 0.0;

  const double uniform_entropy = std::log(static_cast<double>(teacher_probabilities.cols()));
  streak_ = r.entropy > uniform_ratio_ * uniform_entropy ? streak_ + 1 : 0;
  r.uniform = streak_ >= patience_;
  r.dominant = r.max_mean_prob > dominance_threshold_;
  uniform_fired_ = uniform_fired_ || r.uniform;
  dominance_fired_ = dominance_fired_ || r.dominant;
  return r;
}

}  // namespace ssbver
