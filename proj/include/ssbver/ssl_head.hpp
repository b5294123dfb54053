#pragma once

#include "ssbver/reid_head.hpp"
#include "ssbver/tensor.hpp"

namespace ssbver {

/// EMA of teacher projector outputs; starts at zero.
struct CenterState {
  Vector c;
  double momentum = 0.9;

  explicit CenterState(int dim = 0, double m = 0.9) : c(Vector::Zero(dim)), momentum(m) {}
};

struct TemperatureSchedule {
  double tau_s = 0.1;
  double tau_t_start = 0.0005;
  double tau_t_end = 0.001;
  int warmup_epochs = 10;

  void validate() const;
  /// Linear from tau_t_start to tau_t_end over the warmup epochs, then constant.
  double teacher(long iteration, long iters_per_epoch) const;
};

/// softmax(g / tau_s), computed with max subtraction.
Vector student_probs(const Vector& g, double tau_s);

/// softmax((g - c) / tau_t).
Vector teacher_probs(const Vector& g, const CenterState& center, double tau_t);

/// Row-wise variants.
Matrix student_probs(const Matrix& g, double tau_s);
Matrix teacher_probs(const Matrix& g, const CenterState& center, double tau_t);

/// c <- m c + (1 - m) mean_rows(teacher_outputs). Rows must be teacher outputs.
void update_center(CenterState& center, const Matrix& teacher_outputs);

/// Number of (teacher view, student view) pairs with distinct views.
inline int ssl_pair_count(int n_local) { return 2 * (n_local + 1); }

/// Row layout for a batch of bundles: student rows are sample-major
/// [g1, g2, l1..lL] per sample, teacher rows are [g1, g2] per sample.
struct ViewLayout {
  int n_samples = 1;
  int n_local = 0;

  int student_views() const { return 2 + n_local; }
};

/// Cross-entropy between centered/sharpened teacher targets on the global
/// views and student predictions on every other view, normalized by the pair
/// count per bundle and averaged over bundles. The gradient is w.r.t. the
/// student projector outputs only; teacher inputs are treated as constants.
LossResult dino_loss(const Matrix& student_out, const Matrix& teacher_out, const CenterState& center,
                     double tau_s, double tau_t, const ViewLayout& layout);

/// Same pairing and normalization with the L2 norm of the difference of raw
/// projector outputs in place of cross-entropy.
LossResult rmse_loss(const Matrix& student_out, const Matrix& teacher_out, const ViewLayout& layout);

/// Entropy of each row of a probability matrix, averaged.
double mean_entropy(const Matrix& probs);

/// Detects the two collapse modes of the teacher targets: near-uniform outputs
/// (mean entropy above uniform_ratio * log E for `patience` consecutive steps)
/// and single-dimension dominance (max_i mean_rows p^i above the threshold).
class CollapseMonitor {
 public:
  struct Reading {
    double entropy = 0.0;
    double max_mean_prob = 0.0;
    bool uniform = false;
    bool dominant = false;
  };

  CollapseMonitor(double uniform_ratio = 0.99, int patience = 50, double dominance_threshold = 0.9)
      : uniform_ratio_(uniform_ratio), patience_(patience), dominance_threshold_(dominance_threshold) {}

  Reading observe(const Matrix& teacher_probabilities);

  bool uniform_fired() const { return uniform_fired_; }
  bool dominance_fired() const { return dominance_fired_; }
  int uniform_streak() const { return streak_; }
  void restore(int streak, bool uniform_fired, bool dominance_fired) {
    streak_ = streak;
    uniform_fired_ = uniform_fired;
    dominance_fired_ = dominance_fired;
  }

 private:
  double uniform_ratio_;
  int patience_;
  double dominance_threshold_;
  int streak_ = 0;
  bool uniform_fired_ = false;
  bool dominance_fired_ = false;
};

}  // namespace ssbver
