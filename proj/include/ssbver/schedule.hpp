#pragma once

#include <string>
#include <vector>

namespace ssbver {

enum class LrDecay { step, cosine };

struct LrSchedule {
  LrDecay decay = LrDecay::step;
  double base_lr = 5e-4;  // step decay peak
  double gamma = 0.1;
  std::vector<int> milestones{40, 70, 100};
  double lr_max = 1e-4;  // cosine peak
  double lr_min = 1.6e-5;
  int warmup_epochs = 10;
  double warmup_rate = 0.099;

  void validate() const;
  double peak() const { return decay == LrDecay::step ? base_lr : lr_max; }
};

/// Linear warmup from warmup_rate * peak to peak over warmup_epochs, then step
/// decay by gamma at each milestone epoch or cosine annealing to lr_min at the
/// end of training.
double learning_rate(long iteration, const LrSchedule& schedule, long iters_per_epoch, int total_epochs);

}  // namespace ssbver
