#include "ssbver/schedule.hpp"

#include "ssbver/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ssbver {

void LrSchedule::validate() const {
  if (!(base_lr > 0.0 && lr_max > 0.0 && lr_min >= 0.0 && lr_min <= lr_max)) {
    throw ConfigError("learning rates must satisfy base_lr > 0 and 0 <= lr_min <= lr_max");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0,1]");
  if (!std::is_sorted(milestones.begin(), milestones.end())) throw ConfigError("milestones must be ascending");
  if (warmup_epochs < 0 || warmup_rate < 0.0 || warmup_rate > 1.0) {
    throw ConfigError("warmup needs warmup_epochs >= 0 and warmup_rate in [0,1]");
  }
}

double learning_rate(long iteration, const LrSchedule& schedule, long iters_per_epoch, int total_epochs) {
  const long ipe = std::max(1L, iters_per_epoch);
  const long warmup_iters = static_cast<long>(schedule.warmup_epochs) * ipe;
  const double peak = schedule.peak();
  if (iteration < warmup_iters) {
    const double progress = static_cast<double>(iteration) / static_cast<double>(warmup_iters);
    return peak * (schedule.warmup_rate + (1.0 - schedule.warmup_rate) * progress);
  }

  if (schedule.decay == LrDecay::step) {
    const long epoch = iteration / ipe;
    const auto passed = std::count_if(schedule.milestones.begin(), schedule.milestones.end(),
                                      [epoch](int m) { return epoch >= m; });
    return schedule.base_lr * std::pow(schedule.gamma, static_cast<double>(passed));
  }

  const long total_iters = static_cast<long>(total_epochs) * ipe;
  const long span = total_iters - warmup_iters;
  const double t =
      span > 0 ? std::clamp(static_cast<double>(iteration - warmup_iters) / static_cast<double>(span), 0.0, 1.0)
               : 1.0;
  return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace ssbver
