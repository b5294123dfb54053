#pragma once

#include "ssbver/backbone.hpp"

#include "json.hpp"

#include <cstddef>
#include <string>

namespace ssbver {

struct EfficiencyReport {
  std::size_t param_count = 0;
  double params_millions = 0.0;
  double ms_per_image = 0.0;    // median over measured iterations
  double peak_memory_mb = 0.0;  // process high-water mark around the forward call
  int dims = 0;
  std::string hardware_descriptor;
};

std::size_t count_params(const ParamList& params);
std::size_t count_params(const Encoder& encoder);

struct LatencyOptions {
  int height = 128;
  int width = 128;
  int warmup = 20;
  int iters = 100;
};

/// Median wall-clock milliseconds of batch-size-1 forwards after warmup.
double measure_latency(const Encoder& encoder, const LatencyOptions& options = {});

/// Resident-set high-water mark (MB) observed around a single forward.
double peak_forward_memory_mb(const Encoder& encoder, int height, int width);

std::string hardware_descriptor();

EfficiencyReport profile_encoder(const Encoder& encoder, const LatencyOptions& options = {});

nlohmann::json to_json(const EfficiencyReport& report);

/// Marks the process as training. The profiler refuses to measure while any
/// guard is alive.
class TrainingGuard {
 public:
  TrainingGuard();
  ~TrainingGuard();
  TrainingGuard(const TrainingGuard&) = delete;
  TrainingGuard& operator=(const TrainingGuard&) = delete;
};

bool training_in_progress();

}  // namespace ssbver
