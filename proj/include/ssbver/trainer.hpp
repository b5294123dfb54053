#pragma once

#include "ssbver/backbone.hpp"
#include "ssbver/config.hpp"
#include "ssbver/dataio.hpp"
#include "ssbver/optim.hpp"
#include "ssbver/reid_head.hpp"
#include "ssbver/ssl_head.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ssbver {

struct TrainRecord {
  long iter = 0;
  int epoch = 0;
  double loss_c = 0.0;
  double loss_t = 0.0;
  double loss_s = 0.0;
  double loss_total = 0.0;
  double lr = 0.0;
  double tau_t = 0.0;
  double entropy_pt = 0.0;
  double max_mean_pt = 0.0;
  bool uniform_collapse = false;
  bool dominance_collapse = false;
};

/// Append-only per-step log; serialized with the fixed column set
/// iter,epoch,L_c,L_t,L_s,L_total,lr,tau_t,entropy_pt.
class TrainLog {
 public:
  static const char* csv_header();

  void append(const TrainRecord& r) { records_.push_back(r); }
  const std::vector<TrainRecord>& records() const { return records_; }
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path, bool append = false) const;

 private:
  std::vector<TrainRecord> records_;
};

/// Everything that evolves during training.
struct TrainState {
  StudentTeacherPair pair;
  ReIdHeadState head;
  CenterState center;
  AdamW optimizer;
  CollapseMonitor monitor;
  long iteration = 0;
  int epoch = 0;            // completed epochs
  long iters_per_epoch = 1;
  long ssl_evaluations = 0;  // number of SSL head evaluations (instrumentation)
};

TrainState init_train_state(const TrainConfig& cfg, int num_classes, long iters_per_epoch);

/// Identity-balanced batch sampler. Each epoch the images of every identity
/// are shuffled and cut into chunks of K (identities with fewer than K images
/// are topped up by resampling); batches take one chunk from each of the P
/// identities with the most remaining chunks, ties broken at random.
class PkSampler {
 public:
  PkSampler(std::vector<int> labels, PkLayout layout, std::uint64_t seed);

  long batches_per_epoch() const { return nominal_; }
  std::vector<std::vector<int>> epoch(int epoch_index) const;

 private:
  std::vector<int> labels_;
  PkLayout layout_;
  std::uint64_t seed_;
  std::vector<std::vector<int>> by_identity_;
  long nominal_ = 0;
};

struct StepHooks {
  /// Called after the optimizer step and before the EMA/center updates.
  std::function<void(const TrainState&)> after_optimizer;
};

/// One optimization step: view construction, student/teacher forwards, the
/// weighted total loss, backprop into the student, AdamW, EMA, center update.
/// Throws NonFiniteLossError when any loss is not finite.
TrainRecord train_step(const Batch& batch, TrainState& state, const TrainConfig& cfg,
                       const StepHooks& hooks = {});

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg);

struct LoadedCheckpoint {
  TrainConfig config;
  TrainState state;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints + train_log.csv
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const TrainRecord&)> on_step;
  bool verbose = false;
};

struct TrainResult {
  TrainState state;
  TrainLog log;
};

/// Trains on the train split of a loaded dataset. Single-threaded and
/// bit-deterministic given cfg.seed.
TrainResult run_training(const TrainConfig& cfg, const std::vector<ImageSample>& train_samples,
                         int num_classes, const RunOptions& options = {});

TrainResult run_training(const TrainConfig& cfg, const DatasetManifest& manifest, const RunOptions& options = {});

}  // namespace ssbver
