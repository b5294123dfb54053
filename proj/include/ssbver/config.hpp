#pragma once

#include "ssbver/augment.hpp"
#include "ssbver/backbone.hpp"
#include "ssbver/datamodel.hpp"
#include "ssbver/schedule.hpp"
#include "ssbver/ssl_head.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>

namespace ssbver {

enum class SslObjective { cross_entropy, rmse };

struct LossConfig {
  double lambda_c = 1.0;
  double lambda_t = 1.0;
  double lambda_s = 1.0;
  double label_smoothing = 0.2;
  SslObjective objective = SslObjective::cross_entropy;
};

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

struct SslConfig {
  int hidden = 512;
  int n_hidden = 4;
  int out_dim = 256;
  TemperatureSchedule temperature;
  double center_momentum = 0.9;
  bool centering = true;  // false freezes c at zero
};

struct TrainConfig {
  std::uint64_t seed = 0;
  int epochs = 120;
  PkLayout batch{4, 4};
  LossConfig loss;
  OptimizerConfig optimizer;
  LrSchedule schedule;
  double ema_momentum = 0.9995;
  TinyEncoderConfig encoder;
  SslConfig ssl;
  AugmentConfig augment;
  int checkpoint_every = 10;
  std::string eval_protocol = "cross_camera";

  bool ssl_active() const { return loss.lambda_s > 0.0; }
  void validate() const;  // ConfigError
};

/// Re-id losses only: lambda_s = 0 and no local views.
void make_baseline(TrainConfig& cfg);

nlohmann::json to_json(const TrainConfig& cfg);
/// Reads a complete or partial document on top of the defaults. Unknown keys
/// are rejected with ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& doc);

/// Recursively merges `overrides` into `base`; every key of `overrides` must
/// already exist in `base` (ConfigError names the offending dotted path).
void merge_checked(nlohmann::json& base, const nlohmann::json& overrides, const std::string& path = "");

/// Applies "dotted.path=value". The value is parsed as JSON when possible and
/// taken as a string otherwise. The path must exist.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace ssbver
