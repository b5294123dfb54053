#include "ssbver/config.hpp"

#include "ssbver/errors.hpp"

#include <sstream>

namespace ssbver {
using nlohmann::json;

namespace {

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

Range range_from(const json& j, const char* name) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(std::string(name) + " must be a [lo, hi] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch.identities < 2 || batch.instances < 2) {
    throw ConfigError("batch needs P >= 2 (negatives) and K >= 2 (positives)");
  }
  if (loss.lambda_c < 0.0 || loss.lambda_t < 0.0 || loss.lambda_s < 0.0) throw ConfigError("loss weights must be >= 0");
  if (loss.label_smoothing < 0.0 || loss.label_smoothing > 1.0) throw ConfigError("label_smoothing must lie in [0,1]");
  if (ema_momentum < 0.0 || ema_momentum > 1.0) throw ConfigError("ema.momentum must lie in [0,1]");
  if (optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0 || optimizer.beta2 < 0.0 || optimizer.beta2 >= 1.0 ||
      optimizer.eps <= 0.0 || optimizer.weight_decay < 0.0) {
    throw ConfigError("invalid optimizer hyper-parameters");
  }
  schedule.validate();
  encoder.validate();
  if (ssl.hidden < 1 || ssl.n_hidden < 0 || ssl.out_dim < 2) throw ConfigError("invalid SSL projector dimensions");
  ssl.temperature.validate();
  if (ssl.center_momentum < 0.0 || ssl.center_momentum >= 1.0) throw ConfigError("center_momentum must lie in [0,1)");
  augment.validate();
  if (checkpoint_every < 0) throw ConfigError("checkpoint.every_epochs must be >= 0");
  if (eval_protocol != "none" && eval_protocol != "cross_camera") {
    throw ConfigError("eval.protocol must be 'none' or 'cross_camera'");
  }
}

void make_baseline(TrainConfig& cfg) {
  cfg.loss.lambda_s = 0.0;
  cfg.augment.n_local = 0;
}

json to_json(const TrainConfig& cfg) {
  json enc = cfg.encoder;
  return {
      {"seed", cfg.seed},
      {"epochs", cfg.epochs},
      {"batch", {{"P", cfg.batch.identities}, {"K", cfg.batch.instances}}},
      {"loss",
       {{"lambda_c", cfg.loss.lambda_c},
        {"lambda_t", cfg.loss.lambda_t},
        {"lambda_s", cfg.loss.lambda_s},
        {"label_smoothing", cfg.loss.label_smoothing},
        {"ssl_objective", cfg.loss.objective == SslObjective::rmse ? "rmse" : "cross_entropy"}}},
      {"optimizer",
       {{"beta1", cfg.optimizer.beta1},
        {"beta2", cfg.optimizer.beta2},
        {"eps", cfg.optimizer.eps},
        {"weight_decay", cfg.optimizer.weight_decay}}},
      {"schedule",
       {{"decay", cfg.schedule.decay == LrDecay::cosine ? "cosine" : "step"},
        {"base_lr", cfg.schedule.base_lr},
        {"gamma", cfg.schedule.gamma},
        {"milestones", cfg.schedule.milestones},
        {"lr_max", cfg.schedule.lr_max},
        {"lr_min", cfg.schedule.lr_min},
        {"warmup_epochs", cfg.schedule.warmup_epochs},
        {"warmup_rate", cfg.schedule.warmup_rate}}},
      {"ema", {{"momentum", cfg.ema_momentum}}},
      {"encoder", enc},
      {"ssl",
       {{"hidden", cfg.ssl.hidden},
        {"n_hidden", cfg.ssl.n_hidden},
        {"out_dim", cfg.ssl.out_dim},
        {"tau_s", cfg.ssl.temperature.tau_s},
        {"tau_t_start", cfg.ssl.temperature.tau_t_start},
        {"tau_t_end", cfg.ssl.temperature.tau_t_end},
        {"tau_t_warmup_epochs", cfg.ssl.temperature.warmup_epochs},
        {"center_momentum", cfg.ssl.center_momentum},
        {"centering", cfg.ssl.centering}}},
      {"augment",
       {{"global_area", range_json(cfg.augment.global_area)},
        {"local_area", range_json(cfg.augment.local_area)},
        {"n_local", cfg.augment.n_local},
        {"global_size", cfg.augment.global_size},
        {"local_size", cfg.augment.local_size},
        {"flip_prob", cfg.augment.flip_prob},
        {"brightness", cfg.augment.brightness},
        {"contrast", cfg.augment.contrast},
        {"saturation", cfg.augment.saturation},
        {"hue", cfg.augment.hue},
        {"erase_prob", cfg.augment.erase_prob},
        {"erase_area", range_json(cfg.augment.erase_area)},
        {"crop_aspect", range_json(cfg.augment.crop_aspect)}}},
      {"checkpoint", {{"every_epochs", cfg.checkpoint_every}}},
      {"eval", {{"protocol", cfg.eval_protocol}}},
  };
}

TrainConfig train_config_from_json(const json& doc) {
  json full = to_json(TrainConfig{});
  merge_checked(full, doc);

  TrainConfig cfg;
  cfg.seed = get<std::uint64_t>(full, "seed");
  cfg.epochs = get<int>(full, "epochs");
  cfg.batch = {get<int>(full["batch"], "P"), get<int>(full["batch"], "K")};

  const json& loss = full["loss"];
  cfg.loss.lambda_c = get<double>(loss, "lambda_c");
  cfg.loss.lambda_t = get<double>(loss, "lambda_t");
  cfg.loss.lambda_s = get<double>(loss, "lambda_s");
  cfg.loss.label_smoothing = get<double>(loss, "label_smoothing");
  const auto objective = get<std::string>(loss, "ssl_objective");
  if (objective == "cross_entropy") cfg.loss.objective = SslObjective::cross_entropy;
  else if (objective == "rmse") cfg.loss.objective = SslObjective::rmse;
  else throw ConfigError("loss.ssl_objective must be 'cross_entropy' or 'rmse'");

  const json& opt = full["optimizer"];
  cfg.optimizer = {get<double>(opt, "beta1"), get<double>(opt, "beta2"), get<double>(opt, "eps"),
                   get<double>(opt, "weight_decay")};

  const json& sch = full["schedule"];
  const auto decay = get<std::string>(sch, "decay");
  if (decay == "step") cfg.schedule.decay = LrDecay::step;
  else if (decay == "cosine") cfg.schedule.decay = LrDecay::cosine;
  else throw ConfigError("schedule.decay must be 'step' or 'cosine'");
  cfg.schedule.base_lr = get<double>(sch, "base_lr");
  cfg.schedule.gamma = get<double>(sch, "gamma");
  cfg.schedule.milestones = get<std::vector<int>>(sch, "milestones");
  cfg.schedule.lr_max = get<double>(sch, "lr_max");
  cfg.schedule.lr_min = get<double>(sch, "lr_min");
  cfg.schedule.warmup_epochs = get<int>(sch, "warmup_epochs");
  cfg.schedule.warmup_rate = get<double>(sch, "warmup_rate");

  cfg.ema_momentum = get<double>(full["ema"], "momentum");

  const json& enc = full["encoder"];
  if (get<std::string>(enc, "arch") != "tiny") throw ConfigError("encoder.arch must be 'tiny'");
  cfg.encoder.dim = get<int>(enc, "dim");
  cfg.encoder.widths = get<std::vector<int>>(enc, "widths");
  cfg.encoder.convs_per_stage = get<int>(enc, "convs_per_stage");

  const json& ssl = full["ssl"];
  cfg.ssl.hidden = get<int>(ssl, "hidden");
  cfg.ssl.n_hidden = get<int>(ssl, "n_hidden");
  cfg.ssl.out_dim = get<int>(ssl, "out_dim");
  cfg.ssl.temperature.tau_s = get<double>(ssl, "tau_s");
  cfg.ssl.temperature.tau_t_start = get<double>(ssl, "tau_t_start");
  cfg.ssl.temperature.tau_t_end = get<double>(ssl, "tau_t_end");
  cfg.ssl.temperature.warmup_epochs = get<int>(ssl, "tau_t_warmup_epochs");
  cfg.ssl.center_momentum = get<double>(ssl, "center_momentum");
  cfg.ssl.centering = get<bool>(ssl, "centering");

  const json& aug = full["augment"];
  cfg.augment.global_area = range_from(aug["global_area"], "augment.global_area");
  cfg.augment.local_area = range_from(aug["local_area"], "augment.local_area");
  cfg.augment.n_local = get<int>(aug, "n_local");
  cfg.augment.global_size = get<int>(aug, "global_size");
  cfg.augment.local_size = get<int>(aug, "local_size");
  cfg.augment.flip_prob = get<double>(aug, "flip_prob");
  cfg.augment.brightness = get<double>(aug, "brightness");
  cfg.augment.contrast = get<double>(aug, "contrast");
  cfg.augment.saturation = get<double>(aug, "saturation");
  cfg.augment.hue = get<double>(aug, "hue");
  cfg.augment.erase_prob = get<double>(aug, "erase_prob");
  cfg.augment.erase_area = range_from(aug["erase_area"], "augment.erase_area");
  cfg.augment.crop_aspect = range_from(aug["crop_aspect"], "augment.crop_aspect");

  cfg.checkpoint_every = get<int>(full["checkpoint"], "every_epochs");
  cfg.eval_protocol = get<std::string>(full["eval"], "protocol");

  cfg.validate();
  return cfg;
}

void merge_checked(json& base, const json& overrides, const std::string& path) {
  if (!overrides.is_object()) throw ConfigError("config " + (path.empty() ? "root" : "'" + path + "'") + " must be an object");
  for (const auto& [key, value] : overrides.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    json& target = base[key];
    if (target.is_object()) {
      merge_checked(target, value, where);
    } else {
      if (value.is_object()) throw ConfigError("config key '" + where + "' is not a section");
      target = value;
    }
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }

  json* node = &doc;
  std::stringstream parts(path);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) keys.push_back(part);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!node->is_object() || !node->contains(keys[i])) throw ConfigError("unknown config key '" + path + "'");
    node = &(*node)[keys[i]];
  }
  if (node->is_object()) throw ConfigError("config key '" + path + "' is a section, not a value");
  *node = value;
}

}  // namespace ssbver
