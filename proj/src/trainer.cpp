#include "ssbver/trainer.hpp"

#include "ssbver/augment.hpp"
#include "ssbver/checkpoint.hpp"
#include "ssbver/errors.hpp"
#include "ssbver/profiler.hpp"
#include "ssbver/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace ssbver {
namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// TrainLog

const char* TrainLog::csv_header() { return "iter,epoch,L_c,L_t,L_s,L_total,lr,tau_t,entropy_pt"; }

namespace {

std::string csv_rows(const std::vector<TrainRecord>& records, std::size_t from) {
  std::string out;
  char line[512];
  for (std::size_t i = from; i < records.size(); ++i) {
    const auto& r = records[i];
    std::snprintf(line, sizeof line, "%ld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iter, r.epoch,
                  r.loss_c, r.loss_t, r.loss_s, r.loss_total, r.lr, r.tau_t, r.entropy_pt);
    out += line;
  }
  return out;
}

void append_rows(const fs::path& path, const std::vector<TrainRecord>& records, std::size_t from, bool fresh) {
  std::ofstream out(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  if (fresh) out << TrainLog::csv_header() << '\n';
  out << csv_rows(records, from);
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

std::string TrainLog::to_csv() const { return std::string(csv_header()) + "\n" + csv_rows(records_, 0); }

void TrainLog::write_csv(const fs::path& path, bool append) const {
  append_rows(path, records_, 0, !(append && fs::exists(path)));
}

// ---------------------------------------------------------------------------
// State

TrainState init_train_state(const TrainConfig& cfg, int num_classes, long iters_per_epoch) {
  cfg.validate();
  if (iters_per_epoch < 1) throw ConfigError("iterations per epoch must be >= 1");

  TinyEncoderConfig enc = cfg.encoder;
  enc.seed = derive_seed({cfg.seed, 0xE5C0DE});
  Branch student(std::make_unique<TinyEncoder>(enc),
                 nn::Mlp(enc.dim, cfg.ssl.hidden, cfg.ssl.n_hidden, cfg.ssl.out_dim, derive_seed({cfg.seed, 0x9A0E})));

  AdamW optimizer;
  optimizer.beta1 = cfg.optimizer.beta1;
  optimizer.beta2 = cfg.optimizer.beta2;
  optimizer.eps = cfg.optimizer.eps;
  optimizer.weight_decay = cfg.optimizer.weight_decay;

  return TrainState{
      StudentTeacherPair::from_student(std::move(student), cfg.ema_momentum),
      ReIdHeadState(enc.dim, num_classes, cfg.loss.label_smoothing, derive_seed({cfg.seed, 0xC1A55})),
      CenterState(cfg.ssl.out_dim, cfg.ssl.center_momentum),
      optimizer,
      CollapseMonitor(),
      0,
      0,
      iters_per_epoch,
      0,
  };
}

// ---------------------------------------------------------------------------
// Sampler

PkSampler::PkSampler(std::vector<int> labels, PkLayout layout, std::uint64_t seed)
    : labels_(std::move(labels)), layout_(layout), seed_(seed) {
  if (layout_.identities < 1 || layout_.instances < 2) throw BatchLayoutError("sampler needs P >= 1 and K >= 2");
  std::map<int, std::vector<int>> groups;
  for (std::size_t i = 0; i < labels_.size(); ++i) groups[labels_[i]].push_back(static_cast<int>(i));
  if (static_cast<int>(groups.size()) < layout_.identities) {
    throw DataError("training split has " + std::to_string(groups.size()) + " identities, batch needs P=" +
                    std::to_string(layout_.identities));
  }
  long chunks = 0;
  for (auto& [label, members] : groups) {
    chunks += std::max<long>(1, static_cast<long>(members.size()) / layout_.instances);
    by_identity_.push_back(std::move(members));
  }
  nominal_ = chunks / layout_.identities;
}

std::vector<std::vector<int>> PkSampler::epoch(int epoch_index) const {
  Rng rng(derive_seed({seed_, static_cast<std::uint64_t>(epoch_index)}));
  const int k = layout_.instances;

  std::vector<std::vector<std::vector<int>>> chunks(by_identity_.size());
  for (std::size_t id = 0; id < by_identity_.size(); ++id) {
    std::vector<int> pool = by_identity_[id];
    rng.shuffle(pool.begin(), pool.end());
    const std::size_t original = pool.size();
    while (pool.size() < static_cast<std::size_t>(k)) pool.push_back(pool[rng.index(static_cast<int>(original))]);
    for (std::size_t start = 0; start + k <= pool.size(); start += k) {
      chunks[id].emplace_back(pool.begin() + static_cast<long>(start), pool.begin() + static_cast<long>(start + k));
    }
  }

  std::vector<std::vector<int>> batches;
  std::vector<std::size_t> order(by_identity_.size());
  std::vector<double> tie(by_identity_.size());
  while (static_cast<long>(batches.size()) < nominal_) {
    for (std::size_t id = 0; id < order.size(); ++id) {
      order[id] = id;
      tie[id] = rng.uniform();
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (chunks[a].size() != chunks[b].size()) return chunks[a].size() > chunks[b].size();
      return tie[a] < tie[b];
    });
    if (chunks[order[layout_.identities - 1]].empty()) break;
    std::vector<int> batch;
    for (int p = 0; p < layout_.identities; ++p) {
      auto& list = chunks[order[p]];
      batch.insert(batch.end(), list.back().begin(), list.back().end());
      list.pop_back();
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Step

namespace {

void check_finite(const TrainRecord& r) {
  if (std::isfinite(r.loss_c) && std::isfinite(r.loss_t) && std::isfinite(r.loss_s) && std::isfinite(r.loss_total)) {
    return;
  }
  std::ostringstream msg;
  msg.precision(17);
  msg << "non-finite loss at iteration " << r.iter << " (epoch " << r.epoch << "): L_c=" << r.loss_c
      << " L_t=" << r.loss_t << " L_s=" << r.loss_s << " L_total=" << r.loss_total << " lr=" << r.lr
      << " tau_t=" << r.tau_t;
  throw NonFiniteLossError(msg.str());
}

}  // namespace

TrainRecord train_step(const Batch& batch, TrainState& state, const TrainConfig& cfg, const StepHooks& hooks) {
  validate_batch(batch);
  const bool ssl = cfg.ssl_active();
  const int n = static_cast<int>(batch.samples.size());
  const int n_local = ssl ? cfg.augment.n_local : 0;
  const int per_sample = ssl ? 2 + n_local : 1;
  const std::vector<int> labels = batch.labels();

  TrainRecord rec;
  rec.iter = state.iteration;
  rec.epoch = static_cast<int>(state.iteration / state.iters_per_epoch);
  rec.lr = learning_rate(state.iteration, cfg.schedule, state.iters_per_epoch, cfg.epochs);
  rec.tau_t = cfg.ssl.temperature.teacher(state.iteration, state.iters_per_epoch);

  // Student rows are sample-major [g1, g2, l1..lL]; teacher rows [g1, g2].
  std::vector<Image> student_views;
  std::vector<Image> teacher_views;
  student_views.reserve(static_cast<std::size_t>(n) * per_sample);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(state.iteration), static_cast<std::uint64_t>(i)}));
    auto globals = make_global_views(batch.samples[i], cfg.augment, rng);
    if (!ssl) {
      student_views.push_back(std::move(globals[0].image));
      continue;
    }
    auto locals = make_local_views(batch.samples[i], cfg.augment, rng);
    teacher_views.push_back(globals[0].image);
    teacher_views.push_back(globals[1].image);
    student_views.push_back(std::move(globals[0].image));
    student_views.push_back(std::move(globals[1].image));
    for (int l = 0; l < n_local; ++l) student_views.push_back(std::move(locals[l].image));
  }

  Branch& student = state.pair.student;
  std::unique_ptr<EncoderTrace> trace;
  const Matrix features = student.encoder->forward(student_views, trace);

  Matrix reid_features(n, features.cols());
  for (int i = 0; i < n; ++i) reid_features.row(i) = features.row(static_cast<long>(i) * per_sample);

  ParamList encoder_grads = zeros_like(student.encoder->parameters());
  ParamList projector_grads = zeros_like(student.projector.parameters());
  ParamList classifier_grads = zeros_like(state.head.classifier);

  const ReIdLosses reid =
      reid_losses(reid_features, labels, state.head, cfg.loss.lambda_c, cfg.loss.lambda_t, classifier_grads);
  rec.loss_c = reid.classification;
  rec.loss_t = reid.triplet;

  Matrix d_features = Matrix::Zero(features.rows(), features.cols());
  for (int i = 0; i < n; ++i) d_features.row(static_cast<long>(i) * per_sample) = reid.d_features.row(i);

  Matrix teacher_out;
  if (ssl) {
    ++state.ssl_evaluations;
    nn::Mlp::Trace projector_trace;
    const Matrix student_out = student.projector.forward(features, projector_trace);
    const Branch& teacher = state.pair.teacher;
    teacher_out = teacher.projector.forward(teacher.encoder->forward(teacher_views));

    const ViewLayout layout{n, n_local};
    const LossResult ls = cfg.loss.objective == SslObjective::rmse
                              ? rmse_loss(student_out, teacher_out, layout)
                              : dino_loss(student_out, teacher_out, state.center, cfg.ssl.temperature.tau_s,
                                          rec.tau_t, layout);
    rec.loss_s = ls.value;

    const auto reading = state.monitor.observe(teacher_probs(teacher_out, state.center, rec.tau_t));
    rec.entropy_pt = reading.entropy;
    rec.max_mean_pt = reading.max_mean_prob;
    rec.uniform_collapse = reading.uniform;
    rec.dominance_collapse = reading.dominant;

    d_features += student.projector.backward(projector_trace, cfg.loss.lambda_s * ls.grad, projector_grads);
  }

  rec.loss_total = cfg.loss.lambda_c * rec.loss_c + cfg.loss.lambda_t * rec.loss_t + cfg.loss.lambda_s * rec.loss_s;
  check_finite(rec);

  student.encoder->backward(*trace, d_features, &encoder_grads, false);

  std::vector<Tensor*> params;
  std::vector<const Tensor*> grads;
  auto enlist = [&](ParamList& p, const ParamList& g) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      params.push_back(&p[i]);
      grads.push_back(&g[i]);
    }
  };
  enlist(student.encoder->parameters(), encoder_grads);
  if (ssl) enlist(student.projector.parameters(), projector_grads);
  enlist(state.head.classifier, classifier_grads);
  state.optimizer.step(params, grads, rec.lr);

  if (hooks.after_optimizer) hooks.after_optimizer(state);

  ema_update(state.pair);
  if (ssl && cfg.ssl.centering && cfg.loss.objective == SslObjective::cross_entropy) {
    update_center(state.center, teacher_out);
  }
  ++state.iteration;
  return rec;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

ParamList indexed(const ParamList& list) {
  ParamList out = list;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].name = std::to_string(i) + "." + out[i].name;
  return out;
}

Tensor vector_tensor(const std::string& name, const Vector& v) {
  Tensor t(name, {static_cast<int>(v.size())});
  for (long i = 0; i < v.size(); ++i) t.values[static_cast<std::size_t>(i)] = v[i];
  return t;
}

Vector read_vector(const Archive& archive, const std::string& name, long expected) {
  const Tensor& t = archive.get(name);
  if (static_cast<long>(t.size()) != expected) throw ShapeMismatchError("checkpoint array '" + name + "' has a different size");
  return Eigen::Map<const Vector>(t.values.data(), expected);
}

// Optimizer moments follow the parameter order used by train_step.
ParamList optimizer_layout(TrainState& state, bool ssl) {
  ParamList layout = state.pair.student.encoder->parameters();
  if (ssl) {
    const auto& proj = state.pair.student.projector.parameters();
    layout.insert(layout.end(), proj.begin(), proj.end());
  }
  layout.insert(layout.end(), state.head.classifier.begin(), state.head.classifier.end());
  return zeros_like(layout);
}

}  // namespace

void save_checkpoint(const fs::path& path, const TrainState& state, const TrainConfig& cfg) {
  Archive archive;
  archive.metadata = {
      {"config", to_json(cfg)},
      {"iteration", state.iteration},
      {"epoch", state.epoch},
      {"iters_per_epoch", state.iters_per_epoch},
      {"ssl_evaluations", state.ssl_evaluations},
      {"ema_momentum", state.pair.momentum},
      {"num_classes", state.head.k},
      {"encoder", state.pair.teacher.encoder->describe()},
      {"optimizer_steps", state.optimizer.steps()},
      {"monitor",
       {{"streak", state.monitor.uniform_streak()},
        {"uniform_fired", state.monitor.uniform_fired()},
        {"dominance_fired", state.monitor.dominance_fired()}}},
  };
  archive.add(state.pair.student.encoder->parameters(), "student.encoder.");
  archive.add(state.pair.student.projector.parameters(), "student.projector.");
  archive.add(state.pair.teacher.encoder->parameters(), "teacher.encoder.");
  archive.add(state.pair.teacher.projector.parameters(), "teacher.projector.");
  archive.add(state.head.classifier, "head.");
  archive.add(vector_tensor("head.bn.running_mean", state.head.bn.running_mean));
  archive.add(vector_tensor("head.bn.running_var", state.head.bn.running_var));
  archive.add(vector_tensor("center", state.center.c));
  archive.add(indexed(state.optimizer.first_moments()), "optimizer.m.");
  archive.add(indexed(state.optimizer.second_moments()), "optimizer.v.");
  write_archive(path, archive);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  const Archive archive = read_archive(path);
  const json& meta = archive.metadata;
  try {
    TrainConfig cfg = train_config_from_json(meta.at("config"));
    TrainState state =
        init_train_state(cfg, meta.at("num_classes").get<int>(), meta.at("iters_per_epoch").get<long>());

    archive.read_into(state.pair.student.encoder->parameters(), "student.encoder.");
    archive.read_into(state.pair.student.projector.parameters(), "student.projector.");
    archive.read_into(state.pair.teacher.encoder->parameters(), "teacher.encoder.");
    archive.read_into(state.pair.teacher.projector.parameters(), "teacher.projector.");
    archive.read_into(state.head.classifier, "head.");
    const long d = state.head.dim();
    state.head.bn.running_mean = read_vector(archive, "head.bn.running_mean", d);
    state.head.bn.running_var = read_vector(archive, "head.bn.running_var", d);
    state.center.c = read_vector(archive, "center", state.center.c.size());

    state.iteration = meta.at("iteration").get<long>();
    state.epoch = meta.at("epoch").get<int>();
    state.ssl_evaluations = meta.at("ssl_evaluations").get<long>();
    state.pair.momentum = meta.at("ema_momentum").get<double>();
    const json& mon = meta.at("monitor");
    state.monitor.restore(mon.at("streak").get<int>(), mon.at("uniform_fired").get<bool>(),
                          mon.at("dominance_fired").get<bool>());

    const long steps = meta.at("optimizer_steps").get<long>();
    if (steps > 0) {
      ParamList m = indexed(optimizer_layout(state, cfg.ssl_active()));
      ParamList v = m;
      archive.read_into(m, "optimizer.m.");
      archive.read_into(v, "optimizer.v.");
      for (std::size_t i = 0; i < m.size(); ++i) {
        const auto dot = m[i].name.find('.');
        m[i].name = m[i].name.substr(dot + 1);
        v[i].name = v[i].name.substr(dot + 1);
      }
      state.optimizer.restore(steps, std::move(m), std::move(v));
    }
    return {std::move(cfg), std::move(state)};
  } catch (const json::exception& e) {
    throw ParseError("checkpoint metadata in " + path.string() + " is malformed: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Loop

namespace {

json replay_key(const TrainConfig& cfg) {
  json j = to_json(cfg);
  j.erase("epochs");
  j.erase("checkpoint");
  return j;
}

}  // namespace

TrainResult run_training(const TrainConfig& cfg, const std::vector<ImageSample>& train_samples, int num_classes,
                         const RunOptions& options) {
  TrainingGuard guard;
  cfg.validate();

  std::vector<int> labels;
  labels.reserve(train_samples.size());
  for (const auto& s : train_samples) {
    if (s.identity < 0 || s.identity >= num_classes) {
      throw DataError("training label " + std::to_string(s.identity) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    labels.push_back(s.identity);
  }
  const PkSampler sampler(labels, cfg.batch, derive_seed({cfg.seed, 0x5A4D}));
  const long ipe = sampler.batches_per_epoch();
  if (ipe < 1) throw DataError("training split is too small for one P x K batch");

  std::optional<TrainState> state;
  if (options.resume_from) {
    LoadedCheckpoint loaded = load_checkpoint(*options.resume_from);
    if (replay_key(loaded.config) != replay_key(cfg)) {
      throw ConfigError("checkpoint " + options.resume_from->string() + " was written with a different config");
    }
    if (loaded.state.iters_per_epoch != ipe || loaded.state.head.k != num_classes) {
      throw DataError("checkpoint does not match the training data");
    }
    state.emplace(std::move(loaded.state));
  } else {
    state.emplace(init_train_state(cfg, num_classes, ipe));
  }

  fs::path log_path;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    std::ofstream(*options.out_dir / "config.json") << to_json(cfg).dump(2) << '\n';
    log_path = *options.out_dir / "train_log.csv";
    if (!options.resume_from || !fs::exists(log_path)) append_rows(log_path, {}, 0, true);
  }

  TrainLog log;
  auto checkpoint_path = [&](int epoch) {
    char name[64];
    std::snprintf(name, sizeof name, "checkpoint_epoch%03d.ckpt", epoch);
    return *options.out_dir / name;
  };

  for (int e = state->epoch; e < cfg.epochs; ++e) {
    const std::size_t first = log.records().size();
    for (const auto& indices : sampler.epoch(e)) {
      std::vector<ImageSample> samples;
      samples.reserve(indices.size());
      for (int idx : indices) samples.push_back(train_samples[idx]);
      const Batch batch = make_batch(std::move(samples), cfg.batch);
      TrainRecord rec;
      try {
        rec = train_step(batch, *state, cfg);
      } catch (const NonFiniteLossError& err) {
        if (options.out_dir) {
          if (!log_path.empty()) append_rows(log_path, log.records(), first, false);
          std::ofstream(*options.out_dir / "nonfinite_dump.txt") << err.what() << '\n';
          save_checkpoint(*options.out_dir / "nonfinite_state.ckpt", *state, cfg);
        }
        throw;
      }
      rec.epoch = e;
      log.append(rec);
      if (options.on_step) options.on_step(rec);
    }
    state->epoch = e + 1;
    if (options.verbose && !log.records().empty()) {
      const auto& r = log.records().back();
      std::cerr << "epoch " << state->epoch << "/" << cfg.epochs << " iter " << state->iteration
                << " L_total " << r.loss_total << " L_c " << r.loss_c << " L_t " << r.loss_t << " L_s " << r.loss_s
                << '\n';
    }
    if (options.out_dir) {
      append_rows(log_path, log.records(), first, false);
      if (cfg.checkpoint_every > 0 && state->epoch % cfg.checkpoint_every == 0) {
        save_checkpoint(checkpoint_path(state->epoch), *state, cfg);
      }
    }
  }
  if (options.out_dir) save_checkpoint(*options.out_dir / "final.ckpt", *state, cfg);
  return {std::move(*state), std::move(log)};
}

TrainResult run_training(const TrainConfig& cfg, const DatasetManifest& manifest, const RunOptions& options) {
  const auto samples = load_split(manifest, Split::train);
  if (samples.empty()) throw DataError("manifest has no train split");
  return run_training(cfg, samples, manifest.num_train_identities(), options);
}

}  // namespace ssbver
