#include "ssbver/dataio.hpp"
#include "ssbver/errors.hpp"
#include "ssbver/trainer.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

using namespace ssbver;
namespace fs = std::filesystem;

namespace {

std::vector<ImageSample> toy_samples(int identities, int per_identity, std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.n_identities = identities;
  spec.images_per_identity = per_identity;
  spec.height = spec.width = 32;
  spec.seed = seed;
  const auto attrs = draw_identity_attributes(spec);
  std::vector<ImageSample> out;
  for (int id = 0; id < identities; ++id) {
    for (int n = 0; n < per_identity; ++n) {
      ImageSample s;
      s.pixels = render_vehicle(spec, attrs[id], id, n);
      s.identity = id;
      s.camera = n % 2;
      out.push_back(std::move(s));
    }
  }
  return out;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.seed = 11;
  cfg.epochs = 2;
  cfg.batch = {3, 2};
  cfg.encoder.dim = 16;
  cfg.encoder.widths = {8, 8};
  cfg.ssl.hidden = 16;
  cfg.ssl.out_dim = 16;
  cfg.augment.global_size = 32;
  cfg.augment.local_size = 16;
  cfg.augment.n_local = 2;
  cfg.ema_momentum = 0.9;
  cfg.checkpoint_every = 1;
  cfg.schedule.warmup_epochs = 1;
  return cfg;
}

Batch first_batch(const std::vector<ImageSample>& data, const TrainConfig& cfg) {
  std::vector<int> labels;
  for (const auto& s : data) labels.push_back(s.identity);
  const PkSampler sampler(labels, cfg.batch, 1);
  const auto batches = sampler.epoch(0);
  std::vector<ImageSample> picked;
  for (int i : batches.front()) picked.push_back(data[i]);
  return make_batch(std::move(picked), cfg.batch);
}

std::vector<double> flat(const ParamList& list) {
  std::vector<double> out;
  for (const auto& t : list) out.insert(out.end(), t.values.begin(), t.values.end());
  return out;
}

}  // namespace

TEST(PkSampler, BatchesHaveExactLayout) {
  std::vector<int> labels;
  for (int id = 0; id < 7; ++id) {
    for (int n = 0; n < 5 + id % 3; ++n) labels.push_back(id);
  }
  const PkLayout layout{3, 2};
  const PkSampler sampler(labels, layout, 5);
  long chunks = 0;
  for (int id = 0; id < 7; ++id) chunks += (5 + id % 3) / 2;
  EXPECT_EQ(sampler.batches_per_epoch(), chunks / 3);

  for (int e = 0; e < 3; ++e) {
    const auto batches = sampler.epoch(e);
    EXPECT_EQ(static_cast<long>(batches.size()), sampler.batches_per_epoch());
    std::set<int> used;
    for (const auto& b : batches) {
      ASSERT_EQ(static_cast<int>(b.size()), layout.batch_size());
      std::map<int, int> counts;
      for (int i : b) {
        ++counts[labels[i]];
        EXPECT_TRUE(used.insert(i).second) << "image reused within an epoch";
      }
      EXPECT_EQ(static_cast<int>(counts.size()), layout.identities);
      for (const auto& [id, c] : counts) EXPECT_EQ(c, layout.instances);
    }
  }
}

TEST(PkSampler, DeterministicPerEpoch) {
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(i % 8);
  const PkSampler a(labels, {4, 4}, 9), b(labels, {4, 4}, 9);
  EXPECT_EQ(a.epoch(3), b.epoch(3));
  EXPECT_NE(a.epoch(3), a.epoch(4));
}

TEST(PkSampler, TopsUpSmallIdentities) {
  const std::vector<int> labels{0, 1, 1, 1, 1, 2, 2};
  const PkSampler sampler(labels, {2, 3}, 1);
  EXPECT_EQ(sampler.batches_per_epoch(), 1);
  const auto batches = sampler.epoch(0);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].size(), 6u);
}

TEST(PkSampler, TooFewIdentities) {
  EXPECT_THROW(PkSampler({0, 0, 1, 1}, {3, 2}, 1), DataError);
}

TEST(TrainStep, TotalIsWeightedSum) {
  const auto data = toy_samples(4, 4);
  TrainConfig cfg = small_config();
  cfg.loss.lambda_c = 0.7;
  cfg.loss.lambda_t = 1.9;
  cfg.loss.lambda_s = 0.3;
  TrainState state = init_train_state(cfg, 4, 5);
  const Batch batch = first_batch(data, cfg);
  for (int i = 0; i < 3; ++i) {
    const auto r = train_step(batch, state, cfg);
    EXPECT_NEAR(r.loss_total, 0.7 * r.loss_c + 1.9 * r.loss_t + 0.3 * r.loss_s, 1e-9);
    EXPECT_GT(r.loss_s, 0.0);
    EXPECT_EQ(r.iter, i);
  }
  EXPECT_EQ(state.iteration, 3);
  EXPECT_EQ(state.ssl_evaluations, 3);
}

TEST(TrainStep, TeacherChangesOnlyThroughEma) {
  const auto data = toy_samples(4, 4);
  const TrainConfig cfg = small_config();
  TrainState state = init_train_state(cfg, 4, 5);
  const Batch batch = first_batch(data, cfg);
  train_step(batch, state, cfg);  // let student and teacher diverge

  const auto teacher_before = flat(state.pair.teacher.encoder->parameters());
  const auto projector_before = flat(state.pair.teacher.projector.parameters());
  std::vector<double> student_after;
  StepHooks hooks;
  hooks.after_optimizer = [&](const TrainState& s) {
    EXPECT_EQ(flat(s.pair.teacher.encoder->parameters()), teacher_before);
    EXPECT_EQ(flat(s.pair.teacher.projector.parameters()), projector_before);
    student_after = flat(s.pair.student.encoder->parameters());
  };
  train_step(batch, state, cfg, hooks);
  const auto teacher_after = flat(state.pair.teacher.encoder->parameters());
  ASSERT_EQ(student_after.size(), teacher_after.size());
  for (std::size_t i = 0; i < teacher_after.size(); ++i) {
    EXPECT_NEAR(teacher_after[i], 0.9 * teacher_before[i] + 0.1 * student_after[i], 1e-15);
  }
}

TEST(TrainStep, FrozenTeacherWithUnitMomentum) {
  const auto data = toy_samples(4, 4);
  TrainConfig cfg = small_config();
  cfg.ema_momentum = 1.0;
  TrainState state = init_train_state(cfg, 4, 5);
  const auto before = state.pair.teacher.encoder->parameters();
  const auto proj_before = state.pair.teacher.projector.parameters();
  train_step(first_batch(data, cfg), state, cfg);
  EXPECT_EQ(state.pair.teacher.encoder->parameters(), before);
  EXPECT_EQ(state.pair.teacher.projector.parameters(), proj_before);
  EXPECT_NE(state.pair.student.encoder->parameters(), before);
}

TEST(TrainStep, BaselineNeverEvaluatesSslHead) {
  const auto data = toy_samples(4, 4);
  TrainConfig cfg = small_config();
  make_baseline(cfg);
  TrainState state = init_train_state(cfg, 4, 5);
  const auto projector = state.pair.student.projector.parameters();
  const Batch batch = first_batch(data, cfg);
  for (int i = 0; i < 3; ++i) {
    const auto r = train_step(batch, state, cfg);
    EXPECT_EQ(r.loss_s, 0.0);
    EXPECT_EQ(r.loss_total, r.loss_c + r.loss_t);
  }
  EXPECT_EQ(state.ssl_evaluations, 0);
  EXPECT_EQ(state.pair.student.projector.parameters(), projector);
}

TEST(TrainStep, CenterFrozenWhenCenteringDisabled) {
  const auto data = toy_samples(4, 4);
  TrainConfig cfg = small_config();
  cfg.ssl.centering = false;
  TrainState state = init_train_state(cfg, 4, 5);
  train_step(first_batch(data, cfg), state, cfg);
  EXPECT_EQ(state.center.c, Vector::Zero(16));
  cfg.ssl.centering = true;
  train_step(first_batch(data, cfg), state, cfg);
  EXPECT_GT(state.center.c.cwiseAbs().maxCoeff(), 0.0);
}

TEST(TrainStep, NonFiniteLossIsReported) {
  const auto data = toy_samples(4, 4);
  const TrainConfig cfg = small_config();
  TrainState state = init_train_state(cfg, 4, 5);
  state.pair.student.encoder->parameters().back().values[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train_step(first_batch(data, cfg), state, cfg);
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos);
    EXPECT_EQ(e.exit_code(), 5);
  }
}

TEST(TrainStep, SslOnlyLossDecreasesWithFrozenTeacher) {
  const auto data = toy_samples(4, 6);
  TrainConfig cfg = small_config();
  cfg.loss.lambda_c = cfg.loss.lambda_t = 0.0;
  cfg.ema_momentum = 1.0;
  TrainState state = init_train_state(cfg, 4, 10);
  const Batch batch = first_batch(data, cfg);
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) {
    const auto r = train_step(batch, state, cfg);
    ASSERT_TRUE(std::isfinite(r.loss_s));
    losses.push_back(r.loss_s);
  }
  const double head = std::accumulate(losses.begin(), losses.begin() + 10, 0.0) / 10;
  const double tail = std::accumulate(losses.end() - 10, losses.end(), 0.0) / 10;
  EXPECT_LT(tail, head);
}

TEST(Checkpoint, SaveLoadRestoresState) {
  testutil::TempDir dir("trainer");
  const auto data = toy_samples(4, 4);
  const TrainConfig cfg = small_config();
  TrainState state = init_train_state(cfg, 4, 5);
  train_step(first_batch(data, cfg), state, cfg);
  train_step(first_batch(data, cfg), state, cfg);
  save_checkpoint(dir / "s.ckpt", state, cfg);
  const auto loaded = load_checkpoint(dir / "s.ckpt");
  EXPECT_EQ(to_json(loaded.config), to_json(cfg));
  const TrainState& b = loaded.state;
  EXPECT_EQ(b.iteration, 2);
  EXPECT_EQ(b.pair.momentum, 0.9);
  EXPECT_EQ(b.pair.student.encoder->parameters(), state.pair.student.encoder->parameters());
  EXPECT_EQ(b.pair.teacher.encoder->parameters(), state.pair.teacher.encoder->parameters());
  EXPECT_EQ(b.pair.teacher.projector.parameters(), state.pair.teacher.projector.parameters());
  EXPECT_EQ(b.head.classifier, state.head.classifier);
  EXPECT_EQ(b.head.bn.running_mean, state.head.bn.running_mean);
  EXPECT_EQ(b.head.bn.running_var, state.head.bn.running_var);
  EXPECT_EQ(b.center.c, state.center.c);
  EXPECT_EQ(b.optimizer.steps(), 2);
  EXPECT_EQ(flat(b.optimizer.second_moments()), flat(state.optimizer.second_moments()));
}

TEST(RunTraining, WritesArtifactsWithFiniteLosses) {
  testutil::TempDir dir("trainer");
  const auto data = toy_samples(4, 4);
  const TrainConfig cfg = small_config();
  RunOptions opts;
  opts.out_dir = dir.path();
  const auto result = run_training(cfg, data, 4, opts);
  EXPECT_EQ(result.state.epoch, 2);
  EXPECT_EQ(static_cast<long>(result.log.records().size()), result.state.iteration);
  for (const auto& r : result.log.records()) {
    EXPECT_TRUE(std::isfinite(r.loss_total));
    EXPECT_TRUE(std::isfinite(r.lr));
  }
  EXPECT_TRUE(fs::exists(dir / "config.json"));
  EXPECT_TRUE(fs::exists(dir / "final.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint_epoch001.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint_epoch002.ckpt"));
  EXPECT_EQ(testutil::slurp(dir / "train_log.csv"), result.log.to_csv());
  EXPECT_EQ(result.log.to_csv().substr(0, result.log.to_csv().find('\n')),
            "iter,epoch,L_c,L_t,L_s,L_total,lr,tau_t,entropy_pt");
}

TEST(RunTraining, SameSeedIsBitIdentical) {
  testutil::TempDir a("trainer"), b("trainer");
  const auto data = toy_samples(4, 4);
  const TrainConfig cfg = small_config();
  RunOptions oa, ob;
  oa.out_dir = a.path();
  ob.out_dir = b.path();
  const auto ra = run_training(cfg, data, 4, oa);
  const auto rb = run_training(cfg, data, 4, ob);
  EXPECT_EQ(ra.log.to_csv(), rb.log.to_csv());
  EXPECT_EQ(testutil::slurp(a / "final.ckpt"), testutil::slurp(b / "final.ckpt"));

  TrainConfig other = cfg;
  other.seed = 12;
  EXPECT_NE(run_training(other, data, 4).log.to_csv(), ra.log.to_csv());
}

TEST(RunTraining, ResumeMatchesUninterruptedRun) {
  testutil::TempDir full("trainer"), part("trainer");
  const auto data = toy_samples(4, 4);
  const TrainConfig cfg = small_config();
  RunOptions of;
  of.out_dir = full.path();
  const auto uninterrupted = run_training(cfg, data, 4, of);

  TrainConfig first = cfg;
  first.epochs = 1;
  RunOptions op;
  op.out_dir = part.path();
  run_training(first, data, 4, op);
  RunOptions resume;
  resume.resume_from = part / "final.ckpt";
  resume.out_dir = part.path();
  const auto resumed = run_training(cfg, data, 4, resume);

  EXPECT_EQ(resumed.state.iteration, uninterrupted.state.iteration);
  EXPECT_EQ(testutil::slurp(part / "final.ckpt"), testutil::slurp(full / "final.ckpt"));
  EXPECT_EQ(testutil::slurp(part / "train_log.csv"), testutil::slurp(full / "train_log.csv"));
}

TEST(RunTraining, ResumeRejectsChangedConfig) {
  testutil::TempDir dir("trainer");
  const auto data = toy_samples(4, 4);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  RunOptions opts;
  opts.out_dir = dir.path();
  run_training(cfg, data, 4, opts);
  cfg.loss.lambda_t = 0.5;
  RunOptions resume;
  resume.resume_from = dir / "final.ckpt";
  EXPECT_THROW(run_training(cfg, data, 4, resume), ConfigError);
}

TEST(RunTraining, LabelsOutsideClassRange) {
  auto data = toy_samples(4, 4);
  EXPECT_THROW(run_training(small_config(), data, 3), DataError);
}

TEST(RunTraining, LossDecreasesOverFiveHundredSteps) {
  SyntheticSpec spec;
  spec.seed = 1;
  const auto attrs = draw_identity_attributes(spec);
  std::vector<ImageSample> data;
  for (int id = 0; id < spec.n_identities; ++id) {
    for (int n = 0; n < spec.images_per_identity; ++n) {
      ImageSample s;
      s.pixels = render_vehicle(spec, attrs[id], id, n);
      s.identity = id;
      s.camera = n % spec.n_cameras;
      data.push_back(std::move(s));
    }
  }
  TrainConfig cfg;
  cfg.augment.global_size = 32;
  cfg.augment.local_size = 16;
  cfg.ssl.hidden = 256;
  cfg.ema_momentum = 0.99;
  std::vector<double> totals;
  RunOptions opts;
  opts.on_step = [&](const TrainRecord& r) { totals.push_back(r.loss_total); };
  std::vector<int> labels;
  for (const auto& s : data) labels.push_back(s.identity);
  const long ipe = PkSampler(labels, cfg.batch, 0).batches_per_epoch();
  cfg.epochs = static_cast<int>((500 + ipe - 1) / ipe);
  run_training(cfg, data, spec.n_identities, opts);
  ASSERT_GE(totals.size(), 500u);
  auto window = [&](std::size_t end) {
    return std::accumulate(totals.begin() + static_cast<long>(end - 50), totals.begin() + static_cast<long>(end), 0.0) / 50;
  };
  EXPECT_LT(window(500), window(50));
}
