#include "ssbver/checkpoint.hpp"
#include "ssbver/config.hpp"
#include "ssbver/errors.hpp"
#include "ssbver/optim.hpp"
#include "ssbver/schedule.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ssbver;

TEST(LearningRate, WarmupEndpoints) {
  const LrSchedule s;
  const long ipe = 15;
  EXPECT_DOUBLE_EQ(learning_rate(0, s, ipe, 120), 4.95e-5);
  EXPECT_EQ(learning_rate(0, s, ipe, 120), 0.099 * 5e-4);
  EXPECT_EQ(learning_rate(10 * ipe, s, ipe, 120), 5e-4);
  const double mid = learning_rate(5 * ipe, s, ipe, 120);
  EXPECT_NEAR(mid, 0.5 * (4.95e-5 + 5e-4), 1e-18);
  for (long i = 1; i < 10 * ipe; ++i) EXPECT_GT(learning_rate(i, s, ipe, 120), learning_rate(i - 1, s, ipe, 120));
}

TEST(LearningRate, StepDecayBoundaries) {
  const LrSchedule s;
  const long ipe = 7;
  EXPECT_EQ(learning_rate(40 * ipe - 1, s, ipe, 120), 5e-4);
  EXPECT_DOUBLE_EQ(learning_rate(40 * ipe, s, ipe, 120), 5e-5);
  EXPECT_DOUBLE_EQ(learning_rate(70 * ipe - 1, s, ipe, 120), 5e-5);
  EXPECT_DOUBLE_EQ(learning_rate(70 * ipe, s, ipe, 120), 5e-6);
  EXPECT_DOUBLE_EQ(learning_rate(100 * ipe, s, ipe, 120), 5e-7);
  EXPECT_DOUBLE_EQ(learning_rate(120 * ipe - 1, s, ipe, 120), 5e-7);
}

TEST(LearningRate, CosineAnneals) {
  LrSchedule s;
  s.decay = LrDecay::cosine;
  const long ipe = 10;
  EXPECT_DOUBLE_EQ(learning_rate(0, s, ipe, 50), 0.099 * 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate(10 * ipe, s, ipe, 50), 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate(50 * ipe, s, ipe, 50), 1.6e-5);
  EXPECT_NEAR(learning_rate(30 * ipe, s, ipe, 50), 0.5 * (1e-4 + 1.6e-5), 1e-18);
  for (long i = 10 * ipe + 1; i <= 50 * ipe; ++i) EXPECT_LE(learning_rate(i, s, ipe, 50), learning_rate(i - 1, s, ipe, 50));
}

TEST(LearningRate, Validation) {
  LrSchedule s;
  s.milestones = {70, 40};
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.lr_min = 1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.gamma = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(AdamW, TwoScalarStepsByHand) {
  AdamW opt;
  opt.weight_decay = 0.01;
  Tensor p("p", {1}, 1.0);
  Tensor g("g", {1}, 0.5);
  Tensor* params[] = {&p};
  const Tensor* grads[] = {&g};

  double m = 0.0, v = 0.0, x = 1.0;
  const double lr = 0.1;
  for (int t = 1; t <= 2; ++t) {
    const double grad = t == 1 ? 0.5 : -0.25;
    g.values[0] = grad;
    opt.step(params, grads, lr);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double m_hat = m / (1.0 - std::pow(0.9, t));
    const double v_hat = v / (1.0 - std::pow(0.999, t));
    x = x - lr * 0.01 * x - lr * m_hat / (std::sqrt(v_hat) + 1e-8);
    EXPECT_NEAR(p.values[0], x, 1e-15) << "step " << t;
  }
  EXPECT_EQ(opt.steps(), 2);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  AdamW opt;
  Tensor p("p", {3}, 2.0);
  const Tensor g("g", {3}, 0.0);
  Tensor* params[] = {&p};
  const Tensor* grads[] = {&g};
  opt.step(params, grads, 0.5);
  for (double x : p.values) EXPECT_NEAR(x, 2.0 * (1.0 - 0.5 * 1e-3), 1e-15);
}

TEST(AdamW, RestoreContinuesIdentically) {
  AdamW a, b;
  Tensor pa("p", {2}, 1.0), pb("p", {2}, 1.0);
  Tensor g("g", {2});
  g.values = {0.3, -0.7};
  Tensor* a_params[] = {&pa};
  Tensor* b_params[] = {&pb};
  const Tensor* grads[] = {&g};
  a.step(a_params, grads, 0.01);
  b.restore(a.steps(), a.first_moments(), a.second_moments());
  pb = pa;
  a.step(a_params, grads, 0.01);
  b.step(b_params, grads, 0.01);
  EXPECT_EQ(pa.values, pb.values);
}

TEST(Archive, RoundTrip) {
  testutil::TempDir dir("ckpt");
  Archive a;
  a.metadata = {{"iteration", 12}, {"note", "x"}};
  Tensor t("layer.weight", {2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t.values[i] = std::ldexp(1.0, static_cast<int>(i)) / 3.0;
  a.add(t);
  a.add(Tensor("bias", {4}, -0.25));
  a.add(ParamList{Tensor("w", {1}, 7.0)}, "head.");
  write_archive(dir / "a.ckpt", a);
  const Archive b = read_archive(dir / "a.ckpt");
  EXPECT_EQ(b.metadata, a.metadata);
  EXPECT_EQ(b.arrays, a.arrays);
  EXPECT_TRUE(b.contains("head.w"));
  EXPECT_FALSE(b.contains("w"));
  ParamList into{Tensor("w", {1})};
  b.read_into(into, "head.");
  EXPECT_EQ(into[0].values[0], 7.0);
  ParamList wrong{Tensor("w", {2})};
  EXPECT_THROW(b.read_into(wrong, "head."), ShapeMismatchError);
  EXPECT_THROW(b.get("missing"), DataError);
}

TEST(Archive, RejectsForeignFiles) {
  testutil::TempDir dir("ckpt");
  testutil::spit(dir / "bad.ckpt", "definitely not a checkpoint");
  EXPECT_THROW(read_archive(dir / "bad.ckpt"), DataError);
  EXPECT_THROW(read_archive(dir / "absent.ckpt"), MissingFileError);
}

TEST(Config, DefaultsRoundTrip) {
  const TrainConfig cfg;
  const auto j = to_json(cfg);
  EXPECT_EQ(j["epochs"], 120);
  EXPECT_EQ(j["ema"]["momentum"], 0.9995);
  EXPECT_EQ(j["loss"]["label_smoothing"], 0.2);
  EXPECT_EQ(j["schedule"]["milestones"], nlohmann::json({40, 70, 100}));
  EXPECT_EQ(j["augment"]["n_local"], 4);
  EXPECT_EQ(to_json(train_config_from_json(j)), j);
  EXPECT_EQ(to_json(train_config_from_json(nlohmann::json::object())), j);
}

TEST(Config, PartialDocumentOverridesDefaults) {
  const auto cfg = train_config_from_json({{"epochs", 3}, {"loss", {{"lambda_s", 0.5}}}, {"schedule", {{"decay", "cosine"}}}});
  EXPECT_EQ(cfg.epochs, 3);
  EXPECT_EQ(cfg.loss.lambda_s, 0.5);
  EXPECT_EQ(cfg.loss.lambda_c, 1.0);
  EXPECT_EQ(cfg.schedule.decay, LrDecay::cosine);
}

TEST(Config, UnknownKeysNameThePath) {
  try {
    train_config_from_json({{"loss", {{"lambda_x", 1.0}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("loss.lambda_x"), std::string::npos);
  }
  EXPECT_THROW(train_config_from_json({{"optimiser", 1}}), ConfigError);
}

TEST(Config, InvalidValues) {
  EXPECT_THROW(train_config_from_json({{"loss", {{"lambda_t", -1.0}}}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"batch", {{"K", 1}}}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"eval", {{"protocol", "market"}}}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"loss", {{"ssl_objective", "mse"}}}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"epochs", "ten"}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"encoder", {{"dim", 4}}}}), ConfigError);
}

TEST(Config, DottedOverrides) {
  auto doc = to_json(TrainConfig{});
  apply_override(doc, "loss.lambda_s=0.25");
  apply_override(doc, "eval.protocol=none");
  apply_override(doc, "schedule.milestones=[5,8]");
  apply_override(doc, "ssl.centering=false");
  const auto cfg = train_config_from_json(doc);
  EXPECT_EQ(cfg.loss.lambda_s, 0.25);
  EXPECT_EQ(cfg.eval_protocol, "none");
  EXPECT_EQ(cfg.schedule.milestones, (std::vector<int>{5, 8}));
  EXPECT_FALSE(cfg.ssl.centering);
  EXPECT_THROW(apply_override(doc, "loss.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(doc, "loss=1"), ConfigError);
  EXPECT_THROW(apply_override(doc, "no_equals_sign"), ConfigError);
}

TEST(Config, Baseline) {
  TrainConfig cfg;
  make_baseline(cfg);
  EXPECT_EQ(cfg.loss.lambda_s, 0.0);
  EXPECT_EQ(cfg.augment.n_local, 0);
  EXPECT_FALSE(cfg.ssl_active());
}
