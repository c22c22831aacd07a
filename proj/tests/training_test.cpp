// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include <gtest/gtest.h>

#include <set>

#include "avr/training.hpp"
#include "corpus.hpp"

namespace avr {
namespace {

using test::TempDir;
using test::write_corpus;

ModelConfig toy_config() {
  ModelConfig c;
  c.embed_dim = 8;
  c.depths = {1, 1};
  c.heads = {2, 2};
  c.bottleneck_depth = 1;
  c.window = {5, 2, 2};
  return c;
}

TrainConfig toy_train(const fs::path& dir) {
  TrainConfig c;
  c.crop = 16;
  c.batch_size = 2;
  c.steps = 4;
  c.weights.perceptual = 0.0;
  c.optimizer.lr = 1e-3;
  c.val_every = 2;
  c.val_crop = 16;
  c.checkpoint_dir = dir;
  c.prefetch = false;
  return c;
}

std::map<std::string, Tensor> snapshot(const RestorationModel& m) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : m.params) out.emplace(name, v.value());
  return out;
}

void expect_code(ErrorCode code, const std::function<void()>& f) {
  try {
    f();
    FAIL() << "expected " << error_code_name(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

TEST(LearningRate, WarmupThenCosine) {
  TrainConfig c;
  c.optimizer.lr = 1.0;
  c.steps = 110;
  c.schedule.warmup_steps = 10;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate(c, 9), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate(c, 10), 1.0);
  EXPECT_NEAR(learning_rate(c, 60), 0.5, 1e-12);
  EXPECT_NEAR(learning_rate(c, 110), 0.0, 1e-12);
  for (int s = 11; s < 110; ++s) EXPECT_LT(learning_rate(c, s), learning_rate(c, s - 1));
  c.schedule.kind = ScheduleKind::kConstant;
  EXPECT_DOUBLE_EQ(learning_rate(c, 80), 1.0);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.seed = 42;
  c.optimizer.beta2 = 0.99;
  c.schedule.kind = ScheduleKind::kConstant;
  c.extractor = "vgg.zip";
  const TrainConfig r = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(r), to_json(c));
  EXPECT_NO_THROW(c.validate(ModelConfig{}));
  c.crop = 100;
  expect_code(ErrorCode::kInvalidParam, [&] { c.validate(ModelConfig{}); });
  c.crop = 256;
  c.t = 3;
  expect_code(ErrorCode::kInvalidParam, [&] { c.validate(ModelConfig{}); });
  expect_code(ErrorCode::kInvalidParam,
              [] { train_config_from_json({{"lr_schedule", {{"kind", "step"}}}}); });
}

TEST(TrainStep, ZeroLearningRateLeavesParametersBitIdentical) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 2, 16, 16, true);
  TrainConfig cfg = toy_train(dir / "ck");
  cfg.optimizer.lr = 0.0;
  TrainState s = initial_state(toy_config(), cfg);
  Tensor& w = s.model.params.at("output.weight").node()->value;
  w = test::random_tensor(w.shape(), 3, -0.05, 0.05);
  const auto before = snapshot(s.model);
  auto rng = batch_stream(0, 0);
  const LossReport r = train_step(s, PatchSampler(m, Split::kTrain, 5, 16).batch(rng, 2), cfg, nullptr);
  EXPECT_GT(r.pixel, 0.0);
  EXPECT_EQ(snapshot(s.model), before);
  EXPECT_EQ(s.step, 1);
}

TEST(TrainStep, PerfectPredictionIsAFixedPoint) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 2, 16, 16, false);
  TrainConfig cfg = toy_train(dir / "ck");
  TrainState s = initial_state(toy_config(), cfg);
  const auto before = snapshot(s.model);
  auto rng = batch_stream(0, 0);
  const LossReport r = train_step(s, PatchSampler(m, Split::kTrain, 5, 16).batch(rng, 2), cfg, nullptr);
  EXPECT_EQ(r.total, 0.0);
  EXPECT_EQ(snapshot(s.model), before);
}

TEST(TrainStep, NonFiniteLossRaisesWithStepIndex) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 2, 16, 16, true);
  TrainConfig cfg = toy_train(dir / "ck");
  TrainState s = initial_state(toy_config(), cfg);
  s.step = 7;
  auto rng = batch_stream(0, 0);
  Batch b = PatchSampler(m, Split::kTrain, 5, 16).batch(rng, 2);
  b.gt.data()[5] = std::numeric_limits<double>::quiet_NaN();
  const auto before = snapshot(s.model);
  try {
    train_step(s, b, cfg, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumericalError);
    EXPECT_NE(std::string(e.what()).find("step 7"), std::string::npos);
  }
  EXPECT_EQ(snapshot(s.model), before);
}

TEST(TrainStep, OverfitsOneBatch) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 2, 16, 16, true);
  TrainConfig cfg = toy_train(dir / "ck");
  cfg.schedule.kind = ScheduleKind::kConstant;
  TrainState s = initial_state(toy_config(), cfg);
  auto rng = batch_stream(1, 0);
  const Batch b = PatchSampler(m, Split::kTrain, 5, 16).batch(rng, 1);
  const double first = train_step(s, b, cfg, nullptr).total;
  double last = first;
  for (int i = 1; i < 50; ++i) last = train_step(s, b, cfg, nullptr).total;
  EXPECT_LT(last, 0.5 * first);
}

TEST(TrainStep, PerceptualTermNeedsExtractor) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 2, 16, 16, true);
  TrainConfig cfg = toy_train(dir / "ck");
  cfg.weights.perceptual = 0.1;
  expect_code(ErrorCode::kExtractorUnavailable, [&] { fit(cfg, toy_config(), m); });
  const FeatureExtractor ex =
      load_feature_extractor(std::string(AVR_FIXTURE_DIR) + "/test_extractor.json");
  FitOptions opt;
  opt.extractor = &ex;
  cfg.steps = 1;
  EXPECT_EQ(fit(cfg, toy_config(), m, opt).step, 1);
}

TEST(Fit, ZeroStepsWritesLoadableCheckpoint) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 2, 16, 16, true);
  TrainConfig cfg = toy_train(dir / "ck");
  cfg.steps = 0;
  const TrainState s = fit(cfg, toy_config(), m);
  EXPECT_EQ(s.step, 0);
  const TrainState r = load_train_state(dir / "ck" / "latest.avrw");
  EXPECT_EQ(r.step, 0);
  EXPECT_EQ(snapshot(r.model), snapshot(init_parameters(toy_config(), cfg.seed)));
  EXPECT_NO_THROW(load_weights(dir / "ck" / "latest.avrw"));
}

TEST(Fit, WritesCheckpointsAndLog) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 4, 16, 16, true);
  TrainConfig cfg = toy_train(dir / "ck");
  std::vector<nlohmann::json> logged;
  FitOptions opt;
  opt.on_log = [&](const nlohmann::json& j) { logged.push_back(j); };
  const TrainState s = fit(cfg, toy_config(), m, opt);
  EXPECT_EQ(s.step, 4);
  EXPECT_TRUE(fs::exists(dir / "ck" / "best.avrw"));
  EXPECT_GT(s.best_val_psnr, 0.0);
  std::ifstream in(dir / "ck" / "metrics.jsonl");
  std::string line;
  int losses = 0, vals = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    losses += j.contains("loss");
    vals += j.contains("val_psnr_db");
  }
  EXPECT_EQ(losses, 4);
  EXPECT_EQ(vals, 2);
  EXPECT_EQ(logged.size(), 6u);
}

TEST(Fit, ResumeMatchesUninterruptedRun) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 4, 16, 16, true);
  TrainConfig cfg = toy_train(dir / "full");
  cfg.steps = 200;
  cfg.val_every = 0;
  cfg.checkpoint_every = 100;
  cfg.schedule = {ScheduleKind::kConstant, 10};
  std::vector<double> losses;
  FitOptions opt;
  opt.on_log = [&](const nlohmann::json& j) { losses.push_back(j["loss"]); };
  const TrainState full = fit(cfg, toy_config(), m, opt);
  ASSERT_EQ(losses.size(), 200u);
  for (double l : losses) EXPECT_TRUE(std::isfinite(l));

  cfg.checkpoint_dir = dir / "split";
  cfg.steps = 100;
  fit(cfg, toy_config(), m);
  cfg.steps = 200;
  const TrainState resumed = fit(cfg, toy_config(), m);
  EXPECT_EQ(resumed.step, 200);
  EXPECT_EQ(snapshot(resumed.model), snapshot(full.model));
  EXPECT_EQ(resumed.adam_m, full.adam_m);
  EXPECT_EQ(resumed.adam_v, full.adam_v);
}

TEST(Fit, ReproducibleAndIndependentOfPrefetch) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 4, 16, 16, true);
  TrainConfig cfg = toy_train(dir / "a");
  cfg.val_every = 0;
  const TrainState a = fit(cfg, toy_config(), m);
  cfg.checkpoint_dir = dir / "b";
  cfg.prefetch = true;
  const TrainState b = fit(cfg, toy_config(), m);
  EXPECT_EQ(snapshot(a.model), snapshot(b.model));
  cfg.checkpoint_dir = dir / "c";
  cfg.seed = 9;
  EXPECT_NE(snapshot(fit(cfg, toy_config(), m).model), snapshot(a.model));
}

TEST(Fit, ResumeWithOtherModelConfigIsIncompatible) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 2, 16, 16, true);
  TrainConfig cfg = toy_train(dir / "ck");
  cfg.steps = 0;
  fit(cfg, toy_config(), m);
  ModelConfig other = toy_config();
  other.embed_dim = 16;
  expect_code(ErrorCode::kIncompatibleCheckpoint, [&] { fit(cfg, other, m); });
}

TEST(Fit, EmptySplitIsNoData) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 1, 16, 16, true);
  expect_code(ErrorCode::kNoData, [&] { fit(toy_train(dir / "ck"), toy_config(), m); });
}

TEST(PatchSampler, WholeClipWhenSizesMatch) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 2, 16, 16, true, 5);
  const PatchSampler s(m, Split::kTrain, 5, 16);
  std::mt19937_64 rng(1);
  const Batch b = s.batch(rng, 1);
  const ComputeClip gt = to_compute(load_clip(m.clip_dir(*m.split(Split::kTrain)[0], "gt")));
  for (int k = 0; k < 5; ++k)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
          ASSERT_EQ(b.gt.data()[((k * 3 + c) * 16 + y) * 16 + x], gt.frames[k].at(y, x, c));
}

TEST(PatchSampler, WindowsStayAlignedAndInBounds) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 2, 24, 20, true, 9);
  const PatchSampler s(m, Split::kTrain, 5, 16);
  std::mt19937_64 rng(2);
  const ComputeClip gt = to_compute(load_clip(m.clip_dir(s.entry(0), "gt")));
  const ComputeClip deg = to_compute(load_clip(m.clip_dir(s.entry(0), "degraded")));
  for (int i = 0; i < 20; ++i) {
    const auto d = s.draw(rng);
    ASSERT_LE(d.start + 5, 9);
    ASSERT_LE(d.top + 16, 24);
    ASSERT_LE(d.left + 16, 20);
    Tensor a({5, 3, 16, 16}), b({5, 3, 16, 16});
    s.read(d, a.data(), b.data());
    for (int k = 0; k < 5; ++k)
      for (int y = 0; y < 16; y += 5)
        for (int x = 0; x < 16; x += 5) {
          ASSERT_EQ(a.data()[(k * 3 * 16 + y) * 16 + x], deg.frames[d.start + k].at(d.top + y, d.left + x, 0));
          ASSERT_EQ(b.data()[(k * 3 * 16 + y) * 16 + x], gt.frames[d.start + k].at(d.top + y, d.left + x, 0));
        }
  }
}

TEST(PatchSampler, Deterministic) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 4, 20, 20, true, 7);
  const PatchSampler s(m, Split::kTrain, 5, 16);
  auto r1 = batch_stream(4, 10), r2 = batch_stream(4, 10), r3 = batch_stream(4, 11);
  const Batch a = s.batch(r1, 3), b = s.batch(r2, 3), c = s.batch(r3, 3);
  EXPECT_EQ(a.gt, b.gt);
  EXPECT_EQ(a.degraded, b.degraded);
  EXPECT_NE(a.gt, c.gt);
}

TEST(PatchSampler, RejectsShortOrSmallClips) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 2, 16, 16, true, 4);
  try {
    PatchSampler(m, Split::kTrain, 5, 16);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSampleError);
    EXPECT_NE(std::string(e.what()).find("clip0"), std::string::npos);
  }
  expect_code(ErrorCode::kSampleError, [&] { PatchSampler(m, Split::kTrain, 3, 32); });
}

TEST(PatchSampler, EveryClipAndStartIsReached) {
  TempDir dir;
  ClipManifest m;
  m.root = dir.path();
  for (int i = 0; i < 10; ++i) {
    ManifestEntry e{"c" + std::to_string(i), 6, Split::kTrain};
    save_clip(test::random_storage_clip(6, 16, 16, i), m.clip_dir(e, "gt"));
    m.entries.push_back(e);
  }
  const PatchSampler s(m, Split::kTrain, 5, 16);
  std::mt19937_64 rng(3);
  std::vector<int> hits(10, 0);
  std::set<int> starts;
  for (int i = 0; i < 1000; ++i) {
    const auto d = s.draw(rng);
    ++hits[d.clip];
    starts.insert(d.start);
  }
  double chi2 = 0.0;
  for (int h : hits) chi2 += (h - 100.0) * (h - 100.0) / 100.0;
  EXPECT_LT(chi2, 27.88);  // 9 dof, p = 0.001
  EXPECT_EQ(*std::min_element(hits.begin(), hits.end()) > 0, true);
  EXPECT_EQ(starts, (std::set<int>{0, 1}));
}

TEST(BatchPrefetcher, PropagatesWorkerErrors) {
  TempDir dir;
  const ClipManifest m = write_corpus(dir.path(), 2, 16, 16, true);
  const PatchSampler s(m, Split::kTrain, 5, 16);
  fs::remove_all(m.clip_dir(s.entry(0), "gt"));
  BatchPrefetcher p(s, 0, 1, 0, 3);
  expect_code(ErrorCode::kIoError, [&] { p.next(); });
}

}  // namespace
}  // namespace avr
