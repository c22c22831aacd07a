// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include <gtest/gtest.h>

#include "avr/model.hpp"
#include "test_util.hpp"

namespace avr {
namespace {

using test::random_tensor;
using test::TempDir;

ModelConfig toy_config() {
  ModelConfig c;
  c.embed_dim = 16;
  c.depths = {1, 1};
  c.heads = {2, 4};
  c.bottleneck_depth = 1;
  c.window = {5, 4, 4};
  return c;
}

void perturb(RestorationModel& m, const std::string& name, std::uint64_t seed) {
  Tensor& v = m.params.at(name).node()->value;
  v = random_tensor(v.shape(), seed, -0.05, 0.05);
}

template <typename F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kPrecondition;
}

TEST(PatchEmbed, StrideArithmetic) {
  ag::NoGradGuard g;
  auto w96 = ag::constant(Tensor({3, 4, 4, 3, 96}));
  auto b96 = ag::constant(Tensor({96}));
  EXPECT_EQ(patch_embed_3d(ag::constant(Tensor({1, 5, 3, 256, 256})), w96, b96).shape(),
            (Shape{1, 5, 64, 64, 96}));
  auto w16 = ag::constant(Tensor({3, 4, 4, 3, 16}));
  auto b16 = ag::constant(Tensor({16}));
  EXPECT_EQ(patch_embed_3d(ag::constant(Tensor({2, 5, 3, 64, 64})), w16, b16).shape(),
            (Shape{2, 5, 16, 16, 16}));
  EXPECT_EQ(error_of([&] { patch_embed_3d(ag::constant(Tensor({1, 5, 3, 250, 256})), w96, b96); }),
            ErrorCode::kShapeError);
  const RestorationModel m = init_parameters(ModelConfig{}, 1);
  EXPECT_EQ(error_of([&] { restore_tensor(m, Tensor({1, 5, 3, 250, 256})); }),
            ErrorCode::kShapeError);
}

TEST(SwinStage, PreservesShapeAndChecksWindow) {
  ModelConfig cfg = toy_config();
  RestorationModel m = init_parameters(cfg, 3);
  std::vector<SwinBlockParams> blocks{SwinBlockParams::from(m, "encoder.0.blocks.0.", 2),
                                      SwinBlockParams::from(m, "encoder.0.blocks.0.", 2)};
  ag::NoGradGuard g;
  ag::Var x = ag::constant(random_tensor({1, 5, 16, 16, 16}, 4));
  EXPECT_EQ(swin_stage(x, blocks, {5, 4, 4}).shape(), (Shape{1, 5, 16, 16, 16}));
  ag::Var small = ag::constant(random_tensor({1, 5, 2, 2, 16}, 5));
  EXPECT_EQ(error_of([&] { swin_stage(small, blocks, {5, 4, 4}); }), ErrorCode::kShapeError);
}

TEST(SwinStage, AttentionRowsSumToOne) {
  const std::array<int, 3> window{5, 4, 4};
  ag::WindowAttentionSpec spec;
  spec.heads = 2;
  spec.scale = 0.25;
  spec.relative_index =
      std::make_shared<const std::vector<std::int32_t>>(relative_position_index(window));
  spec.mask = std::make_shared<const Tensor>(shifted_window_mask({5, 8, 8}, window, {0, 2, 2}));
  const Tensor probs =
      ag::window_attention_probs(ag::constant(random_tensor({4, 80, 3 * 8}, 6, -3, 3)),
                                 ag::constant(random_tensor({9 * 7 * 7, 2}, 7)), spec);
  const std::int64_t rows = probs.size() / 80;
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::int64_t j = 0; j < 80; ++j) s += probs[r * 80 + j];
    ASSERT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SwinStage, BatchEntriesAreIndependent) {
  RestorationModel m = init_parameters(toy_config(), 8);
  std::vector<SwinBlockParams> blocks{SwinBlockParams::from(m, "encoder.0.blocks.0.", 2)};
  blocks.push_back(blocks[0]);
  ag::NoGradGuard g;
  const Tensor a = random_tensor({1, 5, 8, 8, 16}, 9), b = random_tensor({1, 5, 8, 8, 16}, 10);
  Tensor ab({2, 5, 8, 8, 16}), ba({2, 5, 8, 8, 16});
  const std::size_t n = a.size();
  std::copy_n(a.data(), n, ab.data());
  std::copy_n(b.data(), n, ab.data() + n);
  std::copy_n(b.data(), n, ba.data());
  std::copy_n(a.data(), n, ba.data() + n);
  const Tensor yab = swin_stage(ag::constant(ab), blocks, {5, 4, 4}).value();
  const Tensor yba = swin_stage(ag::constant(ba), blocks, {5, 4, 4}).value();
  const Tensor ya = swin_stage(ag::constant(a), blocks, {5, 4, 4}).value();
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(yab[i], yba[n + i]);
    EXPECT_EQ(yab[n + i], yba[i]);
    EXPECT_NEAR(yab[i], ya[i], 1e-12);
  }
}

TEST(PatchMerge, ShapesAndParity) {
  ag::NoGradGuard g;
  EXPECT_EQ(patch_merge(ag::constant(Tensor({1, 5, 16, 16, 16})), ag::constant(Tensor({64, 32})))
                .shape(),
            (Shape{1, 5, 8, 8, 32}));
  EXPECT_EQ(patch_merge(ag::constant(Tensor({1, 5, 2, 2, 6})), ag::constant(Tensor({24, 12})))
                .shape(),
            (Shape{1, 5, 1, 1, 12}));
  EXPECT_EQ(error_of([] {
              patch_merge(ag::constant(Tensor({1, 5, 3, 4, 6})), ag::constant(Tensor({24, 12})));
            }),
            ErrorCode::kShapeError);
}

TEST(PatchExpand, ShapesAndGuards) {
  ag::NoGradGuard g;
  EXPECT_EQ(patch_expand_pixel_shuffle(ag::constant(Tensor({1, 5, 8, 8, 32})),
                                       ag::constant(Tensor({32, 64})))
                .shape(),
            (Shape{1, 5, 16, 16, 16}));
  EXPECT_EQ(patch_expand_pixel_shuffle(ag::constant(Tensor({1, 5, 8, 8, 6})),
                                       ag::constant(Tensor({6, 12})))
                .shape(),
            (Shape{1, 5, 16, 16, 3}));
  EXPECT_EQ(error_of([] {
              patch_expand_pixel_shuffle(ag::constant(Tensor({1, 5, 2, 2, 5})),
                                         ag::constant(Tensor({5, 10})));
            }),
            ErrorCode::kShapeError);
}

TEST(PatchExpand, ChannelBlockLandsAtItsOffset) {
  // Identity projection 8 -> 16 on a 1x1 grid: input channel i becomes
  // projected channel i = c*4 + k, which must land at offset k of channel c.
  const int C = 8;
  Tensor eye({C, 2 * C});
  for (int i = 0; i < C; ++i) eye.at(i, i) = 1.0;
  ag::NoGradGuard g;
  for (int i = 0; i < C; ++i) {
    Tensor x({1, 1, 1, 1, C});
    x[i] = 1.0;
    const Tensor out = patch_expand_pixel_shuffle(ag::constant(x), ag::constant(eye)).value();
    ASSERT_EQ(out.shape(), (Shape{1, 1, 2, 2, C / 2}));
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        for (int c = 0; c < C / 2; ++c)
          EXPECT_EQ(out.at(0, 0, dy, dx, c), c == i / 4 && dy * 2 + dx == i % 4 ? 1.0 : 0.0);
  }
}

TEST(ForwardRestore, ToyShapeContractAndZeroInitIdentity) {
  const RestorationModel m = init_parameters(toy_config(), 11);
  const Tensor x = random_tensor({1, 5, 3, 64, 64}, 12, 0.0, 1.0);
  ag::NoGradGuard g;
  const Tensor y = forward_restore(m, ag::constant(x)).value();
  ASSERT_EQ(y.shape(), x.shape());
  EXPECT_TRUE(y == x);
  EXPECT_TRUE(restore_tensor(m, x) == x);
}

TEST(ForwardRestore, DefaultConfigFullResolution) {
  const RestorationModel m = init_parameters(ModelConfig{}, 13);
  const Tensor x = random_tensor({1, 5, 3, 256, 256}, 14, 0.0, 1.0);
  EXPECT_TRUE(restore_tensor(m, x) == x);
}

TEST(ForwardRestore, PerturbedOutputIsFiniteAndBatchConsistent) {
  RestorationModel m = init_parameters(toy_config(), 15);
  perturb(m, "output.weight", 16);
  const Tensor a = random_tensor({1, 5, 3, 32, 32}, 17, 0.0, 1.0);
  const Tensor b = random_tensor({1, 5, 3, 32, 32}, 18, 0.0, 1.0);
  Tensor ab({2, 5, 3, 32, 32});
  std::copy_n(a.data(), a.size(), ab.data());
  std::copy_n(b.data(), b.size(), ab.data() + a.size());
  ag::NoGradGuard g;
  const Tensor yab = forward_restore(m, ag::constant(ab)).value();
  const Tensor ya = forward_restore(m, ag::constant(a)).value();
  const Tensor yb = forward_restore(m, ag::constant(b)).value();
  ASSERT_TRUE(yab.all_finite());
  EXPECT_GT(max_abs_diff(ya, a), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(yab[i], ya[i], 1e-5);
    EXPECT_NEAR(yab[a.size() + i], yb[i], 1e-5);
  }
}

TEST(ForwardRestore, NonFiniteParametersAreRejected) {
  RestorationModel m = init_parameters(toy_config(), 19);
  m.params.at("final.norm.bias").node()->value[0] = std::nan("");
  EXPECT_EQ(error_of([&] { restore_tensor(m, Tensor({1, 5, 3, 32, 32})); }),
            ErrorCode::kNumericalError);
}

TEST(ForwardRestore, EveryParameterGroupReceivesGradient) {
  RestorationModel m = init_parameters(toy_config(), 20);
  perturb(m, "output.weight", 21);
  const Tensor x = random_tensor({1, 5, 3, 32, 32}, 22, 0.0, 1.0);
  ag::Var y = forward_restore(m, ag::constant(x));
  ag::backward(ag::mean(ag::relu(y)));
  for (const auto& [name, v] : m.params) {
    double norm = 0.0;
    for (double gv : v.grad().values()) norm += gv * gv;
    EXPECT_GT(norm, 0.0) << name;
  }
}

TEST(ForwardRestore, RandomValidConfigsPreserveShape) {
  std::mt19937_64 rng(23);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % (hi - lo + 1)); };
  for (int trial = 0; trial < 12; ++trial) {
    ModelConfig c;
    c.t = pick(1, 3);
    c.window = {c.t, pick(1, 2) * 2, pick(1, 2) * 2};
    const int stages = pick(1, 2);
    c.embed_dim = 4 * pick(1, 2);
    c.depths.assign(stages, 1);
    c.heads.assign(stages, 1);
    for (int i = 0; i < stages; ++i) c.heads[i] = (i == 0 ? pick(1, 2) : 2);
    c.bottleneck_depth = pick(0, 2);
    c.mlp_ratio = pick(1, 2);
    c.shift = rng() % 2 == 0;
    const std::int64_t B = pick(1, 2);
    const std::int64_t H = c.row_granularity() * pick(1, 2);
    const std::int64_t W = c.col_granularity() * pick(1, 2);
    RestorationModel m = init_parameters(c, rng());
    perturb(m, "output.weight", rng());
    const Tensor x = random_tensor({B, c.t, 3, H, W}, rng(), 0.0, 1.0);
    ag::NoGradGuard g;
    const Tensor y = forward_restore(m, ag::constant(x)).value();
    EXPECT_EQ(y.shape(), x.shape()) << to_json(c).dump();
    EXPECT_TRUE(y.all_finite());
  }
}

TEST(InitParameters, DeterministicAndWithinTruncation) {
  const RestorationModel a = init_parameters(toy_config(), 5), b = init_parameters(toy_config(), 5);
  const RestorationModel c = init_parameters(toy_config(), 6);
  bool differs = false;
  for (const auto& spec : parameter_specs(toy_config())) {
    const Tensor& v = a.param(spec.name).value();
    EXPECT_TRUE(v == b.param(spec.name).value()) << spec.name;
    differs |= !(v == c.param(spec.name).value());
    for (double x : v.values()) {
      if (spec.init == InitKind::kTruncNormal) EXPECT_LE(std::abs(x), 0.04);
      if (spec.init == InitKind::kOnes) EXPECT_EQ(x, 1.0);
      if (spec.init == InitKind::kZeros) EXPECT_EQ(x, 0.0);
    }
  }
  EXPECT_TRUE(differs);
  for (double x : a.param("output.weight").value().values()) EXPECT_EQ(x, 0.0);
}

TEST(InitParameters, InvalidConfigsAreRejected) {
  ModelConfig c = toy_config();
  c.heads = {3, 4};
  EXPECT_EQ(error_of([&] { init_parameters(c, 1); }), ErrorCode::kInvalidParam);
  c = toy_config();
  c.window = {6, 4, 4};
  EXPECT_EQ(error_of([&] { init_parameters(c, 1); }), ErrorCode::kInvalidParam);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  RestorationModel m = init_parameters(toy_config(), 30);
  perturb(m, "output.weight", 31);
  save_weights(m, dir / "w.avrw");
  const RestorationModel back = load_weights(dir / "w.avrw");
  EXPECT_EQ(to_json(back.config), to_json(m.config));
  ASSERT_EQ(back.params.size(), m.params.size());
  for (const auto& [name, v] : m.params) EXPECT_TRUE(v.value() == back.param(name).value());
  const Tensor x = random_tensor({1, 5, 3, 32, 32}, 32, 0.0, 1.0);
  EXPECT_TRUE(restore_tensor(m, x) == restore_tensor(back, x));
}

TEST(Checkpoint, EditedHashIsIncompatible) {
  TempDir dir;
  save_weights(init_parameters(toy_config(), 33), dir / "w.avrw");
  auto entries = zip::read(zip::read_file((dir / "w.avrw").string()));
  for (auto& e : entries)
    if (e.name == "config.json") {
      auto j = nlohmann::json::parse(e.data);
      j["config_hash"] = "0000000000000000";
      e.data = j.dump();
    }
  zip::write_file((dir / "edited.avrw").string(), zip::write(entries));
  EXPECT_EQ(error_of([&] { load_weights(dir / "edited.avrw"); }),
            ErrorCode::kIncompatibleCheckpoint);
  EXPECT_EQ(error_of([&] { load_weights(dir / "missing.avrw"); }), ErrorCode::kNotFound);
}

}  // namespace
}  // namespace avr
