// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#include <gtest/gtest.h>

#include "avr/losses.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace avr {
namespace {

using test::random_tensor;

const std::string kExtractor = std::string(AVR_FIXTURE_DIR) + "/test_extractor.json";

const FeatureExtractor& fixture() {
  static const FeatureExtractor ex = load_feature_extractor(kExtractor);
  return ex;
}

// (B,T,3,H,W) planar tensor -> per-frame HWC images.
std::vector<oracle::Image> to_images(const Tensor& t) {
  const auto H = t.dim(3), W = t.dim(4);
  const auto n = t.dim(0) * t.dim(1);
  std::vector<oracle::Image> out;
  for (std::int64_t f = 0; f < n; ++f) {
    oracle::Image img{static_cast<int>(H), static_cast<int>(W), 3,
                      std::vector<double>(static_cast<std::size_t>(H * W * 3))};
    for (int c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x)
          img.at(static_cast<int>(y), static_cast<int>(x), c) = t[((f * 3 + c) * H + y) * W + x];
    out.push_back(std::move(img));
  }
  return out;
}

TEST(MseLoss, Examples) {
  EXPECT_EQ(mse_loss(Tensor({2}, {0.0, 0.5}), Tensor({2}, {0.5, 0.5})), 0.125);
  EXPECT_EQ(mse_loss(Tensor({3, 2}, 1.0), Tensor({3, 2}, 0.0)), 1.0);
  const Tensor a = random_tensor({4, 4}, 1);
  EXPECT_EQ(mse_loss(a, a), 0.0);
  EXPECT_THROW(mse_loss(Tensor({2}), Tensor({3})), Error);
}

TEST(MseLoss, ZeroIffEqual) {
  Tensor a = random_tensor({10}, 2);
  Tensor b = a;
  b[7] = std::nextafter(b[7], 2.0);
  EXPECT_GT(mse_loss(a, b), 0.0);
}

TEST(PerceptualLoss, ZeroOnEqualAndSymmetric) {
  const Tensor a = random_tensor({1, 2, 3, 8, 8}, 3, 0.0, 1.0);
  const Tensor b = random_tensor({1, 2, 3, 8, 8}, 4, 0.0, 1.0);
  EXPECT_EQ(perceptual_loss(a, a, fixture()), 0.0);
  EXPECT_EQ(perceptual_loss(a, b, fixture()), perceptual_loss(b, a, fixture()));
  EXPECT_GT(perceptual_loss(a, b, fixture()), 0.0);
}

TEST(PerceptualLoss, MatchesDirectConvolutionReference) {
  const Tensor a = random_tensor({1, 1, 3, 8, 8}, 5, 0.0, 1.0);
  const Tensor b = random_tensor({1, 1, 3, 8, 8}, 6, 0.0, 1.0);
  const auto ex = oracle::read_json(kExtractor);
  EXPECT_NEAR(perceptual_loss(a, b, fixture()),
              oracle::perceptual(ex, to_images(a), to_images(b)), 1e-10);
  const Tensor c = random_tensor({2, 3, 3, 8, 8}, 7, 0.0, 1.0);
  const Tensor d = random_tensor({2, 3, 3, 8, 8}, 8, 0.0, 1.0);
  EXPECT_NEAR(perceptual_loss(c, d, fixture()),
              oracle::perceptual(ex, to_images(c), to_images(d)), 1e-10);
}

TEST(PerceptualLoss, ErrorsAreTyped) {
  try {
    load_feature_extractor("/nonexistent/vgg19.avrx");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kExtractorUnavailable);
  }
  try {
    perceptual_loss(Tensor({1, 1, 3, 8, 8}), Tensor({1, 1, 3, 8, 4}), fixture());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeError);
  }
}

TEST(PerceptualLoss, ArchiveFormMatchesJsonForm) {
  test::TempDir dir;
  auto doc = oracle::read_json(kExtractor);
  std::vector<zip::Entry> entries;
  for (auto& l : doc["layers"])
    if (l["type"] == "conv3x3") {
      const std::string name = l["name"];
      for (const char* key : {"weight", "bias"}) {
        auto v = l[key].get<std::vector<double>>();
        entries.push_back({"params/" + name + "." + key + ".f64",
                           detail::encode_doubles(Tensor({static_cast<std::int64_t>(v.size())}, v))});
        l.erase(key);
      }
    }
  entries.push_back({"extractor.json", doc.dump()});
  zip::write_file((dir / "ex.avrx").string(), zip::write(entries));
  const FeatureExtractor archived = load_feature_extractor(dir / "ex.avrx");
  const Tensor a = random_tensor({1, 1, 3, 8, 8}, 9, 0.0, 1.0);
  const Tensor b = random_tensor({1, 1, 3, 8, 8}, 10, 0.0, 1.0);
  EXPECT_EQ(perceptual_loss(a, b, archived), perceptual_loss(a, b, fixture()));
}

TEST(CombinedLoss, WeightArithmetic) {
  ag::NoGradGuard g;
  auto p = ag::constant(Tensor({1, 1, 3, 4, 4}, 0.0));
  Tensor half({1, 1, 3, 4, 4}, 0.5);
  for (std::size_t i = 0; i < half.size(); i += 2) half[i] = 0.0;
  auto t = ag::constant(half);  // mse 0.125

  Loss l = combined_loss(p, t, {2.0, 0.0}, nullptr);
  EXPECT_EQ(l.report.pixel, 0.125);
  EXPECT_EQ(l.report.total, 0.25);
  EXPECT_EQ(l.total.value()[0], 0.25);

  Loss same = combined_loss(p, p, {}, &fixture());
  EXPECT_EQ(same.report.total, 0.0);

  Loss a = combined_loss(p, t, {1.0, 1.0}, &fixture());
  Loss b = combined_loss(p, t, {2.0, 1.0}, &fixture());
  EXPECT_EQ(b.report.total - a.report.total, a.report.pixel);
  EXPECT_EQ(a.report.total, a.report.pixel + a.report.perceptual);
  EXPECT_EQ(a.total.value()[0], a.report.total);
  EXPECT_GE(a.report.perceptual, 0.0);

  Loss masked = combined_loss(p, t, {1.5, 0.0}, &fixture());
  EXPECT_EQ(masked.report.total, 1.5 * mse_loss(p, t).value()[0]);
}

TEST(CombinedLoss, InvalidWeightsAndMissingExtractor) {
  auto p = ag::constant(Tensor({1, 1, 3, 4, 4}));
  EXPECT_THROW(combined_loss(p, p, {0.0, 0.0}, nullptr), Error);
  EXPECT_THROW(combined_loss(p, p, {-1.0, 1.0}, nullptr), Error);
  try {
    combined_loss(p, p, {1.0, 1.0}, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kExtractorUnavailable);
  }
}

TEST(CombinedLoss, GradientMatchesFiniteDifferences) {
  const Tensor pred = random_tensor({1, 2, 3, 4, 4}, 11, 0.0, 1.0);
  const Tensor target = random_tensor({1, 2, 3, 4, 4}, 12, 0.0, 1.0);
  const LossWeights w{1.0, 0.5};
  ag::Var p = ag::parameter(pred);
  ag::backward(combined_loss(p, ag::constant(target), w, &fixture()).total);
  const Tensor numeric = test::numeric_gradient(
      [&](const Tensor& x) {
        ag::NoGradGuard g;
        return combined_loss(ag::constant(x), ag::constant(target), w, &fixture()).report.total;
      },
      pred);
  EXPECT_LT(test::max_rel_error(p.grad(), numeric, 1e-6), 1e-3);
}

}  // namespace
}  // namespace avr
