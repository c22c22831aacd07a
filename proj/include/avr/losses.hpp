// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avr/archive.hpp"
#include "avr/model.hpp"
#include "avr/ops.hpp"

namespace avr {

// ---------------------------------------------------------------------------
// Feature extractor
//
// A fixed stack of 3x3 convolutions (zero padding 1), ReLUs and 2x2 max
// pools on channel-last frames, with per-channel input normalization.
// Activations of the named tap layers are the features.
//
// File format, either a JSON document
//   {"mean": [3], "std": [3],
//    "layers": [{"name": "conv1_1", "type": "conv3x3", "in": 3, "out": 64,
//                "weight": [kh*kw*in*out, (3,3,in,out) row-major], "bias": [out]},
//               {"name": "relu1_1", "type": "relu"},
//               {"name": "pool1", "type": "maxpool2"}, ...],
//    "taps": ["relu1_2", ...],
//    "lpips_weights": {"relu1_2": [channels], ...}}          (optional)
// or a ZIP archive holding that document as extractor.json with the conv
// arrays omitted and stored as params/<name>.weight.f64 and
// params/<name>.bias.f64 (little-endian doubles).

struct ExtractorLayer {
  enum class Kind { kConv3x3, kRelu, kMaxPool };
  std::string name;
  Kind kind = Kind::kRelu;
  Tensor weight;  // (1,3,3,in,out) for convolutions
  Tensor bias;    // (out)
};

class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(std::array<double, 3> mean, std::array<double, 3> std,
                   std::vector<ExtractorLayer> layers, std::vector<std::string> taps,
                   std::map<std::string, std::vector<double>> lpips_weights = {})
      : mean_(mean), std_(std), layers_(std::move(layers)), taps_(std::move(taps)),
        lpips_weights_(std::move(lpips_weights)) {
    validate();
  }

  const std::vector<std::string>& taps() const { return taps_; }
  const std::vector<ExtractorLayer>& layers() const { return layers_; }
  std::array<double, 3> mean() const { return mean_; }
  std::array<double, 3> stdev() const { return std_; }

  // Per-channel LPIPS calibration for a tap; empty means unit weights.
  const std::vector<double>& lpips_weights(const std::string& tap) const {
    static const std::vector<double> kNone;
    auto it = lpips_weights_.find(tap);
    return it == lpips_weights_.end() ? kNone : it->second;
  }

  // x: (N,H,W,3) in [0,1]. Returns one activation per tap, in tap order.
  std::vector<ag::Var> features(const ag::Var& x) const {
    require(x.rank() == 4 && x.dim(3) == 3, ErrorCode::kShapeError,
            "feature extractor expects (N,H,W,3), got ", shape_string(x.shape()));
    Tensor diag({3, 3}), shift({3});
    for (int c = 0; c < 3; ++c) {
      diag.at(c, c) = 1.0 / std_[c];
      shift[c] = -mean_[c] / std_[c];
    }
    ag::Var h = ag::linear(x, ag::constant(diag), ag::constant(shift));
    std::vector<ag::Var> out(taps_.size());
    std::size_t found = 0;
    for (const auto& layer : layers_) {
      switch (layer.kind) {
        case ExtractorLayer::Kind::kConv3x3: {
          const std::int64_t N = h.dim(0), H = h.dim(1), W = h.dim(2), C = h.dim(3);
          ag::Var y = ag::conv3d(ag::reshape(h, {N, 1, H, W, C}), ag::constant(layer.weight),
                                 ag::constant(layer.bias), {{1, 1, 1}, {0, 1, 1}});
          h = ag::reshape(y, {N, H, W, layer.weight.dim(4)});
          break;
        }
        case ExtractorLayer::Kind::kRelu: h = ag::relu(h); break;
        case ExtractorLayer::Kind::kMaxPool:
          require(h.dim(1) >= 2 && h.dim(2) >= 2, ErrorCode::kShapeError,
                  "feature extractor: input too small for pooling at ", layer.name);
          h = ag::max_pool2x2(h);
          break;
      }
      for (std::size_t k = 0; k < taps_.size(); ++k)
        if (taps_[k] == layer.name) {
          out[k] = h;
          ++found;
        }
      if (found == taps_.size()) break;
    }
    return out;
  }

 private:
  void validate() const {
    require(!taps_.empty(), ErrorCode::kInvalidParam, "feature extractor has no taps");
    for (int c = 0; c < 3; ++c)
      require(std_[c] > 0.0, ErrorCode::kInvalidParam, "feature extractor std must be > 0");
    std::int64_t channels = 3;
    std::map<std::string, std::int64_t> width;
    for (const auto& l : layers_) {
      if (l.kind == ExtractorLayer::Kind::kConv3x3) {
        require(l.weight.shape() == Shape{1, 3, 3, channels, l.weight.dim(4)} &&
                    l.bias.shape() == Shape{l.weight.dim(4)},
                ErrorCode::kInvalidParam, "feature extractor layer ", l.name,
                " has inconsistent shapes");
        channels = l.weight.dim(4);
      }
      width[l.name] = channels;
    }
    for (const auto& t : taps_) {
      auto it = width.find(t);
      require(it != width.end(), ErrorCode::kInvalidParam, "unknown tap layer ", t);
      const auto& w = lpips_weights(t);
      require(w.empty() || static_cast<std::int64_t>(w.size()) == it->second,
              ErrorCode::kInvalidParam, "lpips weights for ", t, " must have ", it->second,
              " entries");
    }
  }

  std::array<double, 3> mean_{0.0, 0.0, 0.0};
  std::array<double, 3> std_{1.0, 1.0, 1.0};
  std::vector<ExtractorLayer> layers_;
  std::vector<std::string> taps_;
  std::map<std::string, std::vector<double>> lpips_weights_;
};

namespace detail {

inline FeatureExtractor extractor_from_json(
    const nlohmann::json& j, const std::map<std::string, std::string>& arrays = {}) {
  auto array = [&](const nlohmann::json& layer, const std::string& key, Shape shape) {
    const std::string name = layer.at("name").get<std::string>();
    if (layer.contains(key)) return Tensor(shape, layer.at(key).get<std::vector<double>>());
    auto it = arrays.find("params/" + name + "." + key + ".f64");
    require(it != arrays.end(), ErrorCode::kExtractorUnavailable, "feature extractor lacks ",
            key, " of layer ", name);
    return decode_doubles(it->second, shape);
  };
  try {
    std::vector<ExtractorLayer> layers;
    for (const auto& l : j.at("layers")) {
      ExtractorLayer layer;
      layer.name = l.at("name").get<std::string>();
      const std::string type = l.at("type").get<std::string>();
      if (type == "conv3x3") {
        layer.kind = ExtractorLayer::Kind::kConv3x3;
        const std::int64_t in = l.at("in").get<std::int64_t>(), out = l.at("out").get<std::int64_t>();
        layer.weight = array(l, "weight", {1, 3, 3, in, out});
        layer.bias = array(l, "bias", {out});
      } else if (type == "relu") {
        layer.kind = ExtractorLayer::Kind::kRelu;
      } else if (type == "maxpool2") {
        layer.kind = ExtractorLayer::Kind::kMaxPool;
      } else {
        fail(ErrorCode::kInvalidParam, "unknown feature extractor layer type ", type);
      }
      layers.push_back(std::move(layer));
    }
    return FeatureExtractor(
        j.at("mean").get<std::array<double, 3>>(), j.at("std").get<std::array<double, 3>>(),
        std::move(layers), j.at("taps").get<std::vector<std::string>>(),
        j.value("lpips_weights", std::map<std::string, std::vector<double>>{}));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidParam, "malformed feature extractor: ", e.what());
  }
}

}  // namespace detail

inline FeatureExtractor load_feature_extractor(const fs::path& path) {
  require(fs::is_regular_file(path), ErrorCode::kExtractorUnavailable,
          "feature extractor weights not found at ", path);
  const std::string bytes = zip::read_file(path.string());
  try {
    if (zip::has_zip_signature(bytes)) {
      std::map<std::string, std::string> entries;
      for (auto& e : zip::read(bytes)) entries.emplace(std::move(e.name), std::move(e.data));
      auto it = entries.find("extractor.json");
      require(it != entries.end(), ErrorCode::kExtractorUnavailable, path,
              " has no extractor.json");
      return detail::extractor_from_json(nlohmann::json::parse(it->second), entries);
    }
    return detail::extractor_from_json(nlohmann::json::parse(bytes));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidParam, "cannot parse feature extractor ", path, ": ", e.what());
  }
}

// (..., 3, H, W) planar frames -> (N, H, W, 3) channel-last frames.
inline ag::Var planar_to_frames(const ag::Var& x) {
  const std::size_t r = x.rank();
  require(r >= 3 && x.dim(r - 3) == 3, ErrorCode::kShapeError,
          "expected (..., 3, H, W) frames, got ", shape_string(x.shape()));
  std::int64_t n = 1;
  for (std::size_t i = 0; i + 3 < r; ++i) n *= x.dim(i);
  const std::int64_t H = x.dim(r - 2), W = x.dim(r - 1);
  return ag::permute(ag::reshape(x, {n, 3, H, W}), {0, 2, 3, 1});
}

// ---------------------------------------------------------------------------
// Losses

struct LossWeights {
  double pixel = 1.0;
  double perceptual = 1.0;

  void validate() const {
    require(pixel >= 0.0 && perceptual >= 0.0 && (pixel > 0.0 || perceptual > 0.0),
            ErrorCode::kInvalidParam, "loss weights must be >= 0 with at least one > 0");
  }
};

struct LossReport {
  double total = 0.0;
  double pixel = 0.0;
  double perceptual = 0.0;
};

struct Loss {
  ag::Var total;  // scalar, differentiable w.r.t. pred
  LossReport report;
};

inline ag::Var mse_loss(const ag::Var& pred, const ag::Var& target) {
  require(pred.shape() == target.shape(), ErrorCode::kShapeError, "mse_loss: shape ",
          shape_string(pred.shape()), " vs ", shape_string(target.shape()));
  return ag::mse(pred, target);
}

inline double mse_loss(const Tensor& pred, const Tensor& target) {
  ag::NoGradGuard g;
  return mse_loss(ag::constant(pred), ag::constant(target)).value()[0];
}

// Mean over taps of the feature MSE. Inputs are (..., 3, H, W); target
// features carry no gradient.
inline ag::Var perceptual_loss(const ag::Var& pred, const ag::Var& target,
                               const FeatureExtractor& extractor) {
  require(pred.shape() == target.shape(), ErrorCode::kShapeError, "perceptual_loss: shape ",
          shape_string(pred.shape()), " vs ", shape_string(target.shape()));
  std::vector<ag::Var> ft;
  {
    ag::NoGradGuard g;
    ft = extractor.features(planar_to_frames(ag::constant(target.value())));
  }
  const std::vector<ag::Var> fp = extractor.features(planar_to_frames(pred));
  ag::Var acc = ag::mse(fp[0], ft[0]);
  for (std::size_t k = 1; k < fp.size(); ++k) acc = ag::add(acc, ag::mse(fp[k], ft[k]));
  return ag::scale(acc, 1.0 / static_cast<double>(fp.size()));
}

inline double perceptual_loss(const Tensor& pred, const Tensor& target,
                              const FeatureExtractor& extractor) {
  ag::NoGradGuard g;
  return perceptual_loss(ag::constant(pred), ag::constant(target), extractor).value()[0];
}

// w_pixel * mse + w_perceptual * perceptual. The perceptual term is
// evaluated whenever an extractor is given, and required when its weight is
// positive.
inline Loss combined_loss(const ag::Var& pred, const ag::Var& target, const LossWeights& w,
                          const FeatureExtractor* extractor) {
  w.validate();
  require(extractor || w.perceptual == 0.0, ErrorCode::kExtractorUnavailable,
          "perceptual weight ", w.perceptual, " needs a feature extractor");
  Loss out;
  ag::Var pixel = mse_loss(pred, target);
  out.report.pixel = pixel.value()[0];
  out.total = ag::scale(pixel, w.pixel);
  if (extractor) {
    ag::Var perc = perceptual_loss(pred, target, *extractor);
    out.report.perceptual = perc.value()[0];
    if (w.perceptual > 0.0) out.total = ag::add(out.total, ag::scale(perc, w.perceptual));
  }
  out.report.total = w.pixel * out.report.pixel + w.perceptual * out.report.perceptual;
  return out;
}

}  // namespace avr
