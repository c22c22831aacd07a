// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avr/archive.hpp"
#include "avr/ops.hpp"

// Multi-frame Swin-UNet restoration network.
//
// Layout, for S = depths.size() encoder stages:
//   x (B,T,3,H,W) -> 3D conv patch embed (B,T,H/4,W/4,C)
//   encoder stage i: Swin blocks at width C*2^i, patch merge between stages
//   bottleneck: Swin blocks at the last encoder resolution
//   decoder stage i (S-2 .. 0): pixel-shuffle expand, concat encoder skip,
//     linear fuse back to C*2^i, Swin blocks
//   norm -> 4x pixel-shuffle expand -> 3D conv to 3 channels
//   output = x + residual
namespace avr {

struct ModelConfig {
  int t = 5;
  int in_channels = 3;
  int embed_dim = 96;
  int patch_size = 4;
  std::array<int, 3> window{5, 8, 8};  // (frames, rows, cols)
  std::vector<int> depths{2, 2, 2};
  int bottleneck_depth = 2;
  std::vector<int> heads{3, 6, 12};
  int mlp_ratio = 4;
  bool shift = true;

  int stages() const { return static_cast<int>(depths.size()); }
  int width(int stage) const { return embed_dim << stage; }

  // Spatial multiple the input height/width must satisfy.
  int row_granularity() const { return patch_size * (window[1] << (stages() - 1)); }
  int col_granularity() const { return patch_size * (window[2] << (stages() - 1)); }

  void validate() const {
    require(t >= 1 && in_channels == 3, ErrorCode::kInvalidParam,
            "model config: t >= 1 and in_channels == 3 required");
    require(patch_size == 4, ErrorCode::kInvalidParam,
            "model config: patch_size must be 4");
    require(!depths.empty() && heads.size() == depths.size(), ErrorCode::kInvalidParam,
            "model config: heads must list one entry per stage");
    require(window[0] >= 1 && window[0] <= t && t % window[0] == 0, ErrorCode::kInvalidParam,
            "model config: temporal window must divide t");
    require(window[1] >= 1 && window[2] >= 1, ErrorCode::kInvalidParam,
            "model config: spatial window must be positive");
    require(embed_dim >= 2 && embed_dim % 2 == 0, ErrorCode::kInvalidParam,
            "model config: embed_dim must be even");
    for (int i = 0; i < stages(); ++i) {
      require(depths[i] >= 1 && heads[i] >= 1, ErrorCode::kInvalidParam,
              "model config: depths and heads must be positive");
      require(width(i) % heads[i] == 0, ErrorCode::kInvalidParam, "model config: width ",
              width(i), " of stage ", i, " not divisible by ", heads[i], " heads");
    }
    require(bottleneck_depth >= 0 && mlp_ratio >= 1, ErrorCode::kInvalidParam,
            "model config: bottleneck_depth >= 0, mlp_ratio >= 1");
  }

  void validate_input(const Shape& x) const {
    require(x.size() == 5 && x[2] == 3, ErrorCode::kShapeError,
            "expected input (B,T,3,H,W), got ", shape_string(x));
    require(x[1] == t, ErrorCode::kShapeError, "input has ", x[1],
            " frames, model expects t = ", t);
    require(x[3] % row_granularity() == 0 && x[4] % col_granularity() == 0,
            ErrorCode::kShapeError, "input ", x[3], "x", x[4], " not divisible by ",
            row_granularity(), "x", col_granularity());
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"t", c.t},
          {"in_channels", c.in_channels},
          {"embed_dim", c.embed_dim},
          {"patch_size", c.patch_size},
          {"window", c.window},
          {"depths", c.depths},
          {"bottleneck_depth", c.bottleneck_depth},
          {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio},
          {"shift", c.shift}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    auto get = [&](const char* k, auto& v) {
      if (j.contains(k)) j.at(k).get_to(v);
    };
    get("t", c.t);
    get("in_channels", c.in_channels);
    get("embed_dim", c.embed_dim);
    get("patch_size", c.patch_size);
    get("window", c.window);
    get("depths", c.depths);
    get("bottleneck_depth", c.bottleneck_depth);
    get("heads", c.heads);
    get("mlp_ratio", c.mlp_ratio);
    get("shift", c.shift);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidParam, "malformed model config: ", e.what());
  }
  c.validate();
  return c;
}

inline ModelConfig load_model_config(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kNotFound, "model config ", path, " not found");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidParam, "malformed model config ", path, ": ", e.what());
  }
  return model_config_from_json(j);
}

inline std::uint64_t config_hash(const ModelConfig& c) { return fnv1a(to_json(c).dump()); }

// Named trainable arrays plus the config that determines their shapes.
struct RestorationModel {
  ModelConfig config;
  std::map<std::string, ag::Var> params;

  const ag::Var& param(const std::string& name) const {
    auto it = params.find(name);
    require(it != params.end(), ErrorCode::kInvalidParam, "unknown parameter ", name);
    return it->second;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params) n += v.value().size();
    return n;
  }

  // Deep copy; the default copy shares parameter storage.
  RestorationModel clone() const {
    RestorationModel m{config, {}};
    for (const auto& [name, v] : params) m.params.emplace(name, ag::parameter(v.value()));
    return m;
  }

  void zero_grad() const {
    for (const auto& [_, v] : params) v.zero_grad();
  }
};

// ---------------------------------------------------------------------------
// Parameter layout

enum class InitKind { kTruncNormal, kZeros, kOnes };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init;
};

namespace detail {

inline void add_block_specs(std::vector<ParamSpec>& out, const std::string& p, int c,
                            int heads, const ModelConfig& cfg) {
  const auto [tw, hw, ww] = cfg.window;
  const std::int64_t rel = static_cast<std::int64_t>(2 * tw - 1) * (2 * hw - 1) * (2 * ww - 1);
  const std::int64_t hidden = static_cast<std::int64_t>(c) * cfg.mlp_ratio;
  out.push_back({p + "norm1.weight", {c}, InitKind::kOnes});
  out.push_back({p + "norm1.bias", {c}, InitKind::kZeros});
  out.push_back({p + "attn.qkv.weight", {c, 3 * c}, InitKind::kTruncNormal});
  out.push_back({p + "attn.qkv.bias", {3 * c}, InitKind::kZeros});
  out.push_back({p + "attn.relative_position_bias_table", {rel, heads}, InitKind::kTruncNormal});
  out.push_back({p + "attn.proj.weight", {c, c}, InitKind::kTruncNormal});
  out.push_back({p + "attn.proj.bias", {c}, InitKind::kZeros});
  out.push_back({p + "norm2.weight", {c}, InitKind::kOnes});
  out.push_back({p + "norm2.bias", {c}, InitKind::kZeros});
  out.push_back({p + "mlp.fc1.weight", {c, hidden}, InitKind::kTruncNormal});
  out.push_back({p + "mlp.fc1.bias", {hidden}, InitKind::kZeros});
  out.push_back({p + "mlp.fc2.weight", {hidden, c}, InitKind::kTruncNormal});
  out.push_back({p + "mlp.fc2.bias", {c}, InitKind::kZeros});
}

}  // namespace detail

// Every parameter of a config, in a fixed order. Names are the checkpoint
// keys. Linear weights are stored (in, out); conv weights (kt, kh, kw, in, out).
inline std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  const int C = cfg.embed_dim, S = cfg.stages();
  out.push_back({"patch_embed.weight", {3, cfg.patch_size, cfg.patch_size, 3, C},
                 InitKind::kTruncNormal});
  out.push_back({"patch_embed.bias", {C}, InitKind::kZeros});
  for (int i = 0; i < S; ++i) {
    const std::string p = "encoder." + std::to_string(i) + ".";
    for (int j = 0; j < cfg.depths[i]; ++j)
      detail::add_block_specs(out, p + "blocks." + std::to_string(j) + ".", cfg.width(i),
                              cfg.heads[i], cfg);
    if (i + 1 < S)
      out.push_back({p + "merge.weight", {4 * cfg.width(i), 2 * cfg.width(i)},
                     InitKind::kTruncNormal});
  }
  for (int j = 0; j < cfg.bottleneck_depth; ++j)
    detail::add_block_specs(out, "bottleneck.blocks." + std::to_string(j) + ".",
                            cfg.width(S - 1), cfg.heads[S - 1], cfg);
  for (int i = S - 2; i >= 0; --i) {
    const std::string p = "decoder." + std::to_string(i) + ".";
    const int c = cfg.width(i);
    out.push_back({p + "expand.weight", {2 * c, 4 * c}, InitKind::kTruncNormal});
    out.push_back({p + "fuse.weight", {2 * c, c}, InitKind::kTruncNormal});
    out.push_back({p + "fuse.bias", {c}, InitKind::kZeros});
    for (int j = 0; j < cfg.depths[i]; ++j)
      detail::add_block_specs(out, p + "blocks." + std::to_string(j) + ".", c, cfg.heads[i],
                              cfg);
  }
  out.push_back({"final.norm.weight", {C}, InitKind::kOnes});
  out.push_back({"final.norm.bias", {C}, InitKind::kZeros});
  out.push_back({"final.expand.weight", {C, 16 * C}, InitKind::kTruncNormal});
  out.push_back({"output.weight", {3, 3, 3, C, 3}, InitKind::kZeros});
  out.push_back({"output.bias", {3}, InitKind::kZeros});
  return out;
}

// Truncated normal (std 0.02, cut at two std) for projections, zeros for
// biases and the output projection, ones for norm scales.
inline RestorationModel init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  RestorationModel model{cfg, {}};
  std::mt19937_64 rng(mix_seed(seed, fnv1a("init")));
  std::normal_distribution<double> normal(0.0, 0.02);
  for (const auto& spec : parameter_specs(cfg)) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case InitKind::kTruncNormal:
        for (double& v : t.values()) {
          do v = normal(rng);
          while (std::abs(v) > 0.04);
        }
        break;
      case InitKind::kOnes: t.fill(1.0); break;
      case InitKind::kZeros: break;
    }
    model.params.emplace(spec.name, ag::parameter(std::move(t)));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Building blocks

struct SwinBlockParams {
  ag::Var norm1_w, norm1_b, qkv_w, qkv_b, bias_table, proj_w, proj_b;
  ag::Var norm2_w, norm2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  int heads = 1;

  static SwinBlockParams from(const RestorationModel& m, const std::string& p, int heads) {
    return {m.param(p + "norm1.weight"),  m.param(p + "norm1.bias"),
            m.param(p + "attn.qkv.weight"), m.param(p + "attn.qkv.bias"),
            m.param(p + "attn.relative_position_bias_table"),
            m.param(p + "attn.proj.weight"), m.param(p + "attn.proj.bias"),
            m.param(p + "norm2.weight"),  m.param(p + "norm2.bias"),
            m.param(p + "mlp.fc1.weight"), m.param(p + "mlp.fc1.bias"),
            m.param(p + "mlp.fc2.weight"), m.param(p + "mlp.fc2.bias"),
            heads};
  }
};

// Index into the relative-position bias table for every (query, key) pair of
// a (tw, hw, ww) window.
inline std::vector<std::int32_t> relative_position_index(std::array<int, 3> window) {
  const auto [tw, hw, ww] = window;
  const int n = tw * hw * ww;
  std::vector<std::int32_t> idx(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    const int ti = i / (hw * ww), hi = (i / ww) % hw, wi = i % ww;
    for (int j = 0; j < n; ++j) {
      const int tj = j / (hw * ww), hj = (j / ww) % hw, wj = j % ww;
      const int dt = ti - tj + tw - 1, dh = hi - hj + hw - 1, dw = wi - wj + ww - 1;
      idx[static_cast<std::size_t>(i) * n + j] = (dt * (2 * hw - 1) + dh) * (2 * ww - 1) + dw;
    }
  }
  return idx;
}

// Additive mask for shifted windows: tokens that were wrapped around by the
// cyclic shift may only attend within their original region.
inline Tensor shifted_window_mask(std::array<std::int64_t, 3> grid, std::array<int, 3> window,
                                  std::array<int, 3> shift) {
  auto region = [&](int axis, std::int64_t pos) {
    if (shift[axis] == 0) return 0;
    if (pos < grid[axis] - window[axis]) return 0;
    if (pos < grid[axis] - shift[axis]) return 1;
    return 2;
  };
  const std::int64_t nt = grid[0] / window[0], nh = grid[1] / window[1], nw = grid[2] / window[2];
  const std::int64_t n = static_cast<std::int64_t>(window[0]) * window[1] * window[2];
  Tensor mask(Shape{nt * nh * nw, n, n});
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (std::int64_t a = 0; a < nt; ++a)
    for (std::int64_t b = 0; b < nh; ++b)
      for (std::int64_t c = 0; c < nw; ++c) {
        const std::int64_t w = (a * nh + b) * nw + c;
        for (std::int64_t k = 0; k < n; ++k) {
          const std::int64_t t = a * window[0] + k / (window[1] * window[2]);
          const std::int64_t h = b * window[1] + (k / window[2]) % window[1];
          const std::int64_t x = c * window[2] + k % window[2];
          ids[k] = region(0, t) * 9 + region(1, h) * 3 + region(2, x);
        }
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < n; ++j)
            mask[(w * n + i) * n + j] = ids[i] == ids[j] ? 0.0 : -1e9;
      }
  return mask;
}

// (B,T,H,W,C) -> (B*nW, tw*hw*ww, C)
inline ag::Var window_partition(const ag::Var& x, std::array<int, 3> w) {
  const std::int64_t B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  ag::Var r = ag::reshape(x, {B, T / w[0], w[0], H / w[1], w[1], W / w[2], w[2], C});
  r = ag::permute(r, {0, 1, 3, 5, 2, 4, 6, 7});
  return ag::reshape(r, {B * (T / w[0]) * (H / w[1]) * (W / w[2]),
                         static_cast<std::int64_t>(w[0]) * w[1] * w[2], C});
}

inline ag::Var window_reverse(const ag::Var& windows, std::array<int, 3> w, const Shape& shape) {
  const std::int64_t B = shape[0], T = shape[1], H = shape[2], W = shape[3], C = shape[4];
  ag::Var r = ag::reshape(windows, {B, T / w[0], H / w[1], W / w[2], w[0], w[1], w[2], C});
  r = ag::permute(r, {0, 1, 4, 2, 5, 3, 6, 7});
  return ag::reshape(r, shape);
}

// Per-axis shift used by a shifted block: half a window, or none on axes the
// window already spans.
inline std::array<int, 3> block_shift(const Shape& grid, std::array<int, 3> window) {
  std::array<int, 3> s{};
  for (int a = 0; a < 3; ++a) s[a] = window[a] < grid[1 + a] ? window[a] / 2 : 0;
  return s;
}

inline void check_window_fits(const Shape& tokens, std::array<int, 3> window) {
  require(tokens.size() == 5, ErrorCode::kShapeError, "tokens must be (B,T,h,w,C), got ",
          shape_string(tokens));
  for (int a = 0; a < 3; ++a)
    require(window[a] <= tokens[1 + a] && tokens[1 + a] % window[a] == 0,
            ErrorCode::kShapeError, "window (", window[0], ",", window[1], ",", window[2],
            ") does not tile token grid ", shape_string(tokens));
}

// One Swin transformer block on (B,T,h,w,C) tokens: pre-norm windowed
// attention with relative-position bias, then a pre-norm 2-layer GELU MLP,
// each with a residual connection.
inline ag::Var swin_block(const ag::Var& x, const SwinBlockParams& p, std::array<int, 3> window,
                          bool shifted) {
  check_window_fits(x.shape(), window);
  const Shape shape = x.shape();
  const std::int64_t C = shape[4];
  require(C % p.heads == 0, ErrorCode::kShapeError, "channels ", C,
          " not divisible by heads ", p.heads);
  const std::array<int, 3> shift =
      shifted ? block_shift(shape, window) : std::array<int, 3>{0, 0, 0};
  const bool any_shift = shift[0] || shift[1] || shift[2];

  ag::Var h = ag::layer_norm(x, p.norm1_w, p.norm1_b);
  if (any_shift) h = ag::roll(h, {0, -shift[0], -shift[1], -shift[2], 0});
  ag::Var windows = window_partition(h, window);
  ag::Var qkv = ag::linear(windows, p.qkv_w, p.qkv_b);

  ag::WindowAttentionSpec spec;
  spec.heads = p.heads;
  spec.scale = 1.0 / std::sqrt(static_cast<double>(C / p.heads));
  spec.relative_index =
      std::make_shared<const std::vector<std::int32_t>>(relative_position_index(window));
  if (any_shift)
    spec.mask = std::make_shared<const Tensor>(
        shifted_window_mask({shape[1], shape[2], shape[3]}, window, shift));

  ag::Var attn = ag::window_attention(qkv, p.bias_table, spec);
  attn = ag::linear(attn, p.proj_w, p.proj_b);
  ag::Var back = window_reverse(attn, window, shape);
  if (any_shift) back = ag::roll(back, {0, shift[0], shift[1], shift[2], 0});
  ag::Var y = ag::add(x, back);

  ag::Var m = ag::layer_norm(y, p.norm2_w, p.norm2_b);
  m = ag::linear(ag::gelu(ag::linear(m, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b);
  return ag::add(y, m);
}

// Blocks applied in order; odd-indexed blocks use shifted windows.
inline ag::Var swin_stage(ag::Var x, const std::vector<SwinBlockParams>& blocks,
                          std::array<int, 3> window, bool shift = true) {
  check_window_fits(x.shape(), window);
  for (std::size_t j = 0; j < blocks.size(); ++j)
    x = swin_block(x, blocks[j], window, shift && (j % 2 == 1));
  return x;
}

// (B,T,3,H,W) -> (B,T,H/4,W/4,C) by a (3,4,4) conv, stride (1,4,4), temporal
// padding 1.
inline ag::Var patch_embed_3d(const ag::Var& x, const ag::Var& weight, const ag::Var& bias) {
  require(x.rank() == 5 && x.dim(2) == 3, ErrorCode::kShapeError,
          "patch_embed_3d expects (B,T,3,H,W), got ", shape_string(x.shape()));
  const std::int64_t ps = weight.dim(1);
  require(x.dim(3) % ps == 0 && x.dim(4) % ps == 0, ErrorCode::kShapeError,
          "patch_embed_3d: H, W must be divisible by ", ps, ", got ", shape_string(x.shape()));
  ag::Var cl = ag::permute(x, {0, 1, 3, 4, 2});
  return ag::conv3d(cl, weight, bias, {{1, ps, ps}, {weight.dim(0) / 2, 0, 0}});
}

// Concatenate each 2x2 spatial neighbourhood (4C) and project to 2C.
inline ag::Var patch_merge(const ag::Var& x, const ag::Var& weight) {
  require(x.rank() == 5, ErrorCode::kShapeError, "patch_merge expects (B,T,h,w,C)");
  const std::int64_t B = x.dim(0), T = x.dim(1), h = x.dim(2), w = x.dim(3), C = x.dim(4);
  require(h % 2 == 0 && w % 2 == 0, ErrorCode::kShapeError,
          "patch_merge needs even h and w, got ", shape_string(x.shape()));
  ag::Var r = ag::reshape(x, {B, T, h / 2, 2, w / 2, 2, C});
  r = ag::permute(r, {0, 1, 2, 4, 5, 3, 6});
  r = ag::reshape(r, {B, T, h / 2, w / 2, 4 * C});
  return ag::linear(r, weight);
}

// Depth-to-space on the last axis: channel c*f*f + dy*f + dx moves to
// spatial offset (dy, dx) of output channel c.
inline ag::Var depth_to_space(const ag::Var& x, int f) {
  const std::int64_t B = x.dim(0), T = x.dim(1), h = x.dim(2), w = x.dim(3), C = x.dim(4);
  require(C % (f * f) == 0, ErrorCode::kShapeError, "depth_to_space: ", C,
          " channels not divisible by ", f * f);
  const std::int64_t c = C / (f * f);
  ag::Var r = ag::reshape(x, {B, T, h, w, c, f, f});
  r = ag::permute(r, {0, 1, 2, 5, 3, 6, 4});
  return ag::reshape(r, {B, T, h * f, w * f, c});
}

// Linear C -> 2C followed by 2x depth-to-space: (B,T,h,w,C) -> (B,T,2h,2w,C/2).
inline ag::Var patch_expand_pixel_shuffle(const ag::Var& x, const ag::Var& weight) {
  require(x.rank() == 5, ErrorCode::kShapeError, "patch_expand expects (B,T,h,w,C)");
  require(x.dim(4) % 2 == 0 && weight.dim(1) % 4 == 0, ErrorCode::kShapeError,
          "patch_expand: channels ", x.dim(4), " must be even and projection divisible by 4");
  return depth_to_space(ag::linear(x, weight), 2);
}

// ---------------------------------------------------------------------------
// Full network

inline void check_finite_parameters(const RestorationModel& m) {
  for (const auto& [name, v] : m.params)
    require(v.value().all_finite(), ErrorCode::kNumericalError, "parameter ", name,
            " contains non-finite values");
}

// Training-mode forward pass (no clamping). x is (B,T,3,H,W) in [0,1].
inline ag::Var forward_restore(const RestorationModel& m, const ag::Var& x) {
  const ModelConfig& cfg = m.config;
  cfg.validate_input(x.shape());
  check_finite_parameters(m);
  const int S = cfg.stages();

  auto blocks = [&](const std::string& prefix, int depth, int heads) {
    std::vector<SwinBlockParams> out;
    for (int j = 0; j < depth; ++j)
      out.push_back(SwinBlockParams::from(m, prefix + "blocks." + std::to_string(j) + ".", heads));
    return out;
  };

  ag::Var h = patch_embed_3d(x, m.param("patch_embed.weight"), m.param("patch_embed.bias"));
  std::vector<ag::Var> skips;
  for (int i = 0; i < S; ++i) {
    const std::string p = "encoder." + std::to_string(i) + ".";
    h = swin_stage(h, blocks(p, cfg.depths[i], cfg.heads[i]), cfg.window, cfg.shift);
    if (i + 1 < S) {
      skips.push_back(h);
      h = patch_merge(h, m.param(p + "merge.weight"));
    }
  }
  h = swin_stage(h, blocks("bottleneck.", cfg.bottleneck_depth, cfg.heads[S - 1]), cfg.window,
                 cfg.shift);
  for (int i = S - 2; i >= 0; --i) {
    const std::string p = "decoder." + std::to_string(i) + ".";
    h = patch_expand_pixel_shuffle(h, m.param(p + "expand.weight"));
    h = ag::linear(ag::concat_last(h, skips[static_cast<std::size_t>(i)]),
                   m.param(p + "fuse.weight"), m.param(p + "fuse.bias"));
    h = swin_stage(h, blocks(p, cfg.depths[i], cfg.heads[i]), cfg.window, cfg.shift);
  }
  h = ag::layer_norm(h, m.param("final.norm.weight"), m.param("final.norm.bias"));
  h = depth_to_space(ag::linear(h, m.param("final.expand.weight")), cfg.patch_size);
  ag::Var residual = ag::conv3d(h, m.param("output.weight"), m.param("output.bias"),
                                {{1, 1, 1}, {1, 1, 1}});
  residual = ag::permute(residual, {0, 1, 4, 2, 3});
  return ag::add(x, residual);
}

// Inference-mode forward: no tape, output clamped to [0,1].
inline Tensor restore_tensor(const RestorationModel& m, const Tensor& x) {
  ag::NoGradGuard guard;
  Tensor y = forward_restore(m, ag::constant(x)).value();
  for (double& v : y.values()) v = std::clamp(v, 0.0, 1.0);
  return y;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// A checkpoint is a ZIP archive with
//   config.json           {"model_config": {...}, "config_hash": "<16 hex>"}
//   index.json            [{"name": ..., "shape": [...]}] in parameter order
//   params/<name>.f64     raw little-endian IEEE-754 doubles, row-major
// plus any extra entries the caller attaches (training state).

namespace detail {

inline std::string encode_doubles(const Tensor& t) {
  std::string out(t.size() * sizeof(double), '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(t[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    std::memcpy(out.data() + i * sizeof(double), &bits, sizeof(double));
  }
  return out;
}

inline Tensor decode_doubles(const std::string& bytes, const Shape& shape) {
  require(bytes.size() == static_cast<std::size_t>(numel(shape)) * sizeof(double),
          ErrorCode::kIncompatibleCheckpoint, "parameter payload size mismatch");
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, bytes.data() + i * sizeof(double), sizeof(double));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    t[i] = std::bit_cast<double>(bits);
  }
  return t;
}

}  // namespace detail

inline std::vector<zip::Entry> tensor_entries(const std::string& prefix,
                                              const std::map<std::string, ag::Var>& params) {
  std::vector<zip::Entry> out;
  for (const auto& [name, v] : params)
    out.push_back({prefix + name + ".f64", detail::encode_doubles(v.value())});
  return out;
}

inline void save_weights(const RestorationModel& m, const fs::path& path,
                         const std::vector<zip::Entry>& extra = {}) {
  nlohmann::json cfg = {{"model_config", to_json(m.config)},
                        {"config_hash", hex64(config_hash(m.config))}};
  nlohmann::json index = nlohmann::json::array();
  for (const auto& spec : parameter_specs(m.config))
    index.push_back({{"name", spec.name}, {"shape", m.param(spec.name).shape()}});
  std::vector<zip::Entry> entries{{"config.json", cfg.dump(2)}, {"index.json", index.dump()}};
  for (auto& e : tensor_entries("params/", m.params)) entries.push_back(std::move(e));
  entries.insert(entries.end(), extra.begin(), extra.end());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  zip::write_file(tmp.string(), zip::write(entries));
  fs::rename(tmp, path);
}

struct LoadedCheckpoint {
  RestorationModel model;
  std::map<std::string, std::string> entries;  // every archive entry by name
};

inline LoadedCheckpoint load_checkpoint(const fs::path& path) {
  require(fs::exists(path), ErrorCode::kNotFound, "checkpoint ", path, " not found");
  LoadedCheckpoint out;
  for (auto& e : zip::read(zip::read_file(path.string())))
    out.entries.emplace(std::move(e.name), std::move(e.data));
  auto entry = [&](const std::string& name) -> const std::string& {
    auto it = out.entries.find(name);
    require(it != out.entries.end(), ErrorCode::kIncompatibleCheckpoint, "checkpoint ",
            path, " lacks ", name);
    return it->second;
  };
  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(entry("config.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIncompatibleCheckpoint, "bad config.json in ", path, ": ", e.what());
  }
  ModelConfig cfg = model_config_from_json(cfg_json.at("model_config"));
  require(cfg_json.value("config_hash", std::string{}) == hex64(config_hash(cfg)),
          ErrorCode::kIncompatibleCheckpoint, "config hash mismatch in ", path);
  out.model.config = cfg;
  for (const auto& spec : parameter_specs(cfg))
    out.model.params.emplace(
        spec.name,
        ag::parameter(detail::decode_doubles(entry("params/" + spec.name + ".f64"), spec.shape)));
  return out;
}

inline RestorationModel load_weights(const fs::path& path) {
  return load_checkpoint(path).model;
}

}  // namespace avr
