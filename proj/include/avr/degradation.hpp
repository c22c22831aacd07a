// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "avr/common.hpp"
#include "avr/video_io.hpp"

// Synthetic analog-tape artifacts: tape noise, white dropout streaks, chroma
// fringe lines and horizontal mistracking bands.
namespace avr {

template <typename T>
struct Range {
  T lo{};
  T hi{};

  bool valid() const { return lo <= hi; }
};

enum class FringeColor { kCyan, kMagenta, kGreen };

inline FringeColor parse_fringe_color(const std::string& s) {
  if (s == "cyan") return FringeColor::kCyan;
  if (s == "magenta") return FringeColor::kMagenta;
  if (s == "green") return FringeColor::kGreen;
  fail(ErrorCode::kInvalidParam, "unknown fringe color '", s, "'");
}

inline std::string fringe_color_name(FringeColor c) {
  switch (c) {
    case FringeColor::kCyan: return "cyan";
    case FringeColor::kMagenta: return "magenta";
    case FringeColor::kGreen: return "green";
  }
  return "?";
}

inline std::array<double, 3> fringe_tint(FringeColor c) {
  switch (c) {
    case FringeColor::kCyan: return {0.0, 1.0, 1.0};
    case FringeColor::kMagenta: return {1.0, 0.0, 1.0};
    case FringeColor::kGreen: return {0.0, 1.0, 0.0};
  }
  return {0.0, 0.0, 0.0};
}

// Per-artifact ranges and occurrence probabilities. Lengths are fractions of
// the frame width; mistracking offsets are signed fractions of the width.
struct DegradationConfig {
  std::uint64_t seed = 0;

  struct Noise {
    double prob = 1.0;
    Range<double> sigma{0.01, 0.08};
  } noise;

  struct Dropout {
    double prob = 0.5;
    Range<int> count{0, 4};
    Range<double> length{0.05, 0.6};
    Range<int> thickness{1, 3};
    Range<double> intensity{0.7, 1.0};
  } dropout;

  struct Fringe {
    double prob = 0.5;
    Range<int> count{0, 3};
    Range<int> thickness{1, 4};
    std::vector<FringeColor> colors{FringeColor::kCyan, FringeColor::kMagenta,
                                    FringeColor::kGreen};
    Range<double> strength{0.4, 1.0};
  } fringe;

  struct Mistracking {
    double prob = 0.3;
    Range<int> band_height{4, 40};
    Range<double> offset{-0.15, 0.15};
    Range<int> band_count{0, 2};
  } mistracking;

  struct Envelope {
    double correlation = 0.7;
  } envelope;

  // All probabilities zero: the pipeline is the identity.
  static DegradationConfig none() {
    DegradationConfig c;
    c.noise.prob = c.dropout.prob = c.fringe.prob = c.mistracking.prob = 0.0;
    return c;
  }

  void validate() const {
    auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
    require(prob_ok(noise.prob) && prob_ok(dropout.prob) && prob_ok(fringe.prob) &&
                prob_ok(mistracking.prob),
            ErrorCode::kInvalidParam, "probabilities must lie in [0,1]");
    require(noise.sigma.valid() && noise.sigma.lo >= 0.0, ErrorCode::kInvalidParam,
            "noise.sigma_range invalid");
    require(dropout.count.valid() && dropout.length.valid() &&
                dropout.thickness.valid() && dropout.intensity.valid(),
            ErrorCode::kInvalidParam, "dropout ranges need lo <= hi");
    require(fringe.count.valid() && fringe.thickness.valid() && fringe.strength.valid(),
            ErrorCode::kInvalidParam, "fringe ranges need lo <= hi");
    require(mistracking.band_height.valid() && mistracking.offset.valid() &&
                mistracking.band_count.valid(),
            ErrorCode::kInvalidParam, "mistracking ranges need lo <= hi");
    require(fringe.prob == 0.0 || !fringe.colors.empty(), ErrorCode::kInvalidParam,
            "fringe.colors must be non-empty when fringe.prob > 0");
    require(envelope.correlation >= 0.0 && envelope.correlation < 1.0,
            ErrorCode::kInvalidParam, "envelope.correlation must lie in [0,1)");
  }
};

namespace detail {

template <typename T>
nlohmann::json range_json(const Range<T>& r) {
  return nlohmann::json::array({r.lo, r.hi});
}

template <typename T>
void read_range(const nlohmann::json& j, const char* key, Range<T>& r) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  require(a.is_array() && a.size() == 2, ErrorCode::kInvalidParam, key,
          " must be a [lo, hi] pair");
  r = {a[0].get<T>(), a[1].get<T>()};
}

template <typename T>
void read_value(const nlohmann::json& j, const char* key, T& v) {
  if (j.contains(key)) v = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json to_json(const DegradationConfig& c) {
  using detail::range_json;
  nlohmann::json colors = nlohmann::json::array();
  for (auto col : c.fringe.colors) colors.push_back(fringe_color_name(col));
  return {
      {"seed", c.seed},
      {"noise", {{"prob", c.noise.prob}, {"sigma_range", range_json(c.noise.sigma)}}},
      {"dropout",
       {{"prob", c.dropout.prob},
        {"count_range", range_json(c.dropout.count)},
        {"length_range", range_json(c.dropout.length)},
        {"thickness_range", range_json(c.dropout.thickness)},
        {"intensity_range", range_json(c.dropout.intensity)}}},
      {"fringe",
       {{"prob", c.fringe.prob},
        {"count_range", range_json(c.fringe.count)},
        {"thickness_range", range_json(c.fringe.thickness)},
        {"colors", colors},
        {"strength_range", range_json(c.fringe.strength)}}},
      {"mistracking",
       {{"prob", c.mistracking.prob},
        {"band_height_range", range_json(c.mistracking.band_height)},
        {"offset_range", range_json(c.mistracking.offset)},
        {"band_count_range", range_json(c.mistracking.band_count)}}},
      {"envelope", {{"correlation", c.envelope.correlation}}},
  };
}

// Missing keys keep their defaults.
inline DegradationConfig degradation_config_from_json(const nlohmann::json& j) {
  using detail::read_range;
  using detail::read_value;
  DegradationConfig c;
  try {
    read_value(j, "seed", c.seed);
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      read_value(n, "prob", c.noise.prob);
      read_range(n, "sigma_range", c.noise.sigma);
    }
    if (j.contains("dropout")) {
      const auto& d = j.at("dropout");
      read_value(d, "prob", c.dropout.prob);
      read_range(d, "count_range", c.dropout.count);
      read_range(d, "length_range", c.dropout.length);
      read_range(d, "thickness_range", c.dropout.thickness);
      read_range(d, "intensity_range", c.dropout.intensity);
    }
    if (j.contains("fringe")) {
      const auto& f = j.at("fringe");
      read_value(f, "prob", c.fringe.prob);
      read_range(f, "count_range", c.fringe.count);
      read_range(f, "thickness_range", c.fringe.thickness);
      read_range(f, "strength_range", c.fringe.strength);
      if (f.contains("colors")) {
        c.fringe.colors.clear();
        for (const auto& s : f.at("colors"))
          c.fringe.colors.push_back(parse_fringe_color(s.get<std::string>()));
      }
    }
    if (j.contains("mistracking")) {
      const auto& m = j.at("mistracking");
      read_value(m, "prob", c.mistracking.prob);
      read_range(m, "band_height_range", c.mistracking.band_height);
      read_range(m, "offset_range", c.mistracking.offset);
      read_range(m, "band_count_range", c.mistracking.band_count);
    }
    if (j.contains("envelope")) read_value(j.at("envelope"), "correlation", c.envelope.correlation);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidParam, "malformed degradation config: ", e.what());
  }
  c.validate();
  return c;
}

inline DegradationConfig load_degradation_config(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kNotFound, "config ", path, " not found");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidParam, "malformed degradation config ", path, ": ", e.what());
  }
  return degradation_config_from_json(j);
}

struct DropoutEvent {
  int row = 0;
  int col = 0;
  double length = 0.0;  // fraction of width
  int thickness = 1;
  double intensity = 1.0;
};

struct FringeLine {
  int row = 0;
  int thickness = 1;
  FringeColor color = FringeColor::kGreen;
  double strength = 1.0;
};

struct MistrackBand {
  int row = 0;
  int height = 1;
  int offset = 0;  // pixels, positive = rightward
};

struct PixelRegion {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};

enum class ArtifactKind { kNoise, kDropout, kFringe, kMistracking };

inline std::string artifact_kind_name(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::kNoise: return "noise";
    case ArtifactKind::kDropout: return "dropout";
    case ArtifactKind::kFringe: return "fringe";
    case ArtifactKind::kMistracking: return "mistracking";
  }
  return "?";
}

struct ArtifactEvent {
  ArtifactKind kind = ArtifactKind::kNoise;
  nlohmann::json params;
  PixelRegion region;

  friend bool operator==(const ArtifactEvent& a, const ArtifactEvent& b) {
    return a.kind == b.kind && a.params == b.params && a.region.top == b.region.top &&
           a.region.left == b.region.left && a.region.height == b.region.height &&
           a.region.width == b.region.width;
  }
};

// Applied artifact events per frame, in application order.
struct ArtifactTrace {
  std::vector<std::vector<ArtifactEvent>> frames;

  bool empty() const {
    return std::all_of(frames.begin(), frames.end(),
                       [](const auto& f) { return f.empty(); });
  }
  friend bool operator==(const ArtifactTrace&, const ArtifactTrace&) = default;
};

inline nlohmann::json to_json(const ArtifactTrace& t) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t i = 0; i < t.frames.size(); ++i) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : t.frames[i])
      events.push_back({{"kind", artifact_kind_name(e.kind)},
                        {"params", e.params},
                        {"region",
                         {{"top", e.region.top},
                          {"left", e.region.left},
                          {"height", e.region.height},
                          {"width", e.region.width}}}});
    frames.push_back({{"frame", i}, {"events", events}});
  }
  return {{"frames", frames}};
}

namespace detail {

inline int clamp_int(int v, int lo, int hi) { return std::max(lo, std::min(v, hi)); }

// Blend rows [top, top+height) x cols [left, left+width) toward `tint`.
inline PixelRegion blend_region(ComputeFrame& f, int top, int height, int left, int width,
                                const std::array<double, 3>& tint, double amount) {
  const int y0 = clamp_int(top, 0, f.height()), y1 = clamp_int(top + height, 0, f.height());
  const int x0 = clamp_int(left, 0, f.width()), x1 = clamp_int(left + width, 0, f.width());
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < 3; ++c) {
        double& v = f.at(y, x, c);
        v = (1.0 - amount) * v + amount * tint[c];
      }
  return {y0, x0, y1 - y0, x1 - x0};
}

}  // namespace detail

// out = clamp(in + N(0, sigma^2), 0, 1), i.i.d. per pixel and channel.
template <typename Rng>
ComputeFrame add_gaussian_noise(const ComputeFrame& frame, double sigma, Rng& rng) {
  require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::kInvalidParam,
          "noise sigma must be non-negative, got ", sigma);
  ComputeFrame out = frame;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> normal(0.0, sigma);
  for (double& v : out.data()) v = std::clamp(v + normal(rng), 0.0, 1.0);
  return out;
}

inline ComputeFrame add_dropouts(const ComputeFrame& frame, const std::vector<DropoutEvent>& events,
                                 std::vector<PixelRegion>* regions = nullptr) {
  ComputeFrame out = frame;
  for (const auto& e : events) {
    const int len = static_cast<int>(std::lround(e.length * frame.width()));
    PixelRegion r = detail::blend_region(out, e.row, e.thickness, e.col, len, {1.0, 1.0, 1.0},
                                         e.intensity);
    if (regions) regions->push_back(r);
  }
  return out;
}

inline ComputeFrame add_chroma_fringe(const ComputeFrame& frame, const std::vector<FringeLine>& lines,
                                      std::vector<PixelRegion>* regions = nullptr) {
  ComputeFrame out = frame;
  for (const auto& l : lines) {
    PixelRegion r = detail::blend_region(out, l.row, l.thickness, 0, frame.width(),
                                         fringe_tint(l.color), l.strength);
    if (regions) regions->push_back(r);
  }
  return out;
}

// Circular horizontal shift of each band's rows.
template <PixelType T>
Frame<T> add_mistracking(const Frame<T>& frame, const std::vector<MistrackBand>& bands,
                         std::vector<PixelRegion>* regions = nullptr) {
  Frame<T> out = frame;
  const int w = frame.width();
  std::vector<T> row(static_cast<std::size_t>(w) * 3);
  for (const auto& b : bands) {
    const int y0 = detail::clamp_int(b.row, 0, frame.height());
    const int y1 = detail::clamp_int(b.row + b.height, 0, frame.height());
    const int shift = w ? ((b.offset % w) + w) % w : 0;
    for (int y = y0; y < y1; ++y) {
      const T* src = out.row(y);
      for (int x = 0; x < w; ++x)
        std::copy_n(src + static_cast<std::size_t>(x) * 3, 3,
                    row.data() + static_cast<std::size_t>((x + shift) % w) * 3);
      std::copy(row.begin(), row.end(), out.row(y));
    }
    if (regions) regions->push_back({y0, 0, y1 - y0, w});
  }
  return out;
}

namespace detail {

enum class Family : std::uint64_t { kNoise = 1, kDropout = 2, kFringe = 3, kMistracking = 4 };

inline std::mt19937_64 family_stream(std::uint64_t seed, const std::string& source_id,
                                     std::size_t frame, Family family) {
  return std::mt19937_64(
      mix_seed(seed, fnv1a(source_id), frame, static_cast<std::uint64_t>(family)));
}

inline double unit(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline int uniform_int(std::mt19937_64& rng, Range<int> r) {
  return std::uniform_int_distribution<int>(r.lo, r.hi)(rng);
}

inline double uniform_real(std::mt19937_64& rng, Range<double> r) {
  return r.lo + (r.hi - r.lo) * unit(rng);
}

inline double lerp(Range<double> r, double t) { return r.lo + (r.hi - r.lo) * t; }

}  // namespace detail

// Temporally correlated per-frame envelopes in [0,1], one per family:
// e_0 = u_0, e_t = c * e_{t-1} + (1 - c) * u_t, where u_t is the first draw of
// the frame's own stream.
struct DegradationEnvelopes {
  std::vector<double> noise, dropout, fringe, mistracking;
};

inline DegradationEnvelopes compute_envelopes(const DegradationConfig& cfg,
                                              const std::string& source_id, std::size_t n) {
  using detail::Family;
  DegradationEnvelopes env;
  const double c = cfg.envelope.correlation;
  auto build = [&](Family fam, std::vector<double>& out) {
    out.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      auto rng = detail::family_stream(cfg.seed, source_id, t, fam);
      const double u = detail::unit(rng);
      out[t] = t == 0 ? u : c * out[t - 1] + (1.0 - c) * u;
    }
  };
  build(Family::kNoise, env.noise);
  build(Family::kDropout, env.dropout);
  build(Family::kFringe, env.fringe);
  build(Family::kMistracking, env.mistracking);
  return env;
}

// Degrades frame `index` of a clip. Depends only on (frame, config,
// source_id, index, envelopes), so frames may be processed in any order.
inline std::pair<ComputeFrame, std::vector<ArtifactEvent>> degrade_frame(
    const ComputeFrame& frame, const DegradationConfig& cfg, const std::string& source_id,
    std::size_t index, const DegradationEnvelopes& env) {
  using detail::Family;
  const int H = frame.height(), W = frame.width();
  ComputeFrame out = frame;
  std::vector<ArtifactEvent> events;

  auto stream = [&](Family fam) {
    auto rng = detail::family_stream(cfg.seed, source_id, index, fam);
    detail::unit(rng);  // envelope draw
    return rng;
  };

  // Order: mistracking -> fringe -> dropout -> noise.
  {
    auto rng = stream(Family::kMistracking);
    const auto& m = cfg.mistracking;
    if (detail::unit(rng) < m.prob) {
      const double base = detail::lerp(m.offset, env.mistracking[index]);
      const int count = detail::uniform_int(rng, m.band_count);
      std::vector<MistrackBand> bands;
      for (int k = 0; k < count; ++k) {
        MistrackBand b;
        b.height = detail::uniform_int(rng, m.band_height);
        b.row = std::uniform_int_distribution<int>(0, std::max(0, H - 1))(rng);
        const double frac = 0.5 * base + 0.5 * detail::uniform_real(rng, m.offset);
        b.offset = static_cast<int>(std::lround(frac * W));
        bands.push_back(b);
      }
      std::vector<PixelRegion> regions;
      out = add_mistracking(out, bands, &regions);
      for (std::size_t k = 0; k < bands.size(); ++k)
        events.push_back({ArtifactKind::kMistracking,
                          {{"row", bands[k].row},
                           {"band_height", bands[k].height},
                           {"offset", bands[k].offset}},
                          regions[k]});
    }
  }
  {
    auto rng = stream(Family::kFringe);
    const auto& f = cfg.fringe;
    if (detail::unit(rng) < f.prob) {
      const double strength = detail::lerp(f.strength, env.fringe[index]);
      const int count = detail::uniform_int(rng, f.count);
      std::vector<FringeLine> lines;
      for (int k = 0; k < count; ++k) {
        FringeLine l;
        l.thickness = detail::uniform_int(rng, f.thickness);
        l.row = std::uniform_int_distribution<int>(0, std::max(0, H - 1))(rng);
        l.color = f.colors[std::uniform_int_distribution<std::size_t>(0, f.colors.size() - 1)(rng)];
        l.strength = strength;
        lines.push_back(l);
      }
      std::vector<PixelRegion> regions;
      out = add_chroma_fringe(out, lines, &regions);
      for (std::size_t k = 0; k < lines.size(); ++k)
        events.push_back({ArtifactKind::kFringe,
                          {{"row", lines[k].row},
                           {"thickness", lines[k].thickness},
                           {"color", fringe_color_name(lines[k].color)},
                           {"strength", lines[k].strength}},
                          regions[k]});
    }
  }
  {
    auto rng = stream(Family::kDropout);
    const auto& d = cfg.dropout;
    if (detail::unit(rng) < d.prob) {
      const double intensity = detail::lerp(d.intensity, env.dropout[index]);
      const int count = detail::uniform_int(rng, d.count);
      std::vector<DropoutEvent> drops;
      for (int k = 0; k < count; ++k) {
        DropoutEvent e;
        e.row = std::uniform_int_distribution<int>(0, std::max(0, H - 1))(rng);
        e.col = std::uniform_int_distribution<int>(0, std::max(0, W - 1))(rng);
        e.length = detail::uniform_real(rng, d.length);
        e.thickness = detail::uniform_int(rng, d.thickness);
        e.intensity = intensity;
        drops.push_back(e);
      }
      std::vector<PixelRegion> regions;
      out = add_dropouts(out, drops, &regions);
      for (std::size_t k = 0; k < drops.size(); ++k)
        events.push_back({ArtifactKind::kDropout,
                          {{"row", drops[k].row},
                           {"col", drops[k].col},
                           {"length", drops[k].length},
                           {"thickness", drops[k].thickness},
                           {"intensity", drops[k].intensity}},
                          regions[k]});
    }
  }
  {
    auto rng = stream(Family::kNoise);
    const auto& n = cfg.noise;
    if (detail::unit(rng) < n.prob) {
      const double sigma = detail::lerp(n.sigma, env.noise[index]);
      out = add_gaussian_noise(out, sigma, rng);
      events.push_back({ArtifactKind::kNoise, {{"sigma", sigma}}, {0, 0, H, W}});
    }
  }
  return {std::move(out), std::move(events)};
}

inline std::pair<ComputeClip, ArtifactTrace> degrade_clip(const ComputeClip& clip,
                                                          const DegradationConfig& cfg) {
  clip.validate();
  cfg.validate();
  const auto env = compute_envelopes(cfg, clip.source_id, clip.frames.size());
  ComputeClip out{{}, clip.fps, clip.source_id};
  ArtifactTrace trace;
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    auto [frame, events] = degrade_frame(clip.frames[i], cfg, clip.source_id, i, env);
    out.frames.push_back(std::move(frame));
    trace.frames.push_back(std::move(events));
  }
  return {std::move(out), std::move(trace)};
}

// Clip-level split that keeps the train share by frame count as close as
// possible to `ratio`. Returns true for clips assigned to train.
inline std::vector<bool> split_clips(const std::vector<std::size_t>& frame_counts, double ratio,
                                     std::uint64_t seed) {
  const std::size_t n = frame_counts.size();
  require(n >= 2, ErrorCode::kInsufficientData, "need at least 2 clips, got ", n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, fnv1a("split")));
  std::shuffle(order.begin(), order.end(), rng);

  double total = 0.0;
  for (auto c : frame_counts) total += static_cast<double>(c);
  const double target = ratio * total;
  std::vector<bool> train(n, false);
  double acc = 0.0;
  for (std::size_t i : order) {
    const double c = static_cast<double>(frame_counts[i]);
    if (std::abs(acc + c - target) < std::abs(acc - target)) {
      train[i] = true;
      acc += c;
    }
  }
  // Pairwise swaps while they reduce the deviation from the target.
  for (bool improved = true; improved;) {
    improved = false;
    for (std::size_t a : order) {
      if (!train[a]) continue;
      for (std::size_t b : order) {
        if (train[b]) continue;
        const double next = acc - static_cast<double>(frame_counts[a]) +
                            static_cast<double>(frame_counts[b]);
        if (std::abs(next - target) + 1e-9 < std::abs(acc - target)) {
          train[a] = false;
          train[b] = true;
          acc = next;
          improved = true;
          break;
        }
      }
    }
  }
  const auto n_train = static_cast<std::size_t>(std::count(train.begin(), train.end(), true));
  if (n_train == n) train[order.back()] = false;
  if (n_train == 0) train[order.front()] = true;
  return train;
}

// Degrades every clip under clean_root (one frame directory or container per
// entry) into out_root/{train,val}/<clip>/{gt,degraded}/ and writes
// manifest.json and per-clip trace.json.
inline ClipManifest build_dataset(const fs::path& clean_root, const DegradationConfig& cfg,
                                  const fs::path& out_root, double split_ratio = 0.8,
                                  const CodecTools& tools = CodecTools::from_env()) {
  cfg.validate();
  require(split_ratio > 0.0 && split_ratio < 1.0, ErrorCode::kInvalidParam,
          "split ratio must lie in (0,1)");
  require(fs::is_directory(clean_root), ErrorCode::kNotFound, "clean root ", clean_root,
          " is not a directory");
  std::vector<fs::path> sources;
  for (const auto& e : fs::directory_iterator(clean_root))
    if (e.is_directory() || e.is_regular_file()) sources.push_back(e.path());
  std::sort(sources.begin(), sources.end());
  require(sources.size() >= 2, ErrorCode::kInsufficientData,
          "build_dataset needs at least 2 clips under ", clean_root, ", found ",
          sources.size());

  // Clips are streamed: counted first, then loaded and written one at a time.
  std::vector<std::size_t> counts;
  for (const auto& p : sources) {
    if (fs::is_directory(p)) {
      std::size_t n = 0;
      for (const auto& f : fs::directory_iterator(p)) n += detail::is_frame_file(f.path());
      require(n > 0, ErrorCode::kEmptyClip, "clip ", p, " has no frames");
      counts.push_back(n);
    } else {
      counts.push_back(load_clip(p, tools).frames.size());
    }
  }
  const std::vector<bool> is_train = split_clips(counts, split_ratio, cfg.seed);

  ClipManifest manifest;
  manifest.root = out_root;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    StorageClip gt = load_clip(sources[i], tools);
    gt.source_id = sources[i].stem().string();
    auto [degraded, trace] = degrade_clip(to_compute(gt), cfg);
    ManifestEntry entry{gt.source_id, gt.frames.size(), is_train[i] ? Split::kTrain : Split::kVal};
    save_clip(gt, manifest.clip_dir(entry, "gt"));
    save_clip(to_storage(degraded), manifest.clip_dir(entry, "degraded"));
    std::ofstream tr(out_root / split_name(entry.split) / entry.source_id / "trace.json");
    tr << to_json(trace).dump() << "\n";
    manifest.entries.push_back(entry);
    manifest.total_frames += entry.frame_count;
  }
  save_manifest(manifest, out_root / "manifest.json");
  return manifest;
}

}  // namespace avr
