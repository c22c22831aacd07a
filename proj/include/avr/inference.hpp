// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avr/metrics.hpp"
#include "avr/model.hpp"
#include "avr/video_io.hpp"

namespace avr {

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

inline std::size_t restore_window_count(std::size_t frames, const ModelConfig& cfg) {
  return window_indices(frames, static_cast<std::size_t>(cfg.t), static_cast<std::size_t>(cfg.t))
      .size();
}

namespace detail {

inline int round_up(int v, int m) { return (v + m - 1) / m * m; }

// (1,T,3,Hp,Wp) planar tensor from the given frames, reflect-padded at the
// bottom/right up to (Hp, Wp).
inline Tensor window_tensor(const ComputeClip& clip, const std::vector<std::size_t>& source,
                            int hp, int wp) {
  const int h = clip.height(), w = clip.width();
  const auto T = static_cast<std::int64_t>(source.size());
  Tensor x({1, T, 3, hp, wp});
  double* out = x.data();
  for (std::int64_t k = 0; k < T; ++k) {
    const ComputeFrame& f = clip.frames[source[static_cast<std::size_t>(k)]];
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < hp; ++y) {
        const int sy = static_cast<int>(reflect_index(static_cast<std::size_t>(y), h));
        double* dst = out + ((k * 3 + c) * hp + y) * static_cast<std::int64_t>(wp);
        for (int xx = 0; xx < wp; ++xx) {
          const int sx = static_cast<int>(reflect_index(static_cast<std::size_t>(xx), w));
          dst[xx] = f.at(sy, sx, c);
        }
      }
  }
  return x;
}

}  // namespace detail

// Restores every frame with non-overlapping t-frame windows (tail reflected),
// padding frames spatially to the model granularity and cropping back.
inline ComputeClip restore_video(const RestorationModel& model, const ComputeClip& clip,
                                 const ProgressFn& progress = {}) {
  clip.validate();
  const ModelConfig& cfg = model.config;
  const int h = clip.height(), w = clip.width();
  require(h >= cfg.patch_size && w >= cfg.patch_size, ErrorCode::kFrameTooSmall, "frame ", h,
          "x", w, " is smaller than one ", cfg.patch_size, "x", cfg.patch_size, " patch");
  const int hp = detail::round_up(h, cfg.row_granularity());
  const int wp = detail::round_up(w, cfg.col_granularity());
  const auto windows = window_indices(clip.frames.size(), static_cast<std::size_t>(cfg.t),
                                      static_cast<std::size_t>(cfg.t));
  ComputeClip out{{}, clip.fps, clip.source_id};
  out.frames.reserve(clip.frames.size());
  for (std::size_t wi = 0; wi < windows.size(); ++wi) {
    const auto& win = windows[wi];
    const Tensor y = restore_tensor(model, detail::window_tensor(clip, win.source, hp, wp));
    for (std::size_t k = 0; k < win.source.size() && win.start + k < clip.frames.size(); ++k) {
      ComputeFrame f(h, w);
      const auto kk = static_cast<std::int64_t>(k);
      for (int c = 0; c < 3; ++c)
        for (int yy = 0; yy < h; ++yy) {
          const double* src = y.data() + ((kk * 3 + c) * hp + yy) * static_cast<std::int64_t>(wp);
          for (int xx = 0; xx < w; ++xx) f.at(yy, xx, c) = src[xx];
        }
      out.frames.push_back(std::move(f));
    }
    if (progress) progress(wi + 1, windows.size());
  }
  return out;
}

inline StorageClip restore_video(const RestorationModel& model, const StorageClip& clip,
                                 const ProgressFn& progress = {}) {
  return to_storage(restore_video(model, to_compute(clip), progress));
}

// ---------------------------------------------------------------------------
// Evaluation over the validation split

struct EvalOptions {
  int crop = 512;
  MetricOptions metrics;
};

struct ClipEvaluation {
  std::string source_id;
  MetricReport restored;
  MetricReport baseline;  // degraded input vs ground truth
};

struct EvalReport {
  int crop_requested = 512;
  int crop_used = 512;
  std::vector<ClipEvaluation> clips;
  MetricReport restored;  // means over clips
  MetricReport baseline;
};

namespace detail {

inline MetricReport mean_over_clips(const std::vector<const MetricReport*>& reports) {
  MetricReport m;
  std::vector<double> psnr;
  double ssim = 0.0, lpips = 0.0;
  for (const auto* r : reports) {
    psnr.push_back(r->psnr_db);
    ssim += r->ssim;
    if (r->lpips) lpips += *r->lpips;
    m.identical_frames += r->identical_frames;
  }
  const auto n = static_cast<double>(reports.size());
  m.psnr_db = mean_finite_psnr(psnr);
  m.ssim = ssim / n;
  if (!reports.empty() && reports.front()->lpips) m.lpips = lpips / n;
  return m;
}

}  // namespace detail

// Largest usable crop: the requested size when every clip allows it, else
// the largest multiple of the model granularity that fits all clips.
inline int effective_crop(int requested, int min_side, const ModelConfig& cfg) {
  if (requested <= min_side) return requested;
  const int g = std::max(cfg.row_granularity(), cfg.col_granularity());
  const int c = min_side / g * g;
  return c > 0 ? c : min_side;
}

inline EvalReport evaluate(const RestorationModel& model, const ClipManifest& manifest,
                           const EvalOptions& opt = {}, const ProgressFn& progress = {}) {
  const auto val = manifest.split(Split::kVal);
  require(!val.empty(), ErrorCode::kNoData, "manifest has no validation clips");
  struct Pair {
    const ManifestEntry* entry;
    ComputeClip degraded, gt;
  };
  std::vector<Pair> pairs;
  int min_side = std::numeric_limits<int>::max();
  for (const auto* e : val) {
    Pair p{e, to_compute(load_clip(manifest.clip_dir(*e, "degraded"))),
           to_compute(load_clip(manifest.clip_dir(*e, "gt")))};
    require(p.degraded.frames.size() == p.gt.frames.size() &&
                p.degraded.height() == p.gt.height() && p.degraded.width() == p.gt.width(),
            ErrorCode::kShapeMismatch, "degraded and gt of ", e->source_id, " differ in shape");
    min_side = std::min({min_side, p.gt.height(), p.gt.width()});
    pairs.push_back(std::move(p));
  }
  EvalReport report;
  report.crop_requested = opt.crop;
  report.crop_used = effective_crop(opt.crop, min_side, model.config);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const ComputeClip degraded = center_crop(pairs[i].degraded, report.crop_used);
    const ComputeClip gt = center_crop(pairs[i].gt, report.crop_used);
    const ComputeClip restored = restore_video(model, degraded);
    report.clips.push_back({pairs[i].entry->source_id, compute_metrics(restored, gt, opt.metrics),
                            compute_metrics(degraded, gt, opt.metrics)});
    if (progress) progress(i + 1, pairs.size());
  }
  std::vector<const MetricReport*> r, b;
  for (const auto& c : report.clips) {
    r.push_back(&c.restored);
    b.push_back(&c.baseline);
  }
  report.restored = detail::mean_over_clips(r);
  report.baseline = detail::mean_over_clips(b);
  return report;
}

inline nlohmann::json to_json(const EvalReport& r) {
  auto summary = [](const MetricReport& m) {
    return nlohmann::json{{"psnr_db", db_to_json(m.psnr_db)},
                          {"ssim", m.ssim},
                          {"lpips", m.lpips ? nlohmann::json(*m.lpips) : nlohmann::json(nullptr)}};
  };
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : r.clips)
    clips.push_back({{"source_id", c.source_id},
                     {"restored", to_json(c.restored)},
                     {"baseline", to_json(c.baseline)}});
  return {{"crop_requested", r.crop_requested},
          {"crop_used", r.crop_used},
          {"restored", summary(r.restored)},
          {"baseline", summary(r.baseline)},
          {"clips", clips}};
}

}  // namespace avr
