// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "avr/losses.hpp"
#include "avr/video_io.hpp"

// Full-reference quality metrics on compute-form frames (values in [0,1],
// dynamic range 1).
namespace avr {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

namespace detail {

inline void require_same_shape(const ComputeFrame& a, const ComputeFrame& b, const char* what) {
  require(a.height() == b.height() && a.width() == b.width(), ErrorCode::kShapeError, what,
          ": frames are ", a.height(), "x", a.width(), " and ", b.height(), "x", b.width());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PSNR

inline double psnr_from_mse(double mse) { return mse == 0.0 ? kInf : -10.0 * std::log10(mse); }

inline double psnr(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return psnr_from_mse(s / static_cast<double>(n));
}

inline double psnr(const ComputeFrame& a, const ComputeFrame& b) {
  detail::require_same_shape(a, b, "psnr");
  return psnr(a.data().data(), b.data().data(), a.data().size());
}

// Mean of finite per-frame values; +inf when every frame is identical.
inline double mean_finite_psnr(const std::vector<double>& per_frame) {
  double s = 0.0;
  std::size_t n = 0;
  for (double v : per_frame)
    if (std::isfinite(v)) {
      s += v;
      ++n;
    }
  return n == 0 ? kInf : s / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// SSIM

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
  bool luma = true;  // false: mean of per-channel SSIM over R, G, B
};

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double r = (size - 1) / 2.0;
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-(i - r) * (i - r) / (2.0 * sigma * sigma));
    s += k[i];
  }
  for (double& v : k) v /= s;
  return k;
}

// Valid-mode separable filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& x, int h, int w,
                                        const std::vector<double>& k) {
  const int n = static_cast<int>(k.size()), wo = w - n + 1, ho = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo), out(static_cast<std::size_t>(ho) * wo);
  for (int y = 0; y < h; ++y)
    for (int x0 = 0; x0 < wo; ++x0) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * x[static_cast<std::size_t>(y) * w + x0 + i];
      tmp[static_cast<std::size_t>(y) * wo + x0] = s;
    }
  for (int y = 0; y < ho; ++y)
    for (int x0 = 0; x0 < wo; ++x0) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * wo + x0];
      out[static_cast<std::size_t>(y) * wo + x0] = s;
    }
  return out;
}

inline double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                         const SsimParams& p) {
  const auto k = gaussian_kernel(p.window, p.sigma);
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto ma = filter_valid(a, h, w, k), mb = filter_valid(b, h, w, k);
  const auto saa = filter_valid(aa, h, w, k), sbb = filter_valid(bb, h, w, k);
  const auto sab = filter_valid(ab, h, w, k);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i];
    const double cov = sab[i] - ma[i] * mb[i];
    total += ((2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2)) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(ma.size());
}

inline std::vector<double> plane(const ComputeFrame& f, int channel) {
  std::vector<double> out(static_cast<std::size_t>(f.height()) * f.width());
  const auto& d = f.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = channel < 0 ? 0.299 * d[3 * i] + 0.587 * d[3 * i + 1] + 0.114 * d[3 * i + 2]
                         : d[3 * i + channel];
  return out;
}

}  // namespace detail

inline double ssim(const ComputeFrame& a, const ComputeFrame& b, const SsimParams& p = {}) {
  detail::require_same_shape(a, b, "ssim");
  require(a.height() >= p.window && a.width() >= p.window, ErrorCode::kShapeError,
          "ssim: frame ", a.height(), "x", a.width(), " smaller than the ", p.window,
          "x", p.window, " window");
  if (p.luma)
    return detail::ssim_plane(detail::plane(a, -1), detail::plane(b, -1), a.height(), a.width(),
                              p);
  double s = 0.0;
  for (int c = 0; c < 3; ++c)
    s += detail::ssim_plane(detail::plane(a, c), detail::plane(b, c), a.height(), a.width(), p);
  return s / 3.0;
}

// ---------------------------------------------------------------------------
// LPIPS

inline double lpips(const ComputeFrame& a, const ComputeFrame& b,
                    const FeatureExtractor& extractor) {
  detail::require_same_shape(a, b, "lpips");
  ag::NoGradGuard g;
  const Shape shape{1, a.height(), a.width(), 3};
  const auto fa = extractor.features(ag::constant(Tensor(shape, a.data())));
  const auto fb = extractor.features(ag::constant(Tensor(shape, b.data())));
  double total = 0.0;
  for (std::size_t k = 0; k < fa.size(); ++k) {
    const Tensor& x = fa[k].value();
    const Tensor& y = fb[k].value();
    const std::int64_t C = x.dim(3), positions = x.size() / C;
    const auto& w = extractor.lpips_weights(extractor.taps()[k]);
    double layer = 0.0;
    for (std::int64_t p = 0; p < positions; ++p) {
      const double* xp = x.data() + p * C;
      const double* yp = y.data() + p * C;
      double nx = 0.0, ny = 0.0;
      for (std::int64_t c = 0; c < C; ++c) {
        nx += xp[c] * xp[c];
        ny += yp[c] * yp[c];
      }
      nx = std::sqrt(nx) + 1e-10;
      ny = std::sqrt(ny) + 1e-10;
      for (std::int64_t c = 0; c < C; ++c) {
        const double d = xp[c] / nx - yp[c] / ny;
        layer += (w.empty() ? 1.0 : w[c]) * d * d;
      }
    }
    total += layer / static_cast<double>(positions);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Clip-level report

struct MetricOptions {
  SsimParams ssim;
  const FeatureExtractor* extractor = nullptr;  // LPIPS is skipped without one
};

struct MetricReport {
  double psnr_db = kInf;
  double ssim = 1.0;
  std::optional<double> lpips;
  std::vector<double> psnr_per_frame, ssim_per_frame, lpips_per_frame;
  std::size_t identical_frames = 0;  // frames with zero error, excluded from psnr_db
};

inline MetricReport compute_metrics(const ComputeClip& a, const ComputeClip& b,
                                    const MetricOptions& opt = {}) {
  require(a.frames.size() == b.frames.size() && !a.frames.empty(), ErrorCode::kShapeError,
          "metrics: clips have ", a.frames.size(), " and ", b.frames.size(), " frames");
  MetricReport r;
  double ssum = 0.0, lsum = 0.0;
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    const double p = psnr(a.frames[i], b.frames[i]);
    r.psnr_per_frame.push_back(p);
    if (std::isinf(p)) ++r.identical_frames;
    r.ssim_per_frame.push_back(ssim(a.frames[i], b.frames[i], opt.ssim));
    ssum += r.ssim_per_frame.back();
    if (opt.extractor) {
      r.lpips_per_frame.push_back(lpips(a.frames[i], b.frames[i], *opt.extractor));
      lsum += r.lpips_per_frame.back();
    }
  }
  const auto n = static_cast<double>(a.frames.size());
  r.psnr_db = mean_finite_psnr(r.psnr_per_frame);
  r.ssim = ssum / n;
  if (opt.extractor) r.lpips = lsum / n;
  return r;
}

inline nlohmann::json db_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double db_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    require(s == "inf" || s == "-inf", ErrorCode::kInvalidParam, "bad dB value ", s);
    return s == "inf" ? kInf : -kInf;
  }
  return j.get<double>();
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json psnr = nlohmann::json::array();
  for (double v : r.psnr_per_frame) psnr.push_back(db_to_json(v));
  nlohmann::json j = {{"psnr_db", db_to_json(r.psnr_db)},
                      {"ssim", r.ssim},
                      {"lpips", r.lpips ? nlohmann::json(*r.lpips) : nlohmann::json(nullptr)},
                      {"identical_frames", r.identical_frames},
                      {"per_frame", {{"psnr_db", psnr}, {"ssim", r.ssim_per_frame}}}};
  if (r.lpips) j["per_frame"]["lpips"] = r.lpips_per_frame;
  return j;
}

}  // namespace avr
