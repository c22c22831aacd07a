// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

// Straight-line reference implementations used to check the library. They
// read the extractor file on their own and use plain loops throughout.

#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace avr::oracle {

// Plain HWC image of doubles.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<double> v;
  double& at(int y, int x, int ch) { return v[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
  double at(int y, int x, int ch) const {
    return v[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
};

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

// Activations at every tap, in tap order, for one RGB image in [0,1].
inline std::vector<Image> extractor_taps(const nlohmann::json& ex, Image img) {
  const auto mean = ex["mean"].get<std::vector<double>>();
  const auto stdv = ex["std"].get<std::vector<double>>();
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = (img.at(y, x, ch) - mean[ch]) / stdv[ch];
  const auto taps = ex["taps"].get<std::vector<std::string>>();
  std::vector<Image> out(taps.size());
  for (const auto& layer : ex["layers"]) {
    const std::string type = layer["type"];
    if (type == "conv3x3") {
      const int in = layer["in"], outc = layer["out"];
      const auto wt = layer["weight"].get<std::vector<double>>();
      const auto b = layer["bias"].get<std::vector<double>>();
      Image next{img.h, img.w, outc, std::vector<double>(static_cast<std::size_t>(img.h) * img.w * outc)};
      for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
          for (int o = 0; o < outc; ++o) {
            double s = b[o];
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int yy = y + ky - 1, xx = x + kx - 1;
                if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) continue;
                for (int i = 0; i < in; ++i)
                  s += img.at(yy, xx, i) * wt[((ky * 3 + kx) * in + i) * outc + o];
              }
            next.at(y, x, o) = s;
          }
      img = std::move(next);
    } else if (type == "relu") {
      for (double& v : img.v) v = v > 0.0 ? v : 0.0;
    } else if (type == "maxpool2") {
      Image next{img.h / 2, img.w / 2, img.c,
                 std::vector<double>(static_cast<std::size_t>(img.h / 2) * (img.w / 2) * img.c)};
      for (int y = 0; y < next.h; ++y)
        for (int x = 0; x < next.w; ++x)
          for (int ch = 0; ch < img.c; ++ch)
            next.at(y, x, ch) = std::max(std::max(img.at(2 * y, 2 * x, ch), img.at(2 * y, 2 * x + 1, ch)),
                                         std::max(img.at(2 * y + 1, 2 * x, ch), img.at(2 * y + 1, 2 * x + 1, ch)));
      img = std::move(next);
    }
    for (std::size_t k = 0; k < taps.size(); ++k)
      if (taps[k] == layer["name"]) out[k] = img;
  }
  return out;
}

// Mean over taps of mean squared feature difference, averaged over images.
inline double perceptual(const nlohmann::json& ex, const std::vector<Image>& a,
                         const std::vector<Image>& b) {
  const auto ntaps = ex["taps"].size();
  std::vector<double> sum(ntaps, 0.0);
  std::vector<double> count(ntaps, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto fa = extractor_taps(ex, a[i]), fb = extractor_taps(ex, b[i]);
    for (std::size_t k = 0; k < ntaps; ++k)
      for (std::size_t j = 0; j < fa[k].v.size(); ++j) {
        const double d = fa[k].v[j] - fb[k].v[j];
        sum[k] += d * d;
        count[k] += 1.0;
      }
  }
  double s = 0.0;
  for (std::size_t k = 0; k < ntaps; ++k) s += sum[k] / count[k];
  return s / static_cast<double>(ntaps);
}

// Sum over taps of the spatial mean of channel-weighted squared differences
// between channel-unit-normalized features (unit weights when absent).
inline double lpips(const nlohmann::json& ex, const Image& a, const Image& b) {
  const auto fa = extractor_taps(ex, a), fb = extractor_taps(ex, b);
  const auto taps = ex["taps"].get<std::vector<std::string>>();
  double total = 0.0;
  for (std::size_t k = 0; k < taps.size(); ++k) {
    const Image& x = fa[k];
    const Image& y = fb[k];
    std::vector<double> w(x.c, 1.0);
    if (ex.contains("lpips_weights") && ex["lpips_weights"].contains(taps[k]))
      w = ex["lpips_weights"][taps[k]].get<std::vector<double>>();
    double layer = 0.0;
    for (int r = 0; r < x.h; ++r)
      for (int cidx = 0; cidx < x.w; ++cidx) {
        double nx = 0.0, ny = 0.0;
        for (int ch = 0; ch < x.c; ++ch) {
          nx += x.at(r, cidx, ch) * x.at(r, cidx, ch);
          ny += y.at(r, cidx, ch) * y.at(r, cidx, ch);
        }
        nx = std::sqrt(nx) + 1e-10;
        ny = std::sqrt(ny) + 1e-10;
        for (int ch = 0; ch < x.c; ++ch) {
          const double d = x.at(r, cidx, ch) / nx - y.at(r, cidx, ch) / ny;
          layer += w[ch] * d * d;
        }
      }
    total += layer / (static_cast<double>(x.h) * x.w);
  }
  return total;
}

// SSIM by explicit sliding 11x11 Gaussian windows (valid positions only) on
// a single-channel image.
inline double ssim_gray(const Image& a, const Image& b, double sigma = 1.5, int win = 11,
                        double k1 = 0.01, double k2 = 0.03) {
  std::vector<double> g(static_cast<std::size_t>(win) * win);
  double gs = 0.0;
  const int r = win / 2;
  for (int y = 0; y < win; ++y)
    for (int x = 0; x < win; ++x) {
      const double v = std::exp(-((y - r) * (y - r) + (x - r) * (x - r)) / (2 * sigma * sigma));
      g[y * win + x] = v;
      gs += v;
    }
  for (double& v : g) v /= gs;
  const double c1 = k1 * k1, c2 = k2 * k2;
  double total = 0.0;
  int n = 0;
  for (int y0 = 0; y0 + win <= a.h; ++y0)
    for (int x0 = 0; x0 + win <= a.w; ++x0) {
      double ma = 0, mb = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          ma += g[y * win + x] * a.at(y0 + y, x0 + x, 0);
          mb += g[y * win + x] * b.at(y0 + y, x0 + x, 0);
        }
      double va = 0, vb = 0, cov = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          const double da = a.at(y0 + y, x0 + x, 0) - ma, db = b.at(y0 + y, x0 + x, 0) - mb;
          va += g[y * win + x] * da * da;
          vb += g[y * win + x] * db * db;
          cov += g[y * win + x] * da * db;
        }
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  return total / n;
}

}  // namespace avr::oracle
