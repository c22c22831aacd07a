// Copyright (c) 2026 The analog-video-restore Authors.
//
// This source code is licensed under the Apache License, Version 2.0
// found in the LICENSE file in the root directory of this source tree.

#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "avr/autograd.hpp"

// Differentiable tensor operations. Activations are channel-last throughout:
// the last axis is always the feature/channel axis.
namespace avr::ag {

namespace detail {

inline Tensor* input_grad(Node& self, std::size_t i) {
  Node* in = self.inputs.at(i).get();
  return in->requires_grad ? &in->grad_buffer() : nullptr;
}

// y[M,N] += x[M,K] * w[K,N]
inline void gemm_acc(const double* x, const double* w, double* y,
                     std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* yr = y + i * n;
    const double* xr = x + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double a = xr[p];
      const double* wr = w + p * n;
#pragma omp simd
      for (std::int64_t j = 0; j < n; ++j) yr[j] += a * wr[j];
    }
  }
}

// w[K,N] += x[M,K]^T * y[M,N]
inline void gemm_tn_acc(const double* x, const double* y, double* w,
                        std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* xr = x + i * k;
    const double* yr = y + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double a = xr[p];
      double* wr = w + p * n;
#pragma omp simd
      for (std::int64_t j = 0; j < n; ++j) wr[j] += a * yr[j];
    }
  }
}

inline std::vector<double> transpose(const double* a, std::int64_t rows,
                                     std::int64_t cols) {
  std::vector<double> t(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

inline Tensor permute_values(const Tensor& x, const std::vector<int>& perm) {
  const std::size_t r = x.rank();
  Shape out_shape(r);
  std::vector<std::int64_t> in_strides(r), src_stride(r);
  std::int64_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_strides[i] = s;
    s *= x.dim(i);
  }
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.dim(static_cast<std::size_t>(perm[i]));
    src_stride[i] = in_strides[static_cast<std::size_t>(perm[i])];
  }
  Tensor out(out_shape);
  if (out.size() == 0) return out;
  std::vector<std::int64_t> idx(r, 0);
  const double* src = x.data();
  double* dst = out.data();
  const std::int64_t inner = r ? out_shape[r - 1] : 1;
  const std::int64_t inner_stride = r ? src_stride[r - 1] : 1;
  std::int64_t base = 0;
  const std::int64_t total = static_cast<std::int64_t>(out.size());
  for (std::int64_t o = 0; o < total; o += inner) {
    const double* sp = src + base;
    for (std::int64_t j = 0; j < inner; ++j) dst[o + j] = sp[j * inner_stride];
    // Odometer over all axes except the innermost.
    for (std::size_t ax = r - 1; ax-- > 0;) {
      base += src_stride[ax];
      if (++idx[ax] < out_shape[ax]) break;
      base -= src_stride[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

inline Tensor roll_values(const Tensor& x, const std::vector<std::int64_t>& shifts) {
  const std::size_t r = x.rank();
  Tensor out(x.shape());
  std::vector<std::int64_t> strides(r);
  std::int64_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    strides[i] = s;
    s *= x.dim(i);
  }
  std::vector<std::int64_t> idx(r, 0);
  for (std::size_t lin = 0; lin < x.size(); ++lin) {
    std::int64_t dst = 0;
    for (std::size_t a = 0; a < r; ++a) {
      const std::int64_t n = x.dim(a);
      std::int64_t j = (idx[a] + shifts[a]) % n;
      if (j < 0) j += n;
      dst += j * strides[a];
    }
    out[static_cast<std::size_t>(dst)] = x[lin];
    for (std::size_t a = r; a-- > 0;) {
      if (++idx[a] < x.dim(a)) break;
      idx[a] = 0;
    }
  }
  return out;
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), ErrorCode::kShapeError, "add: shape ",
          shape_string(a.shape()), " vs ", shape_string(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Tensor* g = detail::input_grad(self, k))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    if (Tensor* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
  });
}

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

inline Var permute(const Var& a, std::vector<int> perm) {
  require(perm.size() == a.rank(), ErrorCode::kShapeError,
          "permute: rank mismatch");
  Tensor out = detail::permute_values(a.value(), perm);
  return make_result(std::move(out), {a}, [perm](Node& self) {
    if (Tensor* g = detail::input_grad(self, 0)) {
      std::vector<int> inv(perm.size());
      for (std::size_t i = 0; i < perm.size(); ++i)
        inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
      Tensor back = detail::permute_values(self.grad, inv);
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += back[i];
    }
  });
}

// Cyclic shift; positive shifts move elements toward higher indices.
inline Var roll(const Var& a, std::vector<std::int64_t> shifts) {
  require(shifts.size() == a.rank(), ErrorCode::kShapeError,
          "roll: rank mismatch");
  Tensor out = detail::roll_values(a.value(), shifts);
  return make_result(std::move(out), {a}, [shifts](Node& self) {
    if (Tensor* g = detail::input_grad(self, 0)) {
      std::vector<std::int64_t> neg(shifts.size());
      for (std::size_t i = 0; i < shifts.size(); ++i) neg[i] = -shifts[i];
      Tensor back = detail::roll_values(self.grad, neg);
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += back[i];
    }
  });
}

// Concatenation along the last axis.
inline Var concat_last(const Var& a, const Var& b) {
  const std::size_t r = a.rank();
  require(r == b.rank() && r >= 1, ErrorCode::kShapeError,
          "concat_last: rank mismatch");
  for (std::size_t i = 0; i + 1 < r; ++i)
    require(a.dim(i) == b.dim(i), ErrorCode::kShapeError,
            "concat_last: leading dims differ");
  const std::int64_t ca = a.dim(r - 1), cb = b.dim(r - 1);
  Shape shape = a.shape();
  shape[r - 1] = ca + cb;
  Tensor out(shape);
  const std::int64_t rows = numel(a.shape()) / ca;
  for (std::int64_t i = 0; i < rows; ++i) {
    std::copy_n(a.value().data() + i * ca, ca, out.data() + i * (ca + cb));
    std::copy_n(b.value().data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
  }
  return make_result(std::move(out), {a, b}, [rows, ca, cb](Node& self) {
    if (Tensor* g = detail::input_grad(self, 0))
      for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t c = 0; c < ca; ++c)
          (*g)[i * ca + c] += self.grad[i * (ca + cb) + c];
    if (Tensor* g = detail::input_grad(self, 1))
      for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t c = 0; c < cb; ++c)
          (*g)[i * cb + c] += self.grad[i * (ca + cb) + ca + c];
  });
}

// y = x W + b over the last axis. W is (in, out); bias may be empty.
inline Var linear(const Var& x, const Var& weight, const Var& bias = Var()) {
  const std::size_t r = x.rank();
  const std::int64_t in = x.dim(r - 1);
  require(weight.rank() == 2 && weight.dim(0) == in, ErrorCode::kShapeError,
          "linear: input ", shape_string(x.shape()), " vs weight ",
          shape_string(weight.shape()));
  const std::int64_t out_dim = weight.dim(1);
  const std::int64_t m = numel(x.shape()) / std::max<std::int64_t>(in, 1);
  Shape shape = x.shape();
  shape[r - 1] = out_dim;
  Tensor out(shape);
  if (bias) {
    require(bias.value().size() == static_cast<std::size_t>(out_dim),
            ErrorCode::kShapeError, "linear: bias size");
    for (std::int64_t i = 0; i < m; ++i)
      std::copy_n(bias.value().data(), out_dim, out.data() + i * out_dim);
  }
  detail::gemm_acc(x.value().data(), weight.value().data(), out.data(), m, in,
                   out_dim);
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(bias);
  const bool has_bias = static_cast<bool>(bias);
  return make_result(
      std::move(out), std::move(inputs),
      [m, in, out_dim, has_bias](Node& self) {
        const Tensor& xv = self.inputs[0]->value;
        const Tensor& wv = self.inputs[1]->value;
        if (Tensor* gx = detail::input_grad(self, 0)) {
          std::vector<double> wt = detail::transpose(wv.data(), in, out_dim);
          detail::gemm_acc(self.grad.data(), wt.data(), gx->data(), m, out_dim,
                           in);
        }
        if (Tensor* gw = detail::input_grad(self, 1))
          detail::gemm_tn_acc(xv.data(), self.grad.data(), gw->data(), m, in,
                              out_dim);
        if (has_bias)
          if (Tensor* gb = detail::input_grad(self, 2))
            for (std::int64_t i = 0; i < m; ++i)
              for (std::int64_t j = 0; j < out_dim; ++j)
                (*gb)[j] += self.grad[i * out_dim + j];
      });
}

inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta,
                      double eps = 1e-5) {
  const std::int64_t c = x.dim(x.rank() - 1);
  const std::int64_t rows = numel(x.shape()) / c;
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* xv = x.value().data();
  const double* g = gamma.value().data();
  const double* b = beta.value().data();
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* xr = xv + i * c;
    double mean = 0.0;
    for (std::int64_t j = 0; j < c; ++j) mean += xr[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::int64_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mean) * is;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = h * g[j] + b[j];
    }
  }
  return make_result(
      std::move(out), {x, gamma, beta}, [c, rows, xhat, inv_std](Node& self) {
        const double* gv = self.inputs[1]->value.data();
        Tensor* gx = detail::input_grad(self, 0);
        Tensor* gg = detail::input_grad(self, 1);
        Tensor* gb = detail::input_grad(self, 2);
        std::vector<double> dxhat(static_cast<std::size_t>(c));
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* dy = self.grad.data() + i * c;
          const double* h = xhat->data() + i * c;
          double sum_d = 0.0, sum_dh = 0.0;
          for (std::int64_t j = 0; j < c; ++j) {
            if (gg) (*gg)[j] += dy[j] * h[j];
            if (gb) (*gb)[j] += dy[j];
            dxhat[j] = dy[j] * gv[j];
            sum_d += dxhat[j];
            sum_dh += dxhat[j] * h[j];
          }
          if (gx) {
            const double is = (*inv_std)[i];
            const double inv_c = 1.0 / static_cast<double>(c);
            for (std::int64_t j = 0; j < c; ++j)
              (*gx)[i * c + j] +=
                  is * (dxhat[j] - inv_c * sum_d - h[j] * inv_c * sum_dh);
          }
        }
      });
}

// Exact (erf) GELU.
inline Var gelu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = detail::input_grad(self, 0)) {
      const Tensor& xv = self.inputs[0]->value;
      constexpr double kInvSqrt2Pi = 0.3989422804014327;
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        (*g)[i] += self.grad[i] * (cdf + v * pdf);
      }
    }
  });
}

inline Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = detail::input_grad(self, 0)) {
      const Tensor& xv = self.inputs[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i)
        if (xv[i] > 0.0) (*g)[i] += self.grad[i];
    }
  });
}

struct Conv3dGeometry {
  std::array<std::int64_t, 3> stride{1, 1, 1};
  std::array<std::int64_t, 3> padding{0, 0, 0};
};

// Direct 3D convolution on channel-last input (B, T, H, W, Cin) with weight
// (kt, kh, kw, Cin, Cout); zero padding. Bias may be empty.
inline Var conv3d(const Var& x, const Var& weight, const Var& bias,
                  Conv3dGeometry geo) {
  require(x.rank() == 5 && weight.rank() == 5, ErrorCode::kShapeError,
          "conv3d: expects rank-5 input and weight");
  const std::int64_t B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3),
                     Ci = x.dim(4);
  const std::int64_t KT = weight.dim(0), KH = weight.dim(1), KW = weight.dim(2),
                     Co = weight.dim(4);
  require(weight.dim(3) == Ci, ErrorCode::kShapeError,
          "conv3d: channel mismatch ", Ci, " vs ", weight.dim(3));
  const std::int64_t st = geo.stride[0], sh = geo.stride[1], sw = geo.stride[2];
  const std::int64_t pt = geo.padding[0], ph = geo.padding[1],
                     pw = geo.padding[2];
  const std::int64_t To = (T + 2 * pt - KT) / st + 1;
  const std::int64_t Ho = (H + 2 * ph - KH) / sh + 1;
  const std::int64_t Wo = (W + 2 * pw - KW) / sw + 1;
  require(To > 0 && Ho > 0 && Wo > 0, ErrorCode::kShapeError,
          "conv3d: kernel larger than padded input");
  Tensor out(Shape{B, To, Ho, Wo, Co});
  const double* xv = x.value().data();
  const double* wv = weight.value().data();
  double* ov = out.data();

  // Calls fn(out_offset, in_offset, weight_offset) for every valid tap.
  auto for_each_tap = [=](auto&& fn) {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t to = 0; to < To; ++to)
        for (std::int64_t ho = 0; ho < Ho; ++ho)
          for (std::int64_t wo = 0; wo < Wo; ++wo) {
            const std::int64_t o = (((b * To + to) * Ho + ho) * Wo + wo) * Co;
            for (std::int64_t kt = 0; kt < KT; ++kt) {
              const std::int64_t ti = to * st - pt + kt;
              if (ti < 0 || ti >= T) continue;
              for (std::int64_t kh = 0; kh < KH; ++kh) {
                const std::int64_t hi = ho * sh - ph + kh;
                if (hi < 0 || hi >= H) continue;
                for (std::int64_t kw = 0; kw < KW; ++kw) {
                  const std::int64_t wi = wo * sw - pw + kw;
                  if (wi < 0 || wi >= W) continue;
                  const std::int64_t in = (((b * T + ti) * H + hi) * W + wi) * Ci;
                  const std::int64_t wk = ((kt * KH + kh) * KW + kw) * Ci * Co;
                  fn(o, in, wk);
                }
              }
            }
          }
  };

  if (bias) {
    const double* bv = bias.value().data();
    for (std::int64_t i = 0; i < B * To * Ho * Wo; ++i)
      std::copy_n(bv, Co, ov + i * Co);
  }
  for_each_tap([&](std::int64_t o, std::int64_t in, std::int64_t wk) {
    for (std::int64_t ci = 0; ci < Ci; ++ci) {
      const double a = xv[in + ci];
      const double* wr = wv + wk + ci * Co;
#pragma omp simd
      for (std::int64_t co = 0; co < Co; ++co) ov[o + co] += a * wr[co];
    }
  });

  std::vector<Var> inputs{x, weight};
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias) inputs.push_back(bias);
  return make_result(
      std::move(out), std::move(inputs),
      [for_each_tap, Ci, Co, has_bias](Node& self) {
        const double* xv = self.inputs[0]->value.data();
        const double* wv = self.inputs[1]->value.data();
        const double* dy = self.grad.data();
        Tensor* gx = detail::input_grad(self, 0);
        Tensor* gw = detail::input_grad(self, 1);
        double* gxv = gx ? gx->data() : nullptr;
        double* gwv = gw ? gw->data() : nullptr;
        for_each_tap([&](std::int64_t o, std::int64_t in, std::int64_t wk) {
          const double* d = dy + o;
          for (std::int64_t ci = 0; ci < Ci; ++ci) {
            const double* wr = wv + wk + ci * Co;
            if (gxv) {
              double acc = 0.0;
#pragma omp simd reduction(+ : acc)
              for (std::int64_t co = 0; co < Co; ++co) acc += d[co] * wr[co];
              gxv[in + ci] += acc;
            }
            if (gwv) {
              const double a = xv[in + ci];
              double* gr = gwv + wk + ci * Co;
#pragma omp simd
              for (std::int64_t co = 0; co < Co; ++co) gr[co] += a * d[co];
            }
          }
        });
        if (has_bias)
          if (Tensor* gb = detail::input_grad(self, 2)) {
            const std::int64_t rows = static_cast<std::int64_t>(self.grad.size()) / Co;
            for (std::int64_t i = 0; i < rows; ++i)
              for (std::int64_t co = 0; co < Co; ++co)
                (*gb)[co] += dy[i * Co + co];
          }
      });
}

// 2x2 max pooling with stride 2 on (N, H, W, C).
inline Var max_pool2x2(const Var& x) {
  require(x.rank() == 4, ErrorCode::kShapeError, "max_pool2x2: rank 4 input");
  const std::int64_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::int64_t Ho = H / 2, Wo = W / 2;
  Tensor out(Shape{N, Ho, Wo, C});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  const double* xv = x.value().data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t h = 0; h < Ho; ++h)
      for (std::int64_t w = 0; w < Wo; ++w)
        for (std::int64_t c = 0; c < C; ++c) {
          std::int64_t best = -1;
          for (std::int64_t dy = 0; dy < 2; ++dy)
            for (std::int64_t dx = 0; dx < 2; ++dx) {
              const std::int64_t i = ((n * H + 2 * h + dy) * W + 2 * w + dx) * C + c;
              if (best < 0 || xv[i] > xv[best]) best = i;
            }
          const std::int64_t o = ((n * Ho + h) * Wo + w) * C + c;
          out[o] = xv[best];
          (*argmax)[o] = best;
        }
  return make_result(std::move(out), {x}, [argmax](Node& self) {
    if (Tensor* g = detail::input_grad(self, 0))
      for (std::size_t o = 0; o < argmax->size(); ++o)
        (*g)[(*argmax)[o]] += self.grad[o];
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_result(Tensor(Shape{1}, s), {x}, [](Node& self) {
    if (Tensor* g = detail::input_grad(self, 0))
      for (double& v : g->values()) v += self.grad[0];
  });
}

inline Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

// mean((a - b)^2) as a scalar.
inline Var mse(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), ErrorCode::kShapeError, "mse: shape ",
          shape_string(a.shape()), " vs ", shape_string(b.shape()));
  const std::size_t n = a.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  return make_result(
      Tensor(Shape{1}, s / static_cast<double>(n)), {a, b}, [n](Node& self) {
        const Tensor& av = self.inputs[0]->value;
        const Tensor& bv = self.inputs[1]->value;
        const double k = 2.0 * self.grad[0] / static_cast<double>(n);
        if (Tensor* g = detail::input_grad(self, 0))
          for (std::size_t i = 0; i < n; ++i) (*g)[i] += k * (av[i] - bv[i]);
        if (Tensor* g = detail::input_grad(self, 1))
          for (std::size_t i = 0; i < n; ++i) (*g)[i] -= k * (av[i] - bv[i]);
      });
}

// Parameters of one windowed multi-head self-attention evaluation.
struct WindowAttentionSpec {
  std::int64_t heads = 1;
  double scale = 1.0;
  // (N*N) indices into the bias table rows.
  std::shared_ptr<const std::vector<std::int32_t>> relative_index;
  // Optional additive mask (num_windows, N, N); window w of batch-window bw
  // is bw % num_windows.
  std::shared_ptr<const Tensor> mask;
};

namespace detail {

// Returns softmax probabilities (BW, heads, N, N) and fills the output.
inline std::vector<double> window_attention_forward(
    const Tensor& qkv, const Tensor& table, const WindowAttentionSpec& spec,
    Tensor* out) {
  const std::int64_t BW = qkv.dim(0), N = qkv.dim(1), C = qkv.dim(2) / 3;
  const std::int64_t heads = spec.heads, d = C / heads;
  const std::vector<std::int32_t>& rel = *spec.relative_index;
  const std::int64_t n_windows = spec.mask ? spec.mask->dim(0) : 1;
  std::vector<double> probs(static_cast<std::size_t>(BW * heads * N * N));
  const double* q0 = qkv.data();
  for (std::int64_t bw = 0; bw < BW; ++bw) {
    const double* base = q0 + bw * N * 3 * C;
    const double* mask =
        spec.mask ? spec.mask->data() + (bw % n_windows) * N * N : nullptr;
    for (std::int64_t h = 0; h < heads; ++h) {
      double* p = probs.data() + (bw * heads + h) * N * N;
      for (std::int64_t i = 0; i < N; ++i) {
        const double* qi = base + i * 3 * C + h * d;
        double* row = p + i * N;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < N; ++j) {
          const double* kj = base + j * 3 * C + C + h * d;
          double dot = 0.0;
#pragma omp simd reduction(+ : dot)
          for (std::int64_t e = 0; e < d; ++e) dot += qi[e] * kj[e];
          double s = spec.scale * dot + table[rel[i * N + j] * heads + h];
          if (mask) s += mask[i * N + j];
          row[j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::int64_t j = 0; j < N; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (std::int64_t j = 0; j < N; ++j) row[j] /= z;
        if (out) {
          double* oi = out->data() + (bw * N + i) * C + h * d;
          for (std::int64_t j = 0; j < N; ++j) {
            const double pj = row[j];
            const double* vj = base + j * 3 * C + 2 * C + h * d;
#pragma omp simd
            for (std::int64_t e = 0; e < d; ++e) oi[e] += pj * vj[e];
          }
        }
      }
    }
  }
  return probs;
}

}  // namespace detail

// Softmax attention weights for inspection; same math as window_attention.
inline Tensor window_attention_probs(const Var& qkv, const Var& table,
                                     const WindowAttentionSpec& spec) {
  std::vector<double> p =
      detail::window_attention_forward(qkv.value(), table.value(), spec, nullptr);
  const std::int64_t N = qkv.dim(1);
  return Tensor(Shape{qkv.dim(0), spec.heads, N, N}, std::move(p));
}

// Multi-head attention inside each window. qkv is (BW, N, 3C) laid out as
// [q | k | v] with heads contiguous inside each part; table is
// (num_relative_positions, heads). Returns (BW, N, C).
inline Var window_attention(const Var& qkv, const Var& table,
                            WindowAttentionSpec spec) {
  require(qkv.rank() == 3 && qkv.dim(2) % 3 == 0, ErrorCode::kShapeError,
          "window_attention: qkv must be (BW, N, 3C)");
  const std::int64_t BW = qkv.dim(0), N = qkv.dim(1), C = qkv.dim(2) / 3;
  require(C % spec.heads == 0, ErrorCode::kShapeError,
          "window_attention: channels ", C, " not divisible by heads ",
          spec.heads);
  require(spec.relative_index &&
              spec.relative_index->size() == static_cast<std::size_t>(N * N),
          ErrorCode::kShapeError, "window_attention: relative index size");
  Tensor out(Shape{BW, N, C});
  auto probs = std::make_shared<std::vector<double>>(
      detail::window_attention_forward(qkv.value(), table.value(), spec, &out));
  return make_result(
      std::move(out), {qkv, table}, [spec, probs, BW, N, C](Node& self) {
        const std::int64_t heads = spec.heads, d = C / heads;
        const std::vector<std::int32_t>& rel = *spec.relative_index;
        const double* qkv_v = self.inputs[0]->value.data();
        Tensor* gqkv = detail::input_grad(self, 0);
        Tensor* gtab = detail::input_grad(self, 1);
        std::vector<double> ds(static_cast<std::size_t>(N * N));
        for (std::int64_t bw = 0; bw < BW; ++bw) {
          const double* base = qkv_v + bw * N * 3 * C;
          double* gbase = gqkv ? gqkv->data() + bw * N * 3 * C : nullptr;
          for (std::int64_t h = 0; h < heads; ++h) {
            const double* p = probs->data() + (bw * heads + h) * N * N;
            for (std::int64_t i = 0; i < N; ++i) {
              const double* doi = self.grad.data() + (bw * N + i) * C + h * d;
              double row_dot = 0.0;
              for (std::int64_t j = 0; j < N; ++j) {
                const double* vj = base + j * 3 * C + 2 * C + h * d;
                double dp = 0.0;
#pragma omp simd reduction(+ : dp)
                for (std::int64_t e = 0; e < d; ++e) dp += doi[e] * vj[e];
                ds[i * N + j] = dp;
                row_dot += dp * p[i * N + j];
                if (gbase) {
                  double* gvj = gbase + j * 3 * C + 2 * C + h * d;
                  const double pij = p[i * N + j];
#pragma omp simd
                  for (std::int64_t e = 0; e < d; ++e) gvj[e] += pij * doi[e];
                }
              }
              for (std::int64_t j = 0; j < N; ++j)
                ds[i * N + j] = p[i * N + j] * (ds[i * N + j] - row_dot);
            }
            if (gtab)
              for (std::int64_t k = 0; k < N * N; ++k)
                (*gtab)[rel[k] * heads + h] += ds[k];
            if (gbase)
              for (std::int64_t i = 0; i < N; ++i) {
                const double* qi = base + i * 3 * C + h * d;
                double* gqi = gbase + i * 3 * C + h * d;
                for (std::int64_t j = 0; j < N; ++j) {
                  const double s = spec.scale * ds[i * N + j];
                  const double* kj = base + j * 3 * C + C + h * d;
                  double* gkj = gbase + j * 3 * C + C + h * d;
#pragma omp simd
                  for (std::int64_t e = 0; e < d; ++e) {
                    gqi[e] += s * kj[e];
                    gkj[e] += s * qi[e];
                  }
                }
              }
          }
        }
      });
}

}  // namespace avr::ag
