#pragma once

// Stateless layer primitives with explicit backward passes. Every function
// is a pure map from its arguments; anything the backward pass needs is
// returned to the caller in a cache object.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "clearir/error.hpp"
#include "clearir/tensor.hpp"

namespace clearir::nn {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using StridedMapR = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMapR = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer elements; larger images are processed in
// row bands.
inline constexpr std::size_t kColumnBudget = std::size_t{1} << 16;

namespace detail {

template <typename T>
void im2col_rows(const T* x, int channels, int h, int w, int k, int r0, int r1, T* col) {
  const int pad = k / 2;
  const std::size_t p = static_cast<std::size_t>(r1 - r0) * w;
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + static_cast<std::size_t>((c * k + ky) * k + kx) * p;
        const int xlo = std::max(0, pad - kx), xhi = std::min(w, w + pad - kx);
        for (int y = r0; y < r1; ++y) {
          T* d = dst + static_cast<std::size_t>(y - r0) * w;
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= h || xlo >= xhi) {
            std::fill(d, d + w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * w + (kx - pad);
          std::fill(d, d + xlo, T(0));
          std::copy(src + xlo, src + xhi, d + xlo);
          std::fill(d + xhi, d + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_rows(const T* col, int channels, int h, int w, int k, int r0, int r1, T* dx) {
  const int pad = k / 2;
  const std::size_t p = static_cast<std::size_t>(r1 - r0) * w;
  for (int c = 0; c < channels; ++c) {
    T* dc = dx + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + static_cast<std::size_t>((c * k + ky) * k + kx) * p;
        const int xlo = std::max(0, pad - kx), xhi = std::min(w, w + pad - kx);
        for (int y = r0; y < r1; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const T* s = src + static_cast<std::size_t>(y - r0) * w;
          T* d = dc + static_cast<std::size_t>(iy) * w + (kx - pad);
          for (int x = xlo; x < xhi; ++x) d[x] += s[x];
        }
      }
    }
  }
}

// Sum over [0, n) in a fixed 16-lane order, so the result does not depend
// on buffer alignment.
template <typename T, typename F>
double lane_sum(std::size_t n, F term) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += term(i + l);
  double s = 0.0;
  for (std::size_t l = 0; l < kLanes; ++l) s += static_cast<double>(acc[l]);
  for (; i < n; ++i) s += static_cast<double>(term(i));
  return s;
}

inline int band_rows(int cin, int k, int h, int w) {
  const std::size_t per_row = static_cast<std::size_t>(cin) * k * k * w;
  return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_row, 1), 1,
                                                  static_cast<std::size_t>(h)));
}

}  // namespace detail

/// Stride-1 "same" convolution with an odd k x k kernel.
/// weight: [cout][cin][k][k]; bias may be empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int cout,
                 int k) {
  const int cin = x.c(), h = x.h(), w = x.w();
  const int kk = cin * k * k;
  if (weight.size() != static_cast<std::size_t>(cout) * kk) {
    throw DimensionError("conv2d: weight size does not match input channels");
  }
  Tensor<T> y(x.n(), cout, h, w);
  CMapR<T> wm(weight.data(), cout, kk);
  const int band = detail::band_rows(cin, k, h, w);
  std::vector<T> col;
  for (int n = 0; n < x.n(); ++n) {
    for (int r0 = 0; r0 < h; r0 += band) {
      const int r1 = std::min(h, r0 + band);
      const int p = (r1 - r0) * w;
      StridedMapR<T> ym(y.sample(n) + static_cast<std::size_t>(r0) * w, cout, p,
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(h) * w));
      if (k == 1) {
        CStridedMapR<T> xm(x.sample(n) + static_cast<std::size_t>(r0) * w, cin, p,
                           Eigen::OuterStride<>(static_cast<Eigen::Index>(h) * w));
        ym.noalias() = wm * xm;
      } else {
        col.resize(static_cast<std::size_t>(kk) * p);
        detail::im2col_rows(x.sample(n), cin, h, w, k, r0, r1, col.data());
        ym.noalias() = wm * CMapR<T>(col.data(), kk, p);
      }
      if (!bias.empty()) ym.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.data(), cout);
    }
  }
  return y;
}

/// Accumulates into dweight/dbias; returns dx when want_dx.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& x, std::span<const T> weight, int cout, int k,
                          const Tensor<T>& dy, std::span<T> dweight, std::span<T> dbias,
                          bool want_dx = true) {
  const int cin = x.c(), h = x.h(), w = x.w();
  const int kk = cin * k * k;
  CMapR<T> wm(weight.data(), cout, kk);
  MapR<T> dwm(dweight.data(), cout, kk);
  Tensor<T> dx;
  if (want_dx) dx = Tensor<T>(x.n(), cin, h, w);
  const int band = detail::band_rows(cin, k, h, w);
  std::vector<T> col, dcol;
  for (int n = 0; n < x.n(); ++n) {
    for (int r0 = 0; r0 < h; r0 += band) {
      const int r1 = std::min(h, r0 + band);
      const int p = (r1 - r0) * w;
      const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(h) * w);
      CStridedMapR<T> dym(dy.sample(n) + static_cast<std::size_t>(r0) * w, cout, p, stride);
      if (!dbias.empty()) {
        for (int o = 0; o < cout; ++o) {
          const T* row = dy.channel(n, o) + static_cast<std::size_t>(r0) * w;
          dbias[static_cast<std::size_t>(o)] +=
              static_cast<T>(detail::lane_sum<T>(static_cast<std::size_t>(p), [row](std::size_t i) { return row[i]; }));
        }
      }
      if (k == 1) {
        CStridedMapR<T> xm(x.sample(n) + static_cast<std::size_t>(r0) * w, cin, p, stride);
        dwm.noalias() += dym * xm.transpose();
        if (want_dx) {
          StridedMapR<T> dxm(dx.sample(n) + static_cast<std::size_t>(r0) * w, cin, p, stride);
          dxm.noalias() = wm.transpose() * dym;
        }
        continue;
      }
      col.resize(static_cast<std::size_t>(kk) * p);
      detail::im2col_rows(x.sample(n), cin, h, w, k, r0, r1, col.data());
      dwm.noalias() += dym * CMapR<T>(col.data(), kk, p).transpose();
      if (want_dx) {
        dcol.resize(col.size());
        MapR<T>(dcol.data(), kk, p).noalias() = wm.transpose() * dym;
        detail::col2im_rows(dcol.data(), cin, h, w, k, r0, r1, dx.sample(n));
      }
    }
  }
  return dx;
}

/// 2x2 stride-2 transposed convolution. weight: [cout][2][2][cin].
template <typename T>
Tensor<T> conv_transpose2x2(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                            int cout) {
  const int cin = x.c(), h = x.h(), w = x.w();
  const int p = h * w;
  if (weight.size() != static_cast<std::size_t>(cout) * 4 * cin) {
    throw DimensionError("conv_transpose2x2: weight size mismatch");
  }
  Tensor<T> y(x.n(), cout, 2 * h, 2 * w);
  CMapR<T> wm(weight.data(), cout * 4, cin);
  MatR<T> z(cout * 4, p);
  for (int n = 0; n < x.n(); ++n) {
    z.noalias() = wm * CMapR<T>(x.sample(n), cin, p);
    for (int co = 0; co < cout; ++co) {
      T* yc = y.channel(n, co);
      const T b = bias.empty() ? T(0) : bias[static_cast<std::size_t>(co)];
      for (int a = 0; a < 2; ++a)
        for (int bb = 0; bb < 2; ++bb) {
          const T* zr = z.data() + static_cast<std::size_t>(co * 4 + a * 2 + bb) * p;
          for (int i = 0; i < h; ++i) {
            T* row = yc + static_cast<std::size_t>(2 * i + a) * (2 * w) + bb;
            const T* zi = zr + static_cast<std::size_t>(i) * w;
            for (int j = 0; j < w; ++j) row[2 * j] = zi[j] + b;
          }
        }
    }
  }
  return y;
}

template <typename T>
Tensor<T> conv_transpose2x2_backward(const Tensor<T>& x, std::span<const T> weight, int cout,
                                     const Tensor<T>& dy, std::span<T> dweight, std::span<T> dbias) {
  const int cin = x.c(), h = x.h(), w = x.w();
  const int p = h * w;
  CMapR<T> wm(weight.data(), cout * 4, cin);
  MapR<T> dwm(dweight.data(), cout * 4, cin);
  Tensor<T> dx(x.n(), cin, h, w);
  MatR<T> dz(cout * 4, p);
  for (int n = 0; n < x.n(); ++n) {
    for (int co = 0; co < cout; ++co) {
      const T* dyc = dy.channel(n, co);
      T bsum = 0;
      for (int a = 0; a < 2; ++a)
        for (int bb = 0; bb < 2; ++bb) {
          T* zr = dz.data() + static_cast<std::size_t>(co * 4 + a * 2 + bb) * p;
          for (int i = 0; i < h; ++i) {
            const T* row = dyc + static_cast<std::size_t>(2 * i + a) * (2 * w) + bb;
            T* zi = zr + static_cast<std::size_t>(i) * w;
            for (int j = 0; j < w; ++j) {
              zi[j] = row[2 * j];
              bsum += row[2 * j];
            }
          }
        }
      if (!dbias.empty()) dbias[static_cast<std::size_t>(co)] += bsum;
    }
    CMapR<T> xm(x.sample(n), cin, p);
    dwm.noalias() += dz * xm.transpose();
    MapR<T>(dx.sample(n), cin, p).noalias() = wm.transpose() * dz;
  }
  return dx;
}

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

/// Normalizes each channel over (N, H, W) with batch statistics and updates
/// the running estimates (unbiased variance).
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                          std::span<T> running_mean, std::span<T> running_var, T momentum, T eps,
                          BatchNormCache<T>& cache) {
  const int c = x.c();
  const std::size_t plane = x.plane();
  const std::size_t m = plane * static_cast<std::size_t>(x.n());
  Tensor<T> y(x.n(), c, x.h(), x.w());
  cache.xhat = Tensor<T>(x.n(), c, x.h(), x.w());
  cache.inv_std.assign(static_cast<std::size_t>(c), T(0));
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.channel(n, ch);
      sum += detail::lane_sum<T>(plane, [p](std::size_t i) { return p[i]; });
    }
    const double mean = sum / static_cast<double>(m);
    double sq = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.channel(n, ch);
      const T mu = static_cast<T>(mean);
      sq += detail::lane_sum<T>(plane, [p, mu](std::size_t i) { return (p[i] - mu) * (p[i] - mu); });
    }
    const double var = sq / static_cast<double>(m);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + eps));
    const auto uc = static_cast<std::size_t>(ch);
    cache.inv_std[uc] = inv;
    const T tm = static_cast<T>(mean);
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.channel(n, ch);
      T* xh = cache.xhat.channel(n, ch);
      T* out = y.channel(n, ch);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - tm) * inv;
        out[i] = gamma[uc] * xh[i] + beta[uc];
      }
    }
    const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
    running_mean[uc] = static_cast<T>((1.0 - momentum) * running_mean[uc] + momentum * mean);
    running_var[uc] = static_cast<T>((1.0 - momentum) * running_var[uc] + momentum * unbiased);
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                         std::span<const T> running_mean, std::span<const T> running_var, T eps) {
  Tensor<T> y(x.n(), x.c(), x.h(), x.w());
  for (int ch = 0; ch < x.c(); ++ch) {
    const auto uc = static_cast<std::size_t>(ch);
    const T scale = gamma[uc] / std::sqrt(running_var[uc] + eps);
    const T shift = beta[uc] - running_mean[uc] * scale;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.channel(n, ch);
      T* out = y.channel(n, ch);
      for (std::size_t i = 0; i < x.plane(); ++i) out[i] = p[i] * scale + shift;
    }
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& dy, std::span<const T> gamma,
                             const BatchNormCache<T>& cache, std::span<T> dgamma,
                             std::span<T> dbeta) {
  const std::size_t plane = dy.plane();
  const double m = static_cast<double>(plane) * dy.n();
  Tensor<T> dx(dy.n(), dy.c(), dy.h(), dy.w());
  for (int ch = 0; ch < dy.c(); ++ch) {
    const auto uc = static_cast<std::size_t>(ch);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < dy.n(); ++n) {
      const T* g = dy.channel(n, ch);
      const T* xh = cache.xhat.channel(n, ch);
      sum_dy += detail::lane_sum<T>(plane, [g](std::size_t i) { return g[i]; });
      sum_dy_xhat += detail::lane_sum<T>(plane, [g, xh](std::size_t i) { return g[i] * xh[i]; });
    }
    dgamma[uc] += static_cast<T>(sum_dy_xhat);
    dbeta[uc] += static_cast<T>(sum_dy);
    const T k = gamma[uc] * cache.inv_std[uc];
    const T mean_dy = static_cast<T>(sum_dy / m), mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
    for (int n = 0; n < dy.n(); ++n) {
      const T* g = dy.channel(n, ch);
      const T* xh = cache.xhat.channel(n, ch);
      T* out = dx.channel(n, ch);
      for (std::size_t i = 0; i < plane; ++i) out[i] = k * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
    }
  }
  return dx;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (T& v : x.values()) v = v > T(0) ? v : T(0);
}

// dy masked by the forward output.
template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy) {
  const auto yv = y.values();
  auto dv = dy.values();
  for (std::size_t i = 0; i < dv.size(); ++i)
    if (!(yv[i] > T(0))) dv[i] = T(0);
}

/// 2x2 max-pool; records the winning position (0..3) of each window.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x, std::vector<std::uint8_t>& argmax) {
  if (x.h() % 2 || x.w() % 2) throw DimensionError("maxpool2 needs even dimensions");
  const int oh = x.h() / 2, ow = x.w() / 2;
  Tensor<T> y(x.n(), x.c(), oh, ow);
  argmax.resize(y.size());
  std::size_t idx = 0;
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.channel(n, c);
      T* out = y.channel(n, c);
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j, ++idx) {
          const T* r0 = p + static_cast<std::size_t>(2 * i) * x.w() + 2 * j;
          const T* r1 = r0 + x.w();
          T best = r0[0];
          std::uint8_t arg = 0;
          if (r0[1] > best) { best = r0[1]; arg = 1; }
          if (r1[0] > best) { best = r1[0]; arg = 2; }
          if (r1[1] > best) { best = r1[1]; arg = 3; }
          out[static_cast<std::size_t>(i) * ow + j] = best;
          argmax[idx] = arg;
        }
    }
  return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<std::uint8_t>& argmax) {
  const int oh = dy.h(), ow = dy.w();
  Tensor<T> dx(dy.n(), dy.c(), 2 * oh, 2 * ow);
  std::size_t idx = 0;
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c) {
      const T* g = dy.channel(n, c);
      T* out = dx.channel(n, c);
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j, ++idx) {
          const int a = argmax[idx];
          out[static_cast<std::size_t>(2 * i + a / 2) * (2 * ow) + 2 * j + a % 2] +=
              g[static_cast<std::size_t>(i) * ow + j];
        }
    }
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw DimensionError("concat_channels: spatial/batch mismatch");
  }
  Tensor<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int n = 0; n < a.n(); ++n) {
    std::copy(a.sample(n), a.sample(n) + a.c() * a.plane(), y.sample(n));
    std::copy(b.sample(n), b.sample(n) + b.c() * b.plane(), y.sample(n) + a.c() * a.plane());
  }
  return y;
}

template <typename T>
void split_channels(const Tensor<T>& y, int ca, Tensor<T>& a, Tensor<T>& b) {
  const int cb = y.c() - ca;
  a = Tensor<T>(y.n(), ca, y.h(), y.w());
  b = Tensor<T>(y.n(), cb, y.h(), y.w());
  for (int n = 0; n < y.n(); ++n) {
    std::copy(y.sample(n), y.sample(n) + ca * y.plane(), a.sample(n));
    std::copy(y.sample(n) + ca * y.plane(), y.sample(n) + y.c() * y.plane(), b.sample(n));
  }
}

template <typename T>
void sigmoid_inplace(Tensor<T>& x) {
  for (T& v : x.values()) v = T(1) / (T(1) + std::exp(-v));
}

}  // namespace clearir::nn
