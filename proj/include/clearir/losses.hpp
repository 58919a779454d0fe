#pragma once

// The six reconstruction loss terms and their weighted total. Every term
// takes an (N,C,H,W) prediction and target, returns the batch value in
// double precision, and, when `grad` is non-null, adds scale * dL/dpred into
// it (grad must already have the prediction's shape).

#include <cmath>
#include <numbers>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "clearir/error.hpp"
#include "clearir/features.hpp"
#include "clearir/image.hpp"
#include "clearir/tensor.hpp"

namespace clearir {

struct LossWeights {
  double alpha = 0.02;   // MAE
  double beta = 1.0;     // SSIM
  double gamma = 0.25;   // Laplacian high-frequency
  double delta = 0.25;   // Sobel edges
  double epsilon = 0.4;  // perceptual
  double zeta = 0.002;   // total variation

  // SSIM dominant, perceptual next, edges moderate, MAE/TV as light
  // regularizers.
  bool has_default_ordering() const {
    return beta > epsilon && epsilon > gamma && gamma == delta && delta > alpha && alpha >= zeta;
  }

  void validate() const {
    const double w[] = {alpha, beta, gamma, delta, epsilon, zeta};
    bool any = false;
    for (double v : w) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
      any = any || v > 0.0;
    }
    if (!any) throw ConfigError("at least one loss weight must be > 0");
  }

  static LossWeights defaults() {
    LossWeights w;
    if (!w.has_default_ordering()) throw ConfigError("default loss weights violate ordering");
    return w;
  }

  static LossWeights only_mae() { return {1.0, 0.0, 0.0, 0.0, 0.0, 0.0}; }
};

inline nlohmann::json to_json(const LossWeights& w) {
  return {{"alpha", w.alpha}, {"beta", w.beta},     {"gamma", w.gamma},
          {"delta", w.delta}, {"epsilon", w.epsilon}, {"zeta", w.zeta}};
}

inline LossWeights loss_weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  try {
    w.alpha = j.value("alpha", w.alpha);
    w.beta = j.value("beta", w.beta);
    w.gamma = j.value("gamma", w.gamma);
    w.delta = j.value("delta", w.delta);
    w.epsilon = j.value("epsilon", w.epsilon);
    w.zeta = j.value("zeta", w.zeta);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad loss weights: ") + e.what());
  }
  w.validate();
  return w;
}

struct LossBreakdown {
  double mae = 0.0, ssim = 0.0, freq = 0.0, sobel = 0.0, perceptual = 0.0, tv = 0.0;
  double total = 0.0;

  double weighted(const LossWeights& w) const {
    return w.alpha * mae + w.beta * ssim + w.gamma * freq + w.delta * sobel +
           w.epsilon * perceptual + w.zeta * tv;
  }

  LossBreakdown& operator+=(const LossBreakdown& o) {
    mae += o.mae; ssim += o.ssim; freq += o.freq; sobel += o.sobel;
    perceptual += o.perceptual; tv += o.tv; total += o.total;
    return *this;
  }
  LossBreakdown& operator*=(double d) {
    mae *= d; ssim *= d; freq *= d; sobel *= d; perceptual *= d; tv *= d; total *= d;
    return *this;
  }
  LossBreakdown& operator/=(double d) {
    mae /= d; ssim /= d; freq /= d; sobel /= d; perceptual /= d; tv /= d; total /= d;
    return *this;
  }

  bool finite() const {
    for (double v : {mae, ssim, freq, sobel, perceptual, tv, total})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline nlohmann::json to_json(const LossBreakdown& b) {
  return {{"mae", b.mae},   {"ssim", b.ssim}, {"freq", b.freq},   {"sobel", b.sobel},
          {"perceptual", b.perceptual}, {"tv", b.tv}, {"total", b.total}};
}

namespace detail {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

template <typename T>
void check_grad(const Tensor<T>& pred, const Tensor<T>* grad) {
  if (grad && !grad->same_shape(pred)) throw DimensionError("gradient buffer shape mismatch");
}

template <typename T>
std::size_t plane_count(const Tensor<T>& t) {
  return static_cast<std::size_t>(t.n()) * t.c();
}

template <typename T>
const T* plane_ptr(const Tensor<T>& t, std::size_t p) {
  return t.data() + p * t.plane();
}
template <typename T>
T* plane_ptr(Tensor<T>& t, std::size_t p) {
  return t.data() + p * t.plane();
}

// Valid-region 3x3 stencil L1 loss: mean |K * (pred - gt)| over interior
// pixels, averaged over planes. K is row-major.
template <typename T>
double stencil_l1(const Tensor<T>& pred, const Tensor<T>& gt, const double (&k)[9],
                  Tensor<T>* grad, double scale) {
  const int h = pred.h(), w = pred.w();
  if (h < 3 || w < 3) throw DimensionError("3x3 stencil needs images of at least 3x3");
  const std::size_t planes = plane_count(pred);
  const double count = static_cast<double>(h - 2) * (w - 2);
  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* a = plane_ptr(pred, p);
    const T* b = plane_ptr(gt, p);
    double acc = 0.0;
    for (int i = 1; i < h - 1; ++i) {
      for (int j = 1; j < w - 1; ++j) {
        double r = 0.0;
        for (int u = -1; u <= 1; ++u)
          for (int v = -1; v <= 1; ++v) {
            const std::size_t q = static_cast<std::size_t>(i + u) * w + (j + v);
            r += k[(u + 1) * 3 + (v + 1)] * (static_cast<double>(a[q]) - b[q]);
          }
        acc += std::abs(r);
        if (grad) {
          const double g = scale * sgn(r) / (count * static_cast<double>(planes));
          if (g == 0.0) continue;
          T* d = plane_ptr(*grad, p);
          for (int u = -1; u <= 1; ++u)
            for (int v = -1; v <= 1; ++v)
              d[static_cast<std::size_t>(i + u) * w + (j + v)] += static_cast<T>(g * k[(u + 1) * 3 + (v + 1)]);
        }
      }
    }
    total += acc / count;
  }
  return total / static_cast<double>(planes);
}

}  // namespace detail

/// mean |pred - gt| over all elements.
template <typename T>
double mae_loss(const Tensor<T>& pred, const Tensor<T>& gt, Tensor<T>* grad = nullptr,
                double scale = 1.0) {
  require_same_shape(pred, gt, "mae_loss");
  detail::check_grad(pred, grad);
  const auto a = pred.values();
  const auto b = gt.values();
  const double inv = 1.0 / static_cast<double>(a.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sum += std::abs(d);
    if (grad) grad->values()[i] += static_cast<T>(scale * detail::sgn(d) * inv);
  }
  return sum * inv;
}

struct SsimWindow {
  int size = 11;
  double sigma = 1.5;
  double c1 = 1e-4;  // (0.01 * L)^2, L = 1
  double c2 = 9e-4;  // (0.03 * L)^2

  std::vector<double> kernel() const {
    std::vector<double> g(static_cast<std::size_t>(size));
    const double c = (size - 1) / 2.0;
    double s = 0.0;
    for (int i = 0; i < size; ++i) {
      g[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
      s += g[static_cast<std::size_t>(i)];
    }
    for (double& v : g) v /= s;
    return g;
  }
};

namespace detail {

// Valid separable correlation: (h x w) -> (h-k+1 x w-k+1).
inline void filter_valid(const std::vector<double>& src, int h, int w,
                         const std::vector<double>& g, std::vector<double>& tmp,
                         std::vector<double>& out) {
  const int k = static_cast<int>(g.size());
  const int oh = h - k + 1, ow = w - k + 1;
  tmp.assign(static_cast<std::size_t>(h) * ow, 0.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < ow; ++j) {
      double s = 0.0;
      const double* row = src.data() + static_cast<std::size_t>(i) * w + j;
      for (int t = 0; t < k; ++t) s += g[static_cast<std::size_t>(t)] * row[t];
      tmp[static_cast<std::size_t>(i) * ow + j] = s;
    }
  out.assign(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int i = 0; i < oh; ++i)
    for (int t = 0; t < k; ++t) {
      const double gt = g[static_cast<std::size_t>(t)];
      const double* row = tmp.data() + static_cast<std::size_t>(i + t) * ow;
      double* o = out.data() + static_cast<std::size_t>(i) * ow;
      for (int j = 0; j < ow; ++j) o[j] += gt * row[j];
    }
}

// Adjoint of filter_valid: (oh x ow) -> (h x w).
inline void filter_valid_adjoint(const std::vector<double>& src, int h, int w,
                                 const std::vector<double>& g, std::vector<double>& tmp,
                                 std::vector<double>& out) {
  const int k = static_cast<int>(g.size());
  const int oh = h - k + 1, ow = w - k + 1;
  tmp.assign(static_cast<std::size_t>(h) * ow, 0.0);
  for (int i = 0; i < oh; ++i)
    for (int t = 0; t < k; ++t) {
      const double gt = g[static_cast<std::size_t>(t)];
      const double* s = src.data() + static_cast<std::size_t>(i) * ow;
      double* row = tmp.data() + static_cast<std::size_t>(i + t) * ow;
      for (int j = 0; j < ow; ++j) row[j] += gt * s[j];
    }
  out.assign(static_cast<std::size_t>(h) * w, 0.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < ow; ++j) {
      const double v = tmp[static_cast<std::size_t>(i) * ow + j];
      double* row = out.data() + static_cast<std::size_t>(i) * w + j;
      for (int t = 0; t < k; ++t) row[t] += g[static_cast<std::size_t>(t)] * v;
    }
}

}  // namespace detail

/// Mean structural similarity (Gaussian window, valid region), averaged over
/// planes. With `grad`, adds scale * d(SSIM)/d(a).
template <typename T>
double ssim_index(const Tensor<T>& a, const Tensor<T>& b, const SsimWindow& win = {},
                  Tensor<T>* grad = nullptr, double scale = 1.0) {
  require_same_shape(a, b, "ssim_index");
  detail::check_grad(a, grad);
  const int h = a.h(), w = a.w(), k = win.size;
  if (h < k || w < k) {
    throw DimensionError("ssim_index: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " smaller than " + std::to_string(k) + "x" + std::to_string(k) + " window");
  }
  const int oh = h - k + 1, ow = w - k + 1;
  const std::size_t n = static_cast<std::size_t>(h) * w, m = static_cast<std::size_t>(oh) * ow;
  const std::vector<double> g = win.kernel();
  const std::size_t planes = detail::plane_count(a);

  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n), tmp;
  std::vector<double> mx, my, mxx, myy, mxy;
  std::vector<double> da, db, dc, ga, gb, gc;
  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* pa = detail::plane_ptr(a, p);
    const T* pb = detail::plane_ptr(b, p);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = pa[i];
      y[i] = pb[i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    detail::filter_valid(x, h, w, g, tmp, mx);
    detail::filter_valid(y, h, w, g, tmp, my);
    detail::filter_valid(xx, h, w, g, tmp, mxx);
    detail::filter_valid(yy, h, w, g, tmp, myy);
    detail::filter_valid(xy, h, w, g, tmp, mxy);

    if (grad) {
      da.assign(m, 0.0);
      db.assign(m, 0.0);
      dc.assign(m, 0.0);
    }
    double acc = 0.0;
    const double coef = scale / (static_cast<double>(m) * static_cast<double>(planes));
    for (std::size_t i = 0; i < m; ++i) {
      const double ux = mx[i], uy = my[i];
      const double sxx = mxx[i] - ux * ux, syy = myy[i] - uy * uy, sxy = mxy[i] - ux * uy;
      const double a1 = 2.0 * ux * uy + win.c1, a2 = 2.0 * sxy + win.c2;
      const double b1 = ux * ux + uy * uy + win.c1, b2 = sxx + syy + win.c2;
      const double s = (a1 * a2) / (b1 * b2);
      acc += s;
      if (grad) {
        // Partials w.r.t. the filtered raw moments mu_x, E[x^2], E[xy].
        const double d_mu = (2.0 * uy * a2 - 2.0 * uy * a1) / (b1 * b2) -
                            s * (2.0 * ux / b1 - 2.0 * ux / b2);
        const double d_xx = -s / b2;
        const double d_xy = 2.0 * a1 / (b1 * b2);
        da[i] = coef * d_mu;
        db[i] = coef * d_xx;
        dc[i] = coef * d_xy;
      }
    }
    total += acc / static_cast<double>(m);
    if (grad) {
      detail::filter_valid_adjoint(da, h, w, g, tmp, ga);
      detail::filter_valid_adjoint(db, h, w, g, tmp, gb);
      detail::filter_valid_adjoint(dc, h, w, g, tmp, gc);
      T* d = detail::plane_ptr(*grad, p);
      for (std::size_t i = 0; i < n; ++i) d[i] += static_cast<T>(ga[i] + 2.0 * x[i] * gb[i] + y[i] * gc[i]);
    }
  }
  return total / static_cast<double>(planes);
}

inline double ssim_index(const Image& a, const Image& b, const SsimWindow& win = {}) {
  require_same_shape(a, b, "ssim_index");
  return ssim_index(to_batch<double>(a), to_batch<double>(b), win);
}

template <typename T>
double ssim_loss(const Tensor<T>& pred, const Tensor<T>& gt, const SsimWindow& win = {},
                 Tensor<T>* grad = nullptr, double scale = 1.0) {
  return 1.0 - ssim_index(pred, gt, win, grad, -scale);
}

/// mean |Laplacian * (pred - gt)| on the valid interior.
template <typename T>
double high_freq_loss(const Tensor<T>& pred, const Tensor<T>& gt, Tensor<T>* grad = nullptr,
                      double scale = 1.0) {
  require_same_shape(pred, gt, "high_freq_loss");
  detail::check_grad(pred, grad);
  static constexpr double lap[9] = {0, 1, 0, 1, -4, 1, 0, 1, 0};
  return detail::stencil_l1(pred, gt, lap, grad, scale);
}

/// mean |Gx pred - Gx gt| + mean |Gy pred - Gy gt| with 3x3 Sobel kernels.
template <typename T>
double sobel_loss(const Tensor<T>& pred, const Tensor<T>& gt, Tensor<T>* grad = nullptr,
                  double scale = 1.0) {
  require_same_shape(pred, gt, "sobel_loss");
  detail::check_grad(pred, grad);
  static constexpr double gx[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  static constexpr double gy[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  return detail::stencil_l1(pred, gt, gx, grad, scale) + detail::stencil_l1(pred, gt, gy, grad, scale);
}

/// Squared forward differences of pred in x and y, divided by the pixel
/// count, averaged over planes. Depends on the prediction only.
template <typename T>
double tv_loss(const Tensor<T>& pred, Tensor<T>* grad = nullptr, double scale = 1.0) {
  detail::check_grad(pred, grad);
  const int h = pred.h(), w = pred.w();
  const std::size_t planes = detail::plane_count(pred);
  const double n = static_cast<double>(h) * w;
  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* a = detail::plane_ptr(pred, p);
    T* d = grad ? detail::plane_ptr(*grad, p) : nullptr;
    const double g = scale * 2.0 / (n * static_cast<double>(planes));
    double acc = 0.0;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const std::size_t q = static_cast<std::size_t>(i) * w + j;
        if (j + 1 < w) {
          const double dx = static_cast<double>(a[q + 1]) - a[q];
          acc += dx * dx;
          if (d) {
            d[q + 1] += static_cast<T>(g * dx);
            d[q] -= static_cast<T>(g * dx);
          }
        }
        if (i + 1 < h) {
          const double dy = static_cast<double>(a[q + static_cast<std::size_t>(w)]) - a[q];
          acc += dy * dy;
          if (d) {
            d[q + static_cast<std::size_t>(w)] += static_cast<T>(g * dy);
            d[q] -= static_cast<T>(g * dy);
          }
        }
      }
    total += acc / n;
  }
  return total / static_cast<double>(planes);
}

/// Sum over extractor layers of the mean L1 feature distance.
template <typename T>
double perceptual_loss(const Tensor<T>& pred, const Tensor<T>& gt,
                       const std::type_identity_t<FeatureExtractor<T>>& fx,
                       std::type_identity_t<Tensor<T>>* grad = nullptr, double scale = 1.0) {
  require_same_shape(pred, gt, "perceptual_loss");
  detail::check_grad(pred, grad);
  if (!fx.initialized()) throw StateError("perceptual_loss: feature extractor not initialized");
  if (pred.c() != 1) throw DimensionError("perceptual_loss expects single-channel inputs");
  FeatureTrace<T> trace;
  const auto fp = fx.extract(pred, grad ? &trace : nullptr);
  const auto fg = fx.extract(gt, nullptr);
  double total = 0.0;
  std::vector<Tensor<T>> fgrads;
  for (std::size_t j = 0; j < fp.size(); ++j) {
    const auto a = fp[j].values();
    const auto b = fg[j].values();
    const double inv = 1.0 / static_cast<double>(a.size());
    double acc = 0.0;
    Tensor<T> gj;
    if (grad) gj = Tensor<T>(fp[j].n(), fp[j].c(), fp[j].h(), fp[j].w());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      acc += std::abs(d);
      if (grad) gj.values()[i] = static_cast<T>(scale * detail::sgn(d) * inv);
    }
    total += acc * inv;
    if (grad) fgrads.push_back(std::move(gj));
  }
  if (grad) {
    const Tensor<T> dg = fx.backward(trace, fgrads);
    auto out = grad->values();
    const auto in = dg.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
  }
  return total;
}

/// Weighted composite. Terms with zero weight are still evaluated and
/// reported but contribute no gradient. `fx` may be null only when
/// epsilon == 0, in which case the perceptual term is reported as 0.
template <typename T>
LossBreakdown total_loss(const Tensor<T>& pred, const Tensor<T>& gt, const LossWeights& w,
                         const std::type_identity_t<FeatureExtractor<T>>* fx,
                         std::type_identity_t<Tensor<T>>* grad = nullptr,
                         const SsimWindow& win = {}) {
  require_same_shape(pred, gt, "total_loss");
  detail::check_grad(pred, grad);
  auto g = [&](double weight) { return weight > 0.0 ? grad : nullptr; };
  LossBreakdown b;
  b.mae = mae_loss(pred, gt, g(w.alpha), w.alpha);
  b.ssim = ssim_loss(pred, gt, win, g(w.beta), w.beta);
  b.freq = high_freq_loss(pred, gt, g(w.gamma), w.gamma);
  b.sobel = sobel_loss(pred, gt, g(w.delta), w.delta);
  if (fx) {
    b.perceptual = perceptual_loss(pred, gt, *fx, g(w.epsilon), w.epsilon);
  } else if (w.epsilon > 0.0) {
    throw StateError("total_loss: perceptual weight set but no feature extractor supplied");
  }
  b.tv = tv_loss(pred, g(w.zeta), w.zeta);
  b.total = b.weighted(w);
  return b;
}

}  // namespace clearir
