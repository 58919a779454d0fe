#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "clearir/image.hpp"
#include "clearir/rng.hpp"
#include "clearir/tensor.hpp"

namespace testing_util {

inline clearir::Tensor<double> random_tensor(std::uint64_t seed, int n, int c, int h, int w,
                                             double lo = 0.05, double hi = 0.95) {
  clearir::Rng rng(seed);
  clearir::Tensor<double> t(n, c, h, w);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline clearir::Image random_image(std::uint64_t seed, int h, int w) {
  clearir::Rng rng(seed);
  clearir::Image img(h, w);
  for (float& v : img.pixels()) v = static_cast<float>(rng.uniform());
  return img;
}

// Largest relative error between an analytic gradient and central
// differences of f, normalized by the larger gradient norm.
inline double gradient_rel_error(const std::function<double(const clearir::Tensor<double>&)>& f,
                                 const clearir::Tensor<double>& x, const clearir::Tensor<double>& analytic,
                                 double step = 1e-6) {
  clearir::Tensor<double> probe = x;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + step;
    const double up = f(probe);
    probe.values()[i] = orig - step;
    const double down = f(probe);
    probe.values()[i] = orig;
    const double num = (up - down) / (2.0 * step);
    const double ana = analytic.values()[i];
    diff2 += (num - ana) * (num - ana);
    a2 += ana * ana;
    n2 += num * num;
  }
  const double denom = std::max(std::sqrt(std::max(a2, n2)), 1e-12);
  return std::sqrt(diff2) / denom;
}

// Direct sliding-window SSIM with an explicit 2-D Gaussian and centred
// second moments.
inline double ssim_oracle(const clearir::Tensor<double>& a, const clearir::Tensor<double>& b, int k = 11, double sigma = 1.5) {
  const double c1 = 1e-4, c2 = 9e-4;
  std::vector<double> win(static_cast<std::size_t>(k * k));
  double s = 0.0;
  const int r = k / 2;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double v = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2 * sigma * sigma));
      win[static_cast<std::size_t>(i * k + j)] = v;
      s += v;
    }
  for (double& v : win) v /= s;
  double total = 0.0;
  int count = 0;
  for (int y = 0; y + k <= a.h(); ++y)
    for (int x = 0; x + k <= a.w(); ++x) {
      double mx = 0, my = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const double wv = win[static_cast<std::size_t>(i * k + j)];
          mx += wv * a(0, 0, y + i, x + j);
          my += wv * b(0, 0, y + i, x + j);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const double wv = win[static_cast<std::size_t>(i * k + j)];
          const double dx = a(0, 0, y + i, x + j) - mx, dy = b(0, 0, y + i, x + j) - my;
          vx += wv * dx * dx;
          vy += wv * dy * dy;
          cxy += wv * dx * dy;
        }
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("clearir_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_util
