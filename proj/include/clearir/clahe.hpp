#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "clearir/error.hpp"
#include "clearir/image.hpp"
#include "clearir/io.hpp"

namespace clearir {

struct ClaheParams {
  double clip_limit = 2.0;
  int tiles_x = 8;
  int tiles_y = 8;
};

namespace detail {

// Reflect-101 index into [0, n).
inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

}  // namespace detail

/// Contrast-limited adaptive histogram equalization on the 8-bit
/// quantization of `img`, with bilinear interpolation between tile lookup
/// tables. Images whose size is not a multiple of the tile grid are
/// extended by reflection for the histograms.
inline Image clahe(const Image& img, const ClaheParams& p = {}) {
  if (p.tiles_x < 1 || p.tiles_y < 1) throw ParameterError("clahe needs at least one tile");
  if (p.tiles_x > img.width() || p.tiles_y > img.height()) {
    throw ParameterError("clahe tile grid larger than the image");
  }
  if (!(p.clip_limit >= 0.0) || !std::isfinite(p.clip_limit)) throw ParameterError("clip limit must be >= 0");
  constexpr int kBins = 256;
  const int h = img.height(), w = img.width();
  std::vector<std::uint8_t> src(img.size());
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = to_u8(img.pixels()[i]);

  const int tw = (w + p.tiles_x - 1) / p.tiles_x;
  const int th = (h + p.tiles_y - 1) / p.tiles_y;
  const int area = tw * th;
  const bool padded = tw * p.tiles_x != w || th * p.tiles_y != h;

  int clip = 0;
  if (p.clip_limit > 0.0) clip = std::max(static_cast<int>(p.clip_limit * area / kBins), 1);

  std::vector<std::array<std::uint8_t, kBins>> luts(static_cast<std::size_t>(p.tiles_x * p.tiles_y));
  const float lut_scale = 255.0f / static_cast<float>(area);
  for (int ty = 0; ty < p.tiles_y; ++ty)
    for (int tx = 0; tx < p.tiles_x; ++tx) {
      std::array<int, kBins> hist{};
      for (int y = ty * th; y < (ty + 1) * th; ++y)
        for (int x = tx * tw; x < (tx + 1) * tw; ++x) {
          const int sy = padded ? detail::reflect101(y, h) : y;
          const int sx = padded ? detail::reflect101(x, w) : x;
          ++hist[src[static_cast<std::size_t>(sy) * w + sx]];
        }
      if (clip > 0) {
        int clipped = 0;
        for (int& c : hist)
          if (c > clip) {
            clipped += c - clip;
            c = clip;
          }
        const int batch = clipped / kBins;
        int residual = clipped - batch * kBins;
        for (int& c : hist) c += batch;
        if (residual != 0) {
          const int step = std::max(kBins / residual, 1);
          for (int i = 0; i < kBins && residual > 0; i += step, --residual) ++hist[i];
        }
      }
      auto& lut = luts[static_cast<std::size_t>(ty * p.tiles_x + tx)];
      int sum = 0;
      for (int i = 0; i < kBins; ++i) {
        sum += hist[i];
        lut[i] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(sum * lut_scale), 0, 255));
      }
    }

  Image out(h, w);
  const float inv_tw = 1.0f / static_cast<float>(tw), inv_th = 1.0f / static_cast<float>(th);
  for (int y = 0; y < h; ++y) {
    const float tyf = static_cast<float>(y) * inv_th - 0.5f;
    int ty1 = static_cast<int>(std::floor(tyf));
    const float ya = tyf - static_cast<float>(ty1);
    const int ty2 = std::min(ty1 + 1, p.tiles_y - 1);
    ty1 = std::max(ty1, 0);
    for (int x = 0; x < w; ++x) {
      const float txf = static_cast<float>(x) * inv_tw - 0.5f;
      int tx1 = static_cast<int>(std::floor(txf));
      const float xa = txf - static_cast<float>(tx1);
      const int tx2 = std::min(tx1 + 1, p.tiles_x - 1);
      tx1 = std::max(tx1, 0);
      const std::uint8_t v = src[static_cast<std::size_t>(y) * w + x];
      auto at = [&](int ty, int tx) {
        return static_cast<float>(luts[static_cast<std::size_t>(ty * p.tiles_x + tx)][v]);
      };
      const float r = (at(ty1, tx1) * (1.0f - xa) + at(ty1, tx2) * xa) * (1.0f - ya) +
                      (at(ty2, tx1) * (1.0f - xa) + at(ty2, tx2) * xa) * ya;
      out.at(y, x) = static_cast<float>(std::clamp<long>(std::lround(r), 0, 255)) / 255.0f;
    }
  }
  return out;
}

}  // namespace clearir
