#include <gtest/gtest.h>

#include <cmath>
#include <opencv2/imgproc.hpp>

#include "clearir/clahe.hpp"
#include "clearir/evaluation.hpp"
#include "helpers.hpp"

using namespace clearir;
using testing_util::random_image;

namespace {

double stddev(const Image& img) {
  double s = 0.0, s2 = 0.0;
  for (float v : img.pixels()) {
    s += v;
    s2 += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(img.size());
  return std::sqrt(std::max(0.0, s2 / n - (s / n) * (s / n)));
}

// Quantized smooth field with some structure, so the histograms are not flat.
Image blobs(std::uint64_t seed, int h, int w) {
  Rng rng(seed);
  const double fx = rng.uniform(0.05, 0.2), fy = rng.uniform(0.05, 0.2), ph = rng.uniform(0.0, 6.0);
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = 0.45 + 0.25 * std::sin(fx * x + ph) * std::cos(fy * y) + 0.05 * rng.normal();
      img.at(y, x) = static_cast<float>(to_u8(static_cast<float>(v))) / 255.0f;
    }
  return img;
}

// Global histogram equalization written from the rank definition.
Image plain_equalize(const Image& img) {
  std::vector<int> q(img.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = to_u8(img.pixels()[i]);
  Image out(img.height(), img.width());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto below = std::count_if(q.begin(), q.end(), [&](int v) { return v <= q[i]; });
    out.pixels()[i] = static_cast<float>(std::lround(255.0 * static_cast<double>(below) / q.size())) / 255.0f;
  }
  return out;
}

}  // namespace

TEST(Clahe, MatchesOpenCvReference) {
  for (auto [h, w] : {std::pair{64, 64}, std::pair{96, 128}, std::pair{50, 70}}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const Image img = blobs(seed, h, w);
      cv::Mat ref;
      cv::createCLAHE(2.0, {8, 8})->apply(to_mat_u8(img), ref);
      const Image mine = clahe(img, {2.0, 8, 8});
      int worst = 0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) worst = std::max(worst, std::abs(to_u8(mine.at(y, x)) - ref.at<std::uint8_t>(y, x)));
      EXPECT_LE(worst, 1) << h << "x" << w << " seed " << seed;
    }
  }
}

TEST(Clahe, HugeClipSingleTileIsPlainEqualization) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Image img = blobs(seed + 10, 40, 48);
    const Image out = clahe(img, {1e6, 1, 1});
    EXPECT_LE(max_abs_diff(out, plain_equalize(img)), 2.0f / 255.0f + 1e-6f);
  }
}

TEST(Clahe, HugeClipTileCentresUseTheirOwnTile) {
  const Image img = blobs(3, 128, 128);
  const Image out = clahe(img, {1e6, 8, 8});
  for (int ty = 0; ty < 8; ++ty)
    for (int tx = 0; tx < 8; ++tx) {
      Image tile(16, 16);
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) tile.at(y, x) = img.at(ty * 16 + y, tx * 16 + x);
      const Image eq = plain_equalize(tile);
      EXPECT_NEAR(out.at(ty * 16 + 8, tx * 16 + 8), eq.at(8, 8), 2.0 / 255.0 + 1e-6);
    }
}

TEST(Clahe, ConstantImageNearlyUnchanged) {
  for (float v : {0.1f, 0.5f, 0.8f}) {
    // 32x32 tiles; on much smaller tiles the integer clip count degenerates.
    const Image img(256, 256, v);
    const Image out = clahe(img);
    // Area 1024, clip 8: 1016 excess counts spread as 3 per bin plus one
    // extra on bins 0..247.
    const int q = to_u8(v);
    const int cdf = 3 * (q + 1) + 8 + std::min(q + 1, 248);
    const float expect = static_cast<float>(std::lround(cdf * 255.0 / 1024.0)) / 255.0f;
    for (float o : out.pixels()) ASSERT_NEAR(o, expect, 1e-6f) << v;
    EXPECT_LE(max_abs_diff(out, img), 4.0f / 255.0f) << v;
  }
}

TEST(Clahe, LowContrastRampGetsWider) {
  Image ramp(64, 96);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 96; ++x) ramp.at(y, x) = 0.45f + 0.1f * static_cast<float>(x) / 95.0f;
  const Image out = clahe_baseline(ramp);
  EXPECT_GT(stddev(out), stddev(ramp));
  for (float v : out.pixels()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Clahe, ParameterErrors) {
  const Image img = random_image(1, 20, 20);
  EXPECT_THROW(clahe(img, {2.0, 21, 4}), ParameterError);
  EXPECT_THROW(clahe(img, {2.0, 4, 21}), ParameterError);
  EXPECT_THROW(clahe(img, {2.0, 0, 4}), ParameterError);
  EXPECT_THROW(clahe(img, {-1.0, 4, 4}), ParameterError);
  EXPECT_THROW(clahe_baseline(img, 2.0, 32, 32), ParameterError);
}
