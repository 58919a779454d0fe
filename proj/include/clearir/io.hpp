#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "clearir/error.hpp"
#include "clearir/image.hpp"

namespace clearir {

namespace fs = std::filesystem;

// 8/16-bit single channel or BGR(A) raster -> Image in [0,1]. Colour inputs
// are reduced with the unweighted mean of the three colour channels.
inline Image from_mat(const cv::Mat& mat) {
  if (mat.empty() || mat.rows == 0 || mat.cols == 0) {
    throw DimensionError("zero-sized image");
  }
  double scale = 0.0;
  switch (mat.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw DecodeError("unsupported pixel depth (need 8 or 16 bit)");
  }
  const int ch = mat.channels();
  if (ch != 1 && ch != 3 && ch != 4) {
    throw DecodeError("unsupported channel count " + std::to_string(ch));
  }
  Image img(mat.rows, mat.cols);
  for (int y = 0; y < mat.rows; ++y) {
    for (int x = 0; x < mat.cols; ++x) {
      double v = 0.0;
      if (mat.depth() == CV_8U) {
        const auto* row = mat.ptr<std::uint8_t>(y) + static_cast<std::ptrdiff_t>(x) * ch;
        v = ch == 1 ? row[0] : (static_cast<double>(row[0]) + row[1] + row[2]) / 3.0;
      } else {
        const auto* row = mat.ptr<std::uint16_t>(y) + static_cast<std::ptrdiff_t>(x) * ch;
        v = ch == 1 ? row[0] : (static_cast<double>(row[0]) + row[1] + row[2]) / 3.0;
      }
      img.at(y, x) = static_cast<float>(v * scale);
    }
  }
  return img;
}

inline std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline cv::Mat to_mat_u8(const Image& img) {
  cv::Mat mat(img.height(), img.width(), CV_8UC1);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width(); ++x) row[x] = to_u8(img.at(y, x));
  }
  return mat;
}

inline Image load_image(const fs::path& path) {
  if (!fs::is_regular_file(path)) {
    throw DecodeError("cannot read image '" + path.string() + "': no such file");
  }
  cv::Mat mat;
  try {
    mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH);
  } catch (const cv::Exception& e) {
    throw DecodeError("cannot decode '" + path.string() + "': " + e.what());
  }
  if (mat.data == nullptr) {
    throw DecodeError("cannot decode '" + path.string() + "'");
  }
  return from_mat(mat);
}

inline void save_image(const Image& img, const fs::path& path) {
  img.validate();
  const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) {
    throw IoError("cannot write '" + path.string() + "': parent directory missing");
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), to_mat_u8(img),
                     {cv::IMWRITE_PNG_COMPRESSION, 6, cv::IMWRITE_PNG_STRATEGY,
                      cv::IMWRITE_PNG_STRATEGY_DEFAULT});
  } catch (const cv::Exception& e) {
    throw IoError("cannot write '" + path.string() + "': " + e.what());
  }
  if (!ok) throw IoError("cannot write '" + path.string() + "'");
}

/// Bilinear resample (pixel-centre aligned) followed by a clamp to [0,1].
inline Image resize_normalize(const Image& img, int target_h, int target_w) {
  if (target_h <= 0 || target_w <= 0) {
    throw DimensionError("resize target must be positive");
  }
  Image out(target_h, target_w);
  const double sy = static_cast<double>(img.height()) / target_h;
  const double sx = static_cast<double>(img.width()) / target_w;

  struct Tap {
    int i0, i1;
    float a;
  };
  auto taps = [](int n_out, int n_in, double s) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    for (int i = 0; i < n_out; ++i) {
      double src = (i + 0.5) * s - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, n_in - 1);
      t[static_cast<std::size_t>(i)] = {i0, i1, static_cast<float>(src - i0)};
    }
    return t;
  };
  const auto ty = taps(target_h, img.height(), sy);
  const auto tx = taps(target_w, img.width(), sx);

  for (int y = 0; y < target_h; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < target_w; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      const float v00 = img.at(a.i0, b.i0), v01 = img.at(a.i0, b.i1);
      const float v10 = img.at(a.i1, b.i0), v11 = img.at(a.i1, b.i1);
      const float top = v00 + b.a * (v01 - v00);
      const float bot = v10 + b.a * (v11 - v10);
      out.at(y, x) = std::clamp(top + a.a * (bot - top), 0.0f, 1.0f);
    }
  }
  return out;
}

}  // namespace clearir
