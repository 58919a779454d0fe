#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/aruco.hpp>

#include "clearir/error.hpp"
#include "clearir/geometry.hpp"
#include "clearir/image.hpp"

namespace clearir {

// 4x4 data bits, 50 ids, one black border cell on each side.
inline constexpr int kMarkerDataBits = 4;
inline constexpr int kMarkerCells = kMarkerDataBits + 2;
inline constexpr int kMarkerDictionarySize = 50;
inline constexpr float kMarkerBlack = 0.0f;
inline constexpr float kMarkerWhite = 1.0f;

inline const cv::Ptr<cv::aruco::Dictionary>& marker_dictionary() {
  static const cv::Ptr<cv::aruco::Dictionary> dict =
      cv::aruco::getPredefinedDictionary(cv::aruco::DICT_4X4_50);
  return dict;
}

using MarkerGrid = std::array<std::uint8_t, kMarkerCells * kMarkerCells>;

/// Cell grid of a dictionary entry including its border; 1 = white.
inline MarkerGrid marker_grid(int marker_id) {
  if (marker_id < 0 || marker_id >= kMarkerDictionarySize) {
    throw ParameterError("marker id " + std::to_string(marker_id) + " outside dictionary");
  }
  const auto& dict = marker_dictionary();
  const cv::Mat bits = cv::aruco::Dictionary::getBitsFromByteList(
      dict->bytesList.rowRange(marker_id, marker_id + 1), kMarkerDataBits);
  MarkerGrid grid{};
  for (int y = 0; y < kMarkerDataBits; ++y)
    for (int x = 0; x < kMarkerDataBits; ++x)
      grid[static_cast<std::size_t>((y + 1) * kMarkerCells + x + 1)] = bits.at<std::uint8_t>(y, x) ? 1 : 0;
  return grid;
}

struct MarkerPlacement {
  int marker_id = 0;
  // Outer corners of the black border: top-left, top-right, bottom-right,
  // bottom-left in the marker's own frame.
  std::array<Point2, 4> corners{};
  MarkerGrid bit_grid{};
};

// Marker-cell coordinates (u, v in [0, 6]) -> image.
inline Homography marker_cell_homography(const std::array<Point2, 4>& corners) {
  static constexpr std::array<Point2, 4> cell{Point2{0, 0}, Point2{kMarkerCells, 0},
                                              Point2{kMarkerCells, kMarkerCells},
                                              Point2{0, kMarkerCells}};
  return Homography::from_points(cell, corners);
}

// Value at marker-cell coordinates; the one-cell quiet zone around the border
// is white. Returns a negative value outside the quiet zone.
inline float marker_value_at(const MarkerGrid& grid, double u, double v) {
  if (u < -1.0 || v < -1.0 || u >= kMarkerCells + 1.0 || v >= kMarkerCells + 1.0) return -1.0f;
  if (u < 0.0 || v < 0.0 || u >= kMarkerCells || v >= kMarkerCells) return kMarkerWhite;
  const int cu = static_cast<int>(u), cv = static_cast<int>(v);
  return grid[static_cast<std::size_t>(cv * kMarkerCells + cu)] ? kMarkerWhite : kMarkerBlack;
}

inline void check_marker_corners(const std::array<Point2, 4>& corners, int height, int width) {
  if (!is_strictly_convex(corners)) {
    throw GeometryError("marker corners do not form a convex quadrilateral");
  }
  for (const Point2& p : corners) {
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= width - 1.0 && p.y <= height - 1.0)) {
      throw GeometryError("marker corner outside image bounds");
    }
  }
}

/// Renders a dictionary marker warped onto `corners` (with a white quiet zone)
/// using 4x4 supersampling. Returns the edited image and the placement.
inline std::pair<Image, MarkerPlacement> embed_marker(const Image& img, int marker_id,
                                                      const std::array<Point2, 4>& corners) {
  check_marker_corners(corners, img.height(), img.width());
  MarkerPlacement placement{marker_id, corners, marker_grid(marker_id)};

  const Homography to_image = marker_cell_homography(corners);
  const Homography to_cell = to_image.inverse();

  // Bounding box of the quiet-zone quad.
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (Point2 c : {Point2{-1, -1}, Point2{kMarkerCells + 1.0, -1},
                   Point2{kMarkerCells + 1.0, kMarkerCells + 1.0}, Point2{-1, kMarkerCells + 1.0}}) {
    const Point2 p = to_image.apply(c);
    x0 = std::min(x0, p.x); y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x); y1 = std::max(y1, p.y);
  }
  const int bx0 = std::max(0, static_cast<int>(std::floor(x0)) - 1);
  const int by0 = std::max(0, static_cast<int>(std::floor(y0)) - 1);
  const int bx1 = std::min(img.width() - 1, static_cast<int>(std::ceil(x1)) + 1);
  const int by1 = std::min(img.height() - 1, static_cast<int>(std::ceil(y1)) + 1);

  constexpr int ss = 4;
  Image out = img;
  for (int y = by0; y <= by1; ++y) {
    for (int x = bx0; x <= bx1; ++x) {
      float acc = 0.0f;
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const Point2 p{x - 0.5 + (sx + 0.5) / ss, y - 0.5 + (sy + 0.5) / ss};
          if (to_cell.weight(p) <= 0.0) continue;
          const Point2 c = to_cell.apply(p);
          const float v = marker_value_at(placement.bit_grid, c.x, c.y);
          if (v >= 0.0f) {
            acc += v;
            ++hits;
          }
        }
      }
      if (hits > 0) {
        const float keep = static_cast<float>(ss * ss - hits) / (ss * ss);
        out.at(y, x) = acc / (ss * ss) + keep * img.at(y, x);
      }
    }
  }
  return {std::move(out), placement};
}

}  // namespace clearir
