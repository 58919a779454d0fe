#pragma once

#include <array>
#include <cmath>
#include <span>

#include <Eigen/Dense>

#include "clearir/error.hpp"

namespace clearir {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Planar projective transform, row-major 3x3.
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }

  Point2 apply(Point2 p) const {
    const double w = m[6] * p.x + m[7] * p.y + m[8];
    return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
  }

  // Denominator of apply(); positive on the side of the horizon the
  // transform was built for.
  double weight(Point2 p) const { return m[6] * p.x + m[7] * p.y + m[8]; }

  Homography inverse() const {
    Eigen::Matrix3d a;
    a << m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8];
    const Eigen::Matrix3d inv = a.inverse();
    Homography out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out.m[static_cast<std::size_t>(r * 3 + c)] = inv(r, c);
    return out.normalized();
  }

  Homography operator*(const Homography& o) const {
    Homography out;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += m[static_cast<std::size_t>(r * 3 + k)] * o.m[static_cast<std::size_t>(k * 3 + c)];
        out.m[static_cast<std::size_t>(r * 3 + c)] = s;
      }
    }
    return out.normalized();
  }

  Homography normalized() const {
    Homography out = *this;
    if (std::abs(m[8]) > 1e-15)
      for (double& v : out.m) v /= m[8];
    return out;
  }

  // Maps src[i] -> dst[i] exactly (direct linear solve with h33 = 1).
  static Homography from_points(std::span<const Point2, 4> src, std::span<const Point2, 4> dst) {
    Eigen::Matrix<double, 8, 8> a;
    Eigen::Matrix<double, 8, 1> b;
    for (int i = 0; i < 4; ++i) {
      const double x = src[static_cast<std::size_t>(i)].x, y = src[static_cast<std::size_t>(i)].y;
      const double u = dst[static_cast<std::size_t>(i)].x, v = dst[static_cast<std::size_t>(i)].y;
      a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
      a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
      b(2 * i) = u;
      b(2 * i + 1) = v;
    }
    Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
    if (!lu.isInvertible()) throw GeometryError("degenerate point configuration for homography");
    const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
    Homography out;
    for (std::size_t i = 0; i < 8; ++i) out.m[i] = h(static_cast<Eigen::Index>(i));
    out.m[8] = 1.0;
    return out;
  }

  // Similarity about a pivot, optionally with a small projective component.
  static Homography about(Point2 pivot, double angle_rad, double scale, double tx, double ty,
                          double px = 0.0, double py = 0.0) {
    const double c = std::cos(angle_rad) * scale, s = std::sin(angle_rad) * scale;
    Homography t1{{1, 0, -pivot.x, 0, 1, -pivot.y, 0, 0, 1}};
    Homography r{{c, -s, 0, s, c, 0, px, py, 1}};
    Homography t2{{1, 0, pivot.x + tx, 0, 1, pivot.y + ty, 0, 0, 1}};
    return t2 * r * t1;
  }
};

inline double cross(Point2 o, Point2 a, Point2 b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Strictly convex, consistently wound quadrilateral with no three collinear
// corners (relative tolerance on the turn area).
inline bool is_strictly_convex(std::span<const Point2, 4> q) {
  double scale = 0.0;
  for (int i = 0; i < 4; ++i) scale = std::max(scale, distance(q[static_cast<std::size_t>(i)], q[static_cast<std::size_t>((i + 1) % 4)]));
  if (scale <= 0.0) return false;
  const double eps = 1e-6 * scale * scale;
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const double c = cross(q[static_cast<std::size_t>(i)], q[static_cast<std::size_t>((i + 1) % 4)], q[static_cast<std::size_t>((i + 2) % 4)]);
    if (std::abs(c) <= eps) return false;
    const int s = c > 0 ? 1 : -1;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

}  // namespace clearir
