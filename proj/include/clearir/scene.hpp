#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "clearir/geometry.hpp"
#include "clearir/image.hpp"
#include "clearir/marker.hpp"
#include "clearir/rng.hpp"

namespace clearir {

/// Unconstrained per-pixel scalar raster (depths in metres, reflectivities).
struct ScalarMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  ScalarMap() = default;
  ScalarMap(int h, int w, float fill) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const ScalarMap&, const ScalarMap&) = default;
};

struct SceneSample {
  float intensity = 0.0f;
  float depth = 1.0f;
  float reflectivity = 0.5f;
};

struct SceneShape {
  enum class Kind { rect, ellipse, triangle };
  enum class Fill { flat, stripes, checker };

  Kind kind = Kind::rect;
  Point2 center;
  double half_w = 1.0, half_h = 1.0, angle = 0.0;
  std::array<Point2, 3> tri{};
  Fill fill = Fill::flat;
  float value_a = 0.5f, value_b = 0.5f;
  double period = 8.0, fill_angle = 0.0;
  float depth = 1.0f, reflectivity = 0.5f;

  bool contains(Point2 p) const {
    if (kind == Kind::triangle) {
      const double c0 = cross(tri[0], tri[1], p), c1 = cross(tri[1], tri[2], p),
                   c2 = cross(tri[2], tri[0], p);
      return (c0 >= 0 && c1 >= 0 && c2 >= 0) || (c0 <= 0 && c1 <= 0 && c2 <= 0);
    }
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double dx = p.x - center.x, dy = p.y - center.y;
    const double u = (ca * dx + sa * dy) / half_w, v = (-sa * dx + ca * dy) / half_h;
    return kind == Kind::rect ? (std::abs(u) <= 1.0 && std::abs(v) <= 1.0) : (u * u + v * v <= 1.0);
  }

  float value(Point2 p) const {
    if (fill == Fill::flat) return value_a;
    const double ca = std::cos(fill_angle), sa = std::sin(fill_angle);
    const double u = ca * p.x + sa * p.y, v = -sa * p.x + ca * p.y;
    const auto band = [this](double t) { return static_cast<long long>(std::floor(t / period)); };
    const long long k = fill == Fill::stripes ? band(u) : band(u) + band(v);
    return (k & 1LL) ? value_b : value_a;
  }
};

struct SceneMarker {
  int id = 0;
  std::array<Point2, 4> corners{};
  float depth = 1.0f, reflectivity = 0.9f;
};

struct SceneRaster {
  Image image;
  ScalarMap depth;
  ScalarMap reflectivity;
  std::vector<MarkerPlacement> markers;
};

/// Analytic 2-D scene: a textured, depth-graded background plus a stack of
/// flat/striped/checkered shapes and optional fiducial markers. Scene
/// coordinates coincide with the pixel coordinates of the reference view.
class ProceduralScene {
 public:
  struct Background {
    float base = 0.4f, grad_x = 0.0f, grad_y = 0.0f;
    float texture_amp = 0.0f;
    double texture_fx = 0.05, texture_fy = 0.03, texture_phase = 0.0;
    float depth_top = 3.0f, depth_bottom = 1.5f;
    float reflectivity = 0.5f;
    double height = 480.0;
  };

  Background background;
  std::vector<SceneShape> shapes;
  std::vector<SceneMarker> markers;

  SceneSample sample(Point2 p) const {
    SceneSample s = sample_background(p);
    for (auto it = shapes.rbegin(); it != shapes.rend(); ++it) {
      if (it->contains(p)) {
        s = {it->value(p), it->depth, it->reflectivity};
        break;
      }
    }
    for (std::size_t i = 0; i < markers.size(); ++i) {
      const Point2 c = marker_to_cell_[i].apply(p);
      const float v = marker_value_at(marker_grids_[i], c.x, c.y);
      if (v >= 0.0f) s = {v, markers[i].depth, markers[i].reflectivity};
    }
    return s;
  }

  // Call after editing `markers`.
  void prepare() {
    marker_grids_.clear();
    marker_to_cell_.clear();
    for (const auto& m : markers) {
      marker_grids_.push_back(marker_grid(m.id));
      marker_to_cell_.push_back(marker_cell_homography(m.corners).inverse());
    }
  }

  /// Renders the scene as seen through `view` (scene -> image). Intensity is
  /// supersampled; depth and reflectivity come from the pixel centre.
  SceneRaster render(int height, int width, const Homography& view = Homography::identity(),
                     int supersample = 3) const {
    const Homography inv = view.inverse();
    SceneRaster r{Image(height, width), ScalarMap(height, width, 1.0f),
                  ScalarMap(height, width, 0.5f), {}};
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        float acc = 0.0f;
        for (int sy = 0; sy < supersample; ++sy)
          for (int sx = 0; sx < supersample; ++sx) {
            const Point2 p{x - 0.5 + (sx + 0.5) / supersample, y - 0.5 + (sy + 0.5) / supersample};
            acc += sample(inv.apply(p)).intensity;
          }
        r.image.at(y, x) = std::clamp(acc / static_cast<float>(supersample * supersample), 0.0f, 1.0f);
        const SceneSample c = sample(inv.apply(Point2{static_cast<double>(x), static_cast<double>(y)}));
        r.depth.at(y, x) = c.depth;
        r.reflectivity.at(y, x) = c.reflectivity;
      }
    }
    for (std::size_t i = 0; i < markers.size(); ++i) {
      MarkerPlacement mp{markers[i].id, {}, marker_grids_[i]};
      for (std::size_t k = 0; k < 4; ++k) mp.corners[k] = view.apply(markers[i].corners[k]);
      r.markers.push_back(mp);
    }
    return r;
  }

 private:
  SceneSample sample_background(Point2 p) const {
    const Background& b = background;
    const double tex = b.texture_amp * std::sin(b.texture_fx * p.x + b.texture_fy * p.y + b.texture_phase);
    const float v = static_cast<float>(b.base + b.grad_x * p.x + b.grad_y * p.y + tex);
    const double t = std::clamp(p.y / b.height, 0.0, 1.0);
    const float d = static_cast<float>(b.depth_top + (b.depth_bottom - b.depth_top) * t);
    return {std::clamp(v, 0.0f, 1.0f), d, b.reflectivity};
  }

  std::vector<MarkerGrid> marker_grids_;
  std::vector<Homography> marker_to_cell_;
};

struct SceneStyle {
  double depth_near_m = 0.5;
  double depth_far_m = 4.0;
  int min_shapes = 6;
  int max_shapes = 14;
  double marker_probability = 0.3;
  int markers = -1;  // forces an exact marker count when >= 0
  double marker_min_frac = 0.35;
  double marker_max_frac = 0.5;
  double max_marker_tilt_deg = 20.0;
  double margin_frac = 0.15;  // shapes may extend this far outside the frame
};

/// Places a marker of the given side length with a random tilt so that it
/// and its quiet zone lie inside [0,w)x[0,h). Returns false if it can't fit.
inline bool place_marker(Rng& rng, int height, int width, double side, double max_tilt_deg,
                         std::array<Point2, 4>& corners) {
  const double tilt = rng.uniform(-max_tilt_deg, max_tilt_deg) * std::numbers::pi / 180.0;
  const double half_ext = 0.5 * side * (kMarkerCells + 2.0) / kMarkerCells *
                          (std::abs(std::cos(tilt)) + std::abs(std::sin(tilt)));
  const double lo_x = half_ext + 1.0, hi_x = width - 2.0 - half_ext;
  const double lo_y = half_ext + 1.0, hi_y = height - 2.0 - half_ext;
  if (lo_x > hi_x || lo_y > hi_y) return false;
  const Point2 c{rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};
  const double h = side / 2.0, ca = std::cos(tilt), sa = std::sin(tilt);
  const std::array<Point2, 4> local{Point2{-h, -h}, Point2{h, -h}, Point2{h, h}, Point2{-h, h}};
  for (std::size_t i = 0; i < 4; ++i) {
    corners[i] = {c.x + ca * local[i].x - sa * local[i].y, c.y + sa * local[i].x + ca * local[i].y};
  }
  return true;
}

inline ProceduralScene random_scene(std::uint64_t seed, int height, int width,
                                    const SceneStyle& style = {}) {
  Rng rng(seed);
  ProceduralScene scene;
  const double near = style.depth_near_m, far = std::max(style.depth_far_m, near);
  const double mid = 0.5 * (near + far);

  auto& bg = scene.background;
  bg.height = height;
  bg.base = static_cast<float>(rng.uniform(0.25, 0.6));
  bg.grad_x = static_cast<float>(rng.uniform(-0.2, 0.2) / width);
  bg.grad_y = static_cast<float>(rng.uniform(-0.2, 0.2) / height);
  bg.texture_amp = static_cast<float>(rng.uniform(0.0, 0.06));
  bg.texture_fx = rng.uniform(0.02, 0.12);
  bg.texture_fy = rng.uniform(0.02, 0.12);
  bg.texture_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  bg.depth_top = static_cast<float>(far);
  bg.depth_bottom = static_cast<float>(mid);
  bg.reflectivity = static_cast<float>(rng.uniform(0.3, 0.8));

  const double mx = style.margin_frac * width, my = style.margin_frac * height;
  const double scale = std::min(height, width);
  const int n_shapes = style.min_shapes +
                       static_cast<int>(rng.index(static_cast<std::size_t>(
                           std::max(1, style.max_shapes - style.min_shapes + 1))));
  for (int i = 0; i < n_shapes; ++i) {
    SceneShape s;
    const double k = rng.uniform();
    s.kind = k < 0.45 ? SceneShape::Kind::rect
                      : (k < 0.75 ? SceneShape::Kind::ellipse : SceneShape::Kind::triangle);
    s.center = {rng.uniform(-mx, width + mx), rng.uniform(-my, height + my)};
    s.half_w = rng.uniform(0.06, 0.22) * scale;
    s.half_h = rng.uniform(0.06, 0.22) * scale;
    s.angle = rng.uniform(0.0, std::numbers::pi);
    for (auto& v : s.tri) {
      v = {s.center.x + rng.uniform(-1.0, 1.0) * s.half_w * 1.5,
           s.center.y + rng.uniform(-1.0, 1.0) * s.half_h * 1.5};
    }
    const double f = rng.uniform();
    s.fill = f < 0.6 ? SceneShape::Fill::flat
                     : (f < 0.8 ? SceneShape::Fill::stripes : SceneShape::Fill::checker);
    s.value_a = static_cast<float>(rng.uniform(0.05, 0.95));
    do {
      s.value_b = static_cast<float>(rng.uniform(0.05, 0.95));
    } while (std::abs(s.value_b - s.value_a) < 0.25f);
    s.period = rng.uniform(0.04, 0.1) * scale;
    s.fill_angle = rng.uniform(0.0, std::numbers::pi);
    s.depth = static_cast<float>(rng.uniform(near, mid));
    s.reflectivity = static_cast<float>(rng.uniform(0.2, 1.0));
    scene.shapes.push_back(s);
  }

  const int n_markers = style.markers >= 0 ? style.markers
                                           : (rng.bernoulli(style.marker_probability) ? 1 : 0);
  for (int i = 0; i < n_markers; ++i) {
    SceneMarker m;
    m.id = static_cast<int>(rng.index(kMarkerDictionarySize));
    const double side = rng.uniform(style.marker_min_frac, style.marker_max_frac) * scale;
    if (!place_marker(rng, height, width, side, style.max_marker_tilt_deg, m.corners)) continue;
    m.depth = static_cast<float>(rng.uniform(near, mid));
    m.reflectivity = static_cast<float>(rng.uniform(0.7, 1.0));
    scene.markers.push_back(m);
  }
  scene.prepare();
  return scene;
}

}  // namespace clearir
