#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clearir/error.hpp"
#include "clearir/image.hpp"
#include "clearir/io.hpp"
#include "clearir/manifest.hpp"
#include "clearir/rng.hpp"
#include "clearir/scene.hpp"

namespace clearir {

/// One synthetic capture: clean scene plus the physical factors that shape
/// the projected dot pattern.
struct SceneSpec {
  Image base_image;
  ScalarMap depth_map;         // metres, > 0
  ScalarMap reflectivity_map;  // [0, 1]
  double emitter_power = 1.0;  // 1.0 = nominal drive
  double ambient = 0.0;        // 0 = dark room, 1 = fully lit
  std::uint64_t seed = 0;

  void validate() const {
    const auto check_dims = [&](const ScalarMap& m, const char* name) {
      if (m.height != base_image.height() || m.width != base_image.width() ||
          m.values.size() != base_image.size()) {
        throw DimensionError(std::string(name) + " dimensions differ from base image");
      }
    };
    check_dims(depth_map, "depth_map");
    check_dims(reflectivity_map, "reflectivity_map");
    for (float d : depth_map.values) {
      if (!std::isfinite(d) || d <= 0.0f) throw ParameterError("depths must be finite and > 0");
    }
    for (float r : reflectivity_map.values) {
      if (!(r >= 0.0f && r <= 1.0f)) throw ParameterError("reflectivity outside [0,1]");
    }
    if (!(emitter_power >= 0.0) || !std::isfinite(emitter_power)) {
      throw ParameterError("emitter power must be >= 0");
    }
    if (!(ambient >= 0.0 && ambient <= 1.0)) throw ParameterError("ambient outside [0,1]");
    base_image.validate();
  }
};

inline SceneSpec make_scene_spec(const SceneRaster& raster, double power, double ambient,
                                 std::uint64_t seed) {
  return {raster.image, raster.depth, raster.reflectivity, power, ambient, seed};
}

struct DotField {
  std::vector<Point2> centers;
  std::vector<float> base_amplitude;  // (0, 1] per dot

  std::size_t size() const { return centers.size(); }
  friend bool operator==(const DotField&, const DotField&) = default;
};

struct EmitterOptics {
  double reference_distance_m = 1.0;
  double base_radius_px = 1.5;  // Gaussian sigma of a dot at the reference distance
  double min_amplitude = 0.6;
};

/// Jittered-grid pseudo-random dot pattern. `density` is dots per 1000
/// pixels; the grid origin is drawn uniformly so the expected count is
/// exactly density * H * W / 1000.
inline DotField generate_dot_pattern(std::uint64_t seed, double density, double jitter,
                                     int height, int width, const EmitterOptics& optics = {}) {
  if (!(density >= 0.0) || !std::isfinite(density)) throw ParameterError("dot density must be >= 0");
  if (!(jitter >= 0.0 && jitter <= 1.0)) throw ParameterError("jitter must lie in [0,1]");
  if (height <= 0 || width <= 0) throw DimensionError("dot pattern needs a positive size");
  DotField field;
  if (density == 0.0) return field;

  Rng rng(derive_seed(seed, stream::dots));
  const double spacing = std::sqrt(1000.0 / density);
  const double ox = rng.uniform() * spacing, oy = rng.uniform() * spacing;
  const int nx = static_cast<int>(std::ceil(width / spacing)) + 1;
  const int ny = static_cast<int>(std::ceil(height / spacing)) + 1;
  for (int gy = -1; gy < ny; ++gy) {
    for (int gx = -1; gx < nx; ++gx) {
      const double jx = jitter * (rng.uniform() - 0.5) * spacing;
      const double jy = jitter * (rng.uniform() - 0.5) * spacing;
      const double amp = rng.uniform(optics.min_amplitude, 1.0);
      const double x = ox + gx * spacing + jx - 0.5;
      const double y = oy + gy * spacing + jy - 0.5;
      if (x < -0.5 || y < -0.5 || x >= width - 0.5 || y >= height - 0.5) continue;
      field.centers.push_back({x, y});
      field.base_amplitude.push_back(static_cast<float>(amp));
    }
  }
  return field;
}

// Nearest-pixel lookup of a scene map at a dot centre.
inline float map_at(const ScalarMap& m, Point2 c) {
  const int x = std::clamp(static_cast<int>(std::lround(c.x)), 0, m.width - 1);
  const int y = std::clamp(static_cast<int>(std::lround(c.y)), 0, m.height - 1);
  return m.at(y, x);
}

struct DotAppearance {
  double peak = 0.0;
  double radius_px = 0.0;
};

/// Peak = clamp(P * rho * (d0/d)^2 * amplitude, 0, 1); radius = r0 * d0/d.
inline DotAppearance dot_appearance(const SceneSpec& spec, Point2 center, float amplitude,
                                    const EmitterOptics& optics = {}) {
  const double d = map_at(spec.depth_map, center);
  const double rho = map_at(spec.reflectivity_map, center);
  const double falloff = optics.reference_distance_m / d;
  const double peak = spec.emitter_power * rho * falloff * falloff * amplitude;
  return {std::clamp(peak, 0.0, 1.0), optics.base_radius_px * falloff};
}

/// Renders every dot as a Gaussian splat; overlapping splats take the
/// per-pixel maximum.
inline Image render_emitter_layer(const DotField& dots, const SceneSpec& spec,
                                  const EmitterOptics& optics = {}) {
  spec.validate();
  const int h = spec.base_image.height(), w = spec.base_image.width();
  Image layer(h, w, 0.0f);
  for (std::size_t i = 0; i < dots.size(); ++i) {
    const Point2 c = dots.centers[i];
    const DotAppearance a = dot_appearance(spec, c, dots.base_amplitude[i], optics);
    if (a.peak <= 0.0) continue;
    const double r = std::max(a.radius_px, 1e-3);
    const double inv2s2 = 1.0 / (2.0 * r * r);
    const int reach = static_cast<int>(std::ceil(3.0 * r));
    const int cx = static_cast<int>(std::lround(c.x)), cy = static_cast<int>(std::lround(c.y));
    for (int y = std::max(0, cy - reach); y <= std::min(h - 1, cy + reach); ++y) {
      for (int x = std::max(0, cx - reach); x <= std::min(w - 1, cx + reach); ++x) {
        const double dx = x - c.x, dy = y - c.y;
        const auto v = static_cast<float>(a.peak * std::exp(-(dx * dx + dy * dy) * inv2s2));
        float& px = layer.at(y, x);
        px = std::max(px, v);
      }
    }
  }
  return layer;
}

inline double scene_visibility(double ambient) { return 0.3 + 0.7 * ambient; }
inline double emitter_visibility(double ambient) { return 1.0 - ambient; }

/// frame = clamp(base * (0.3 + 0.7A) + (1 - A) * layer + N(0, sigma), 0, 1)
inline Image composite_ir_frame(const SceneSpec& spec, const Image& layer, double noise_sigma) {
  if (!layer.same_shape(spec.base_image)) {
    throw DimensionError("emitter layer and base image differ in size");
  }
  if (!(noise_sigma >= 0.0)) throw ParameterError("noise sigma must be >= 0");
  const auto scene_gain = static_cast<float>(scene_visibility(spec.ambient));
  const auto dot_gain = static_cast<float>(emitter_visibility(spec.ambient));
  Rng rng(derive_seed(spec.seed, stream::noise));
  Image frame(layer.height(), layer.width());
  auto out = frame.pixels();
  const auto base = spec.base_image.pixels();
  const auto dots = layer.pixels();
  for (std::size_t i = 0; i < out.size(); ++i) {
    float v = base[i] * scene_gain + dot_gain * dots[i];
    if (noise_sigma > 0.0) v += static_cast<float>(noise_sigma * rng.normal());
    out[i] = std::clamp(v, 0.0f, 1.0f);
  }
  return frame;
}

struct PatternParams {
  double density = 15.0;  // dots per kilopixel
  double jitter = 0.5;
  double noise_sigma = 0.01;
};

inline ImagePair synth_pair(const SceneSpec& spec, const PatternParams& pattern,
                            const EmitterOptics& optics = {}) {
  spec.validate();
  const DotField dots = generate_dot_pattern(spec.seed, pattern.density, pattern.jitter,
                                             spec.base_image.height(), spec.base_image.width(),
                                             optics);
  const Image layer = render_emitter_layer(dots, spec, optics);
  return {composite_ir_frame(spec, layer, pattern.noise_sigma), spec.base_image,
          "synth_" + std::to_string(spec.seed), Provenance::synthetic, spec.seed};
}

// ---------------------------------------------------------------------------
// Dataset generation

/// Fully resolved parameters for one generated pair.
struct SceneConfig {
  int height = 480;
  int width = 640;
  double ambient = 0.1;
  double power = 1.0;
  double depth_near_m = 0.5;
  double depth_far_m = 4.0;
  PatternParams pattern;
  double marker_probability = 0.3;

  void validate() const {
    if (height < kMinImageSide || width < kMinImageSide) throw ConfigError("scene size too small");
    if (!(ambient >= 0.0 && ambient <= 1.0)) throw ConfigError("ambient outside [0,1]");
    if (!(power >= 0.0)) throw ConfigError("power must be >= 0");
    if (!(depth_near_m > 0.0 && depth_far_m >= depth_near_m)) throw ConfigError("bad depth range");
    if (!(pattern.density >= 0.0)) throw ConfigError("density must be >= 0");
    if (!(pattern.jitter >= 0.0 && pattern.jitter <= 1.0)) throw ConfigError("jitter outside [0,1]");
    if (!(pattern.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  }
};

/// JSON-level dataset description; each entry draws ambient, power and its
/// depth range from the given intervals.
struct DatasetConfig {
  std::uint64_t seed_base = 0;
  int count = 1;
  int height = 480;
  int width = 640;
  PatternParams pattern;
  std::array<double, 2> ambient_range{0.0, 1.0};
  std::array<double, 2> power_range{0.5, 1.5};
  std::array<double, 2> depth_range_m{0.5, 4.0};
  double marker_probability = 0.3;

  void validate() const {
    if (count < 1) throw ConfigError("count must be >= 1");
    auto ordered = [](const std::array<double, 2>& r) { return r[0] <= r[1]; };
    if (!ordered(ambient_range) || !ordered(power_range) || !ordered(depth_range_m)) {
      throw ConfigError("ranges must be [lo, hi] with lo <= hi");
    }
    if (ambient_range[0] < 0.0 || ambient_range[1] > 1.0) throw ConfigError("ambient_range outside [0,1]");
    if (power_range[0] < 0.0) throw ConfigError("power_range must be >= 0");
    if (depth_range_m[0] <= 0.0) throw ConfigError("depth_range_m must be > 0");
    SceneConfig probe;
    probe.height = height;
    probe.width = width;
    probe.pattern = pattern;
    probe.validate();
  }
};

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  try {
    c.seed_base = j.value("seed_base", c.seed_base);
    c.count = j.value("count", c.count);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.pattern.density = j.value("density", c.pattern.density);
    c.pattern.jitter = j.value("jitter", c.pattern.jitter);
    c.pattern.noise_sigma = j.value("noise_sigma", c.pattern.noise_sigma);
    c.ambient_range = j.value("ambient_range", c.ambient_range);
    c.power_range = j.value("power_range", c.power_range);
    c.depth_range_m = j.value("depth_range_m", c.depth_range_m);
    c.marker_probability = j.value("marker_probability", c.marker_probability);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad scene config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const DatasetConfig& c) {
  return {{"seed_base", c.seed_base},   {"count", c.count},
          {"height", c.height},         {"width", c.width},
          {"density", c.pattern.density}, {"jitter", c.pattern.jitter},
          {"noise_sigma", c.pattern.noise_sigma}, {"ambient_range", c.ambient_range},
          {"power_range", c.power_range}, {"depth_range_m", c.depth_range_m},
          {"marker_probability", c.marker_probability}};
}

inline std::vector<SceneConfig> expand_scene_configs(const DatasetConfig& c) {
  c.validate();
  std::vector<SceneConfig> out;
  for (int i = 0; i < c.count; ++i) {
    Rng rng(derive_seed(c.seed_base + static_cast<std::uint64_t>(i), stream::params));
    SceneConfig s;
    s.height = c.height;
    s.width = c.width;
    s.pattern = c.pattern;
    s.marker_probability = c.marker_probability;
    s.ambient = rng.uniform(c.ambient_range[0], c.ambient_range[1]);
    s.power = rng.uniform(c.power_range[0], c.power_range[1]);
    const double lo = c.depth_range_m[0], hi = c.depth_range_m[1];
    s.depth_near_m = rng.uniform(lo, lo + 0.5 * (hi - lo));
    s.depth_far_m = rng.uniform(s.depth_near_m + 0.5 * (hi - s.depth_near_m), hi);
    out.push_back(s);
  }
  return out;
}

inline SceneSpec build_scene_spec(const SceneConfig& cfg, std::uint64_t seed) {
  SceneStyle style;
  style.depth_near_m = cfg.depth_near_m;
  style.depth_far_m = cfg.depth_far_m;
  style.marker_probability = cfg.marker_probability;
  const ProceduralScene scene =
      random_scene(derive_seed(seed, stream::scene), cfg.height, cfg.width, style);
  return make_scene_spec(scene.render(cfg.height, cfg.width), cfg.power, cfg.ambient, seed);
}

inline std::string pair_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%06zu", index);
  return buf;
}

/// Writes input/<id>.png, gt/<id>.png and manifest.json under out_dir. Entry
/// i uses seed seed_base + i.
inline DatasetManifest generate_dataset(const std::vector<SceneConfig>& configs,
                                        const fs::path& out_dir, std::uint64_t seed_base) {
  if (configs.empty()) throw ConfigError("need at least one scene config");
  for (const auto& c : configs) c.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "input", ec);
  fs::create_directories(out_dir / "gt", ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const std::uint64_t seed = seed_base + i;
    const std::string id = pair_name(i);
    const SceneSpec spec = build_scene_spec(configs[i], seed);
    const ImagePair pair = synth_pair(spec, configs[i].pattern);
    ManifestEntry e{id, "input/" + id + ".png", "gt/" + id + ".png", Provenance::synthetic, seed};
    try {
      save_image(pair.input_ir, out_dir / e.input_path);
      save_image(pair.ground_truth, out_dir / e.gt_path);
    } catch (const Error& err) {
      throw IoError("entry '" + id + "': " + err.what());
    }
    entries.push_back(std::move(e));
  }
  return write_manifest(std::move(entries), out_dir);
}

inline DatasetManifest generate_dataset(const DatasetConfig& cfg, const fs::path& out_dir) {
  return generate_dataset(expand_scene_configs(cfg), out_dir, cfg.seed_base);
}

}  // namespace clearir
