#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "clearir/error.hpp"
#include "clearir/geometry.hpp"
#include "clearir/image.hpp"
#include "clearir/io.hpp"
#include "clearir/manifest.hpp"
#include "clearir/rng.hpp"

namespace clearir {

inline constexpr double kMaxRotationDeg = 30.0;
inline constexpr double kMaxZoomFrac = 0.3;
inline constexpr double kMaxTranslateFrac = 0.1;
inline constexpr double kMaxBrightnessDelta = 0.2;

struct AugmentSpec {
  double max_rotation_deg = 30.0;
  bool allow_hflip = true;
  bool allow_vflip = true;
  double affine_translate_frac = 0.1;
  double max_zoom_frac = 0.3;
  double brightness_delta = 0.2;
  double contrast_lo = 0.8;
  double contrast_hi = 1.25;
  int copies_per_pair = 5;
  std::uint64_t seed = 0;

  static AugmentSpec none() {
    AugmentSpec s;
    s.max_rotation_deg = 0.0;
    s.allow_hflip = s.allow_vflip = false;
    s.affine_translate_frac = s.max_zoom_frac = s.brightness_delta = 0.0;
    s.contrast_lo = s.contrast_hi = 1.0;
    return s;
  }

  AugmentSpec geometric_only() const {
    AugmentSpec s = *this;
    s.brightness_delta = 0.0;
    s.contrast_lo = s.contrast_hi = 1.0;
    return s;
  }

  void validate() const {
    auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    if (!in(max_rotation_deg, 0.0, kMaxRotationDeg)) throw ConfigError("max_rotation_deg must lie in [0,30]");
    if (!in(max_zoom_frac, 0.0, kMaxZoomFrac)) throw ConfigError("max_zoom_frac must lie in [0,0.3]");
    if (!in(affine_translate_frac, 0.0, kMaxTranslateFrac)) {
      throw ConfigError("affine_translate_frac must lie in [0,0.1]");
    }
    if (!in(brightness_delta, 0.0, kMaxBrightnessDelta)) throw ConfigError("brightness_delta must lie in [0,0.2]");
    if (!(contrast_lo > 0.0 && contrast_lo <= contrast_hi) || !std::isfinite(contrast_hi)) {
      throw ConfigError("contrast range must satisfy 0 < lo <= hi");
    }
    if (copies_per_pair < 1) throw ConfigError("copies_per_pair must be >= 1");
  }
};

inline nlohmann::json to_json(const AugmentSpec& s) {
  return {{"max_rotation_deg", s.max_rotation_deg},
          {"allow_hflip", s.allow_hflip},
          {"allow_vflip", s.allow_vflip},
          {"affine_translate_frac", s.affine_translate_frac},
          {"max_zoom_frac", s.max_zoom_frac},
          {"brightness_delta", s.brightness_delta},
          {"contrast_range", {s.contrast_lo, s.contrast_hi}},
          {"copies_per_pair", s.copies_per_pair},
          {"seed", s.seed}};
}

inline AugmentSpec augment_spec_from_json(const nlohmann::json& j) {
  AugmentSpec s;
  try {
    s.max_rotation_deg = j.value("max_rotation_deg", s.max_rotation_deg);
    s.allow_hflip = j.value("allow_hflip", s.allow_hflip);
    s.allow_vflip = j.value("allow_vflip", s.allow_vflip);
    s.affine_translate_frac = j.value("affine_translate_frac", s.affine_translate_frac);
    s.max_zoom_frac = j.value("max_zoom_frac", s.max_zoom_frac);
    s.brightness_delta = j.value("brightness_delta", s.brightness_delta);
    if (j.contains("contrast_range")) {
      const auto& r = j.at("contrast_range");
      if (!r.is_array() || r.size() != 2) throw ConfigError("contrast_range must be [lo, hi]");
      s.contrast_lo = r[0].get<double>();
      s.contrast_hi = r[1].get<double>();
    }
    s.copies_per_pair = j.value("copies_per_pair", s.copies_per_pair);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad augment spec: ") + e.what());
  }
  s.validate();
  return s;
}

/// One sampled transform. Geometry maps source pixel centres to output
/// pixel centres: p' = c + t + zoom * R(angle) * F (p - c).
struct AugmentDraw {
  double angle_deg = 0.0;
  bool hflip = false;
  bool vflip = false;
  double translate_x = 0.0;  // fraction of width
  double translate_y = 0.0;  // fraction of height
  double zoom = 1.0;
  double brightness = 0.0;
  double contrast = 1.0;

  bool geometric_identity() const {
    return angle_deg == 0.0 && !hflip && !vflip && translate_x == 0.0 && translate_y == 0.0 &&
           zoom == 1.0;
  }
  bool photometric_identity() const { return brightness == 0.0 && contrast == 1.0; }

  Homography forward(int height, int width) const {
    const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double fx = hflip ? -1.0 : 1.0, fy = vflip ? -1.0 : 1.0;
    const double c = std::cos(a) * zoom, s = std::sin(a) * zoom;
    const double m00 = c * fx, m01 = -s * fy, m10 = s * fx, m11 = c * fy;
    const double tx = cx + translate_x * width - (m00 * cx + m01 * cy);
    const double ty = cy + translate_y * height - (m10 * cx + m11 * cy);
    return Homography{{m00, m01, tx, m10, m11, ty, 0.0, 0.0, 1.0}};
  }
};

inline AugmentDraw sample_augment(const AugmentSpec& spec, std::uint64_t draw_seed) {
  Rng rng(derive_seed(draw_seed, stream::augment));
  AugmentDraw d;
  // Always consume the same number of draws so fields are independent of
  // which ranges are enabled.
  const double angle = rng.uniform(-1.0, 1.0);
  const bool hf = rng.bernoulli(0.5), vf = rng.bernoulli(0.5);
  const double tx = rng.uniform(-1.0, 1.0), ty = rng.uniform(-1.0, 1.0);
  const double zoom = rng.uniform();
  const double bright = rng.uniform(-1.0, 1.0);
  const double contrast = rng.uniform();
  d.angle_deg = angle * spec.max_rotation_deg;
  d.hflip = spec.allow_hflip && hf;
  d.vflip = spec.allow_vflip && vf;
  d.translate_x = tx * spec.affine_translate_frac;
  d.translate_y = ty * spec.affine_translate_frac;
  d.zoom = 1.0 + zoom * spec.max_zoom_frac;
  d.brightness = bright * spec.brightness_delta;
  d.contrast = spec.contrast_lo + contrast * (spec.contrast_hi - spec.contrast_lo);
  return d;
}

inline Image warp_reflect(const Image& img, const Homography& forward) {
  const Homography inv = forward.inverse().normalized();
  cv::Mat src(img.height(), img.width(), CV_32F, const_cast<float*>(img.pixels().data()));
  const cv::Mat m = (cv::Mat_<double>(2, 3) << inv.m[0], inv.m[1], inv.m[2], inv.m[3], inv.m[4], inv.m[5]);
  Image out(img.height(), img.width());
  cv::Mat dst(out.height(), out.width(), CV_32F, out.pixels().data());
  cv::warpAffine(src, dst, m, dst.size(), cv::INTER_LINEAR | cv::WARP_INVERSE_MAP, cv::BORDER_REFLECT_101);
  out.clamp();
  return out;
}

inline Image apply_photometric(const Image& img, double brightness, double contrast) {
  double mean = 0.0;
  for (float v : img.pixels()) mean += v;
  mean /= static_cast<double>(img.size());
  Image out = img;
  for (float& v : out.pixels()) v = static_cast<float>((v - mean) * contrast + mean + brightness);
  out.clamp();
  return out;
}

inline ImagePair apply_augment(const ImagePair& pair, const AugmentDraw& d) {
  ImagePair out = pair;
  if (!d.geometric_identity()) {
    const Homography f = d.forward(pair.input_ir.height(), pair.input_ir.width());
    out.input_ir = warp_reflect(pair.input_ir, f);
    out.ground_truth = warp_reflect(pair.ground_truth, f);
  }
  if (!d.photometric_identity()) out.input_ir = apply_photometric(out.input_ir, d.brightness, d.contrast);
  out.provenance = Provenance::augmented;
  return out;
}

/// Same random geometry for both images; photometric jitter on the input
/// only.
inline ImagePair augment_pair(const ImagePair& pair, const AugmentSpec& spec, std::uint64_t draw_seed) {
  spec.validate();
  pair.validate();
  ImagePair out = apply_augment(pair, sample_augment(spec, draw_seed));
  out.seed = draw_seed;
  return out;
}

inline std::uint64_t augment_seed(const AugmentSpec& spec, const std::string& pair_id, int copy) {
  return derive_seed(spec.seed ^ fnv1a64(pair_id.data(), pair_id.size()), stream::augment,
                     static_cast<std::uint64_t>(copy));
}

/// Writes copies_per_pair versions of every pair (copy 0 untransformed)
/// under out_dir and returns the new manifest.
inline DatasetManifest expand_dataset(const DatasetManifest& manifest, const AugmentSpec& spec,
                                      const fs::path& out_dir) {
  spec.validate();
  if (manifest.empty()) throw ManifestError("cannot augment an empty manifest");
  std::error_code ec;
  fs::create_directories(out_dir / "input", ec);
  fs::create_directories(out_dir / "gt", ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  std::vector<ManifestEntry> entries;
  entries.reserve(manifest.size() * static_cast<std::size_t>(spec.copies_per_pair));
  for (const auto& src : manifest.entries) {
    ImagePair pair;
    try {
      pair = manifest.load_pair(src);
    } catch (const Error& e) {
      throw IoError("entry '" + src.pair_id + "': " + e.what());
    }
    for (int k = 0; k < spec.copies_per_pair; ++k) {
      const std::uint64_t seed = augment_seed(spec, src.pair_id, k);
      ImagePair out = k == 0 ? apply_augment(pair, AugmentDraw{}) : augment_pair(pair, spec, seed);
      const std::string id = src.pair_id + "_a" + std::to_string(k);
      ManifestEntry e{id, "input/" + id + ".png", "gt/" + id + ".png", Provenance::augmented, seed};
      try {
        save_image(out.input_ir, out_dir / e.input_path);
        save_image(out.ground_truth, out_dir / e.gt_path);
      } catch (const Error& err) {
        throw IoError("entry '" + id + "': " + err.what());
      }
      entries.push_back(std::move(e));
    }
  }
  return write_manifest(std::move(entries), out_dir);
}

}  // namespace clearir
