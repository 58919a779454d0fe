#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/aruco.hpp>
#include <opencv2/features2d.hpp>

#include "clearir/clahe.hpp"
#include "clearir/emitter.hpp"
#include "clearir/error.hpp"
#include "clearir/geometry.hpp"
#include "clearir/io.hpp"
#include "clearir/losses.hpp"
#include "clearir/manifest.hpp"
#include "clearir/marker.hpp"
#include "clearir/scene.hpp"
#include "clearir/unet.hpp"

namespace clearir {

// ---------------------------------------------------------------------------
// Image transforms under evaluation

/// One forward pass at the model's resolution. With `resize`, inputs of
/// another size are resampled in and the output resampled back.
template <typename T>
Image denoise(const UNet<T>& model, const Image& ir, bool resize = false) {
  ir.validate();
  const UNetConfig& c = model.config();
  const bool fits = ir.height() == c.input_h && ir.width() == c.input_w;
  if (!fits && !resize) {
    throw DimensionError("denoise: image " + std::to_string(ir.height()) + "x" +
                         std::to_string(ir.width()) + " does not match model input " +
                         std::to_string(c.input_h) + "x" + std::to_string(c.input_w));
  }
  const Image in = fits ? ir : resize_normalize(ir, c.input_h, c.input_w);
  Image out = to_image(model.forward(to_batch<T>(in)));
  if (!fits) out = resize_normalize(out, ir.height(), ir.width());
  for (float& v : out.pixels()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

inline Image clahe_baseline(const Image& img, double clip_limit = 2.0, int tiles_x = 8,
                            int tiles_y = 8) {
  img.validate();
  return clahe(img, {clip_limit, tiles_x, tiles_y});
}

struct Method {
  std::string name;
  std::function<Image(const Image&)> apply;
};

inline Method raw_method() {
  return {"raw", [](const Image& img) { return img; }};
}

inline Method clahe_method(const ClaheParams& p = {}) {
  return {"clahe", [p](const Image& img) { return clahe_baseline(img, p.clip_limit, p.tiles_x, p.tiles_y); }};
}

template <typename T>
Method model_method(std::shared_ptr<const UNet<T>> model, std::string name = "model") {
  if (!model) throw StateError("model method needs a model");
  return {std::move(name), [model](const Image& img) { return denoise(*model, img, true); }};
}

// ---------------------------------------------------------------------------
// Feature matching

struct MatchCounts {
  int correct = 0;
  int incorrect = 0;
  double ratio_threshold = 0.75;
  bool too_few_keypoints = false;

  int survivors() const { return correct + incorrect; }

  MatchCounts& operator+=(const MatchCounts& o) {
    correct += o.correct;
    incorrect += o.incorrect;
    too_few_keypoints = too_few_keypoints || o.too_few_keypoints;
    return *this;
  }
};

// Sized for frames around 128x96; OpenCV's 31 px defaults leave little
// usable area there.
struct OrbParams {
  int max_features = 500;
  float scale_factor = 1.2f;
  int levels = 4;
  int edge_threshold = 15;
  int patch_size = 15;
  int fast_threshold = 12;
};

inline nlohmann::json to_json(const OrbParams& p) {
  return {{"max_features", p.max_features}, {"scale_factor", p.scale_factor}, {"levels", p.levels},
          {"edge_threshold", p.edge_threshold}, {"patch_size", p.patch_size},
          {"fast_threshold", p.fast_threshold}};
}

/// ORB keypoints in both images, brute-force Hamming 2-NN with Lowe's ratio
/// test. A survivor is correct when true_h maps its keypoint in a to within
/// reproj_px of its partner in b.
inline MatchCounts orb_match_eval(const Image& a, const Image& b, const Homography& true_h,
                                  double ratio = 0.75, double reproj_px = 3.0,
                                  const OrbParams& p = {}) {
  if (!(ratio >= 0.0)) throw ParameterError("ratio must be >= 0");
  if (!(reproj_px >= 0.0)) throw ParameterError("reprojection gate must be >= 0");
  MatchCounts out;
  out.ratio_threshold = ratio;
  auto orb = cv::ORB::create(p.max_features, p.scale_factor, p.levels, p.edge_threshold, 0, 2,
                             cv::ORB::HARRIS_SCORE, p.patch_size, p.fast_threshold);
  std::vector<cv::KeyPoint> ka, kb;
  cv::Mat da, db;
  orb->detectAndCompute(to_mat_u8(a), cv::noArray(), ka, da);
  orb->detectAndCompute(to_mat_u8(b), cv::noArray(), kb, db);
  if (ka.size() < 2 || kb.size() < 2) {
    out.too_few_keypoints = true;
    return out;
  }
  cv::BFMatcher matcher(cv::NORM_HAMMING);
  std::vector<std::vector<cv::DMatch>> knn;
  matcher.knnMatch(da, db, knn, 2);
  for (const auto& m : knn) {
    if (m.size() < 2 || !(m[0].distance < ratio * m[1].distance)) continue;
    const cv::Point2f pa = ka[static_cast<std::size_t>(m[0].queryIdx)].pt;
    const cv::Point2f pb = kb[static_cast<std::size_t>(m[0].trainIdx)].pt;
    const Point2 mapped = true_h.apply({pa.x, pa.y});
    if (distance(mapped, {pb.x, pb.y}) <= reproj_px) ++out.correct;
    else ++out.incorrect;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fiducial detection

struct MarkerCounts {
  int correct = 0;
  int missed = 0;
  int false_detections = 0;

  MarkerCounts& operator+=(const MarkerCounts& o) {
    correct += o.correct;
    missed += o.missed;
    false_detections += o.false_detections;
    return *this;
  }
  friend bool operator==(const MarkerCounts&, const MarkerCounts&) = default;
};

inline constexpr double kMarkerRmsGatePx = 5.0;

inline MarkerCounts aruco_eval(const Image& img, const std::vector<MarkerPlacement>& placed) {
  std::vector<std::vector<cv::Point2f>> corners;
  std::vector<int> ids;
  auto params = cv::aruco::DetectorParameters::create();
  params->cornerRefinementMethod = cv::aruco::CORNER_REFINE_SUBPIX;
  cv::aruco::detectMarkers(to_mat_u8(img), marker_dictionary(), corners, ids, params);

  std::vector<bool> used(ids.size(), false);
  MarkerCounts out;
  for (const auto& mp : placed) {
    int best = -1;
    double best_rms = kMarkerRmsGatePx;
    for (std::size_t d = 0; d < ids.size(); ++d) {
      if (used[d] || ids[d] != mp.marker_id) continue;
      double se = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        se += std::pow(distance(mp.corners[k], {corners[d][k].x, corners[d][k].y}), 2);
      }
      const double rms = std::sqrt(se / 4.0);
      if (rms < best_rms) {
        best_rms = rms;
        best = static_cast<int>(d);
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      ++out.correct;
    } else {
      ++out.missed;
    }
  }
  out.false_detections = static_cast<int>(std::count(used.begin(), used.end(), false));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic evaluation scenarios

struct ScenarioConfig {
  int height = 96;
  int width = 128;
  int warp_pairs = 10;
  int marker_frames = 6;
  double marker_power = 1.2;
  std::array<double, 2> marker_ambient{0.0, 0.1};
  std::array<double, 2> warp_power{0.8, 1.2};
  std::array<double, 2> warp_ambient{0.0, 0.3};
  double max_warp_rotation_deg = 8.0;
  double max_warp_shift_frac = 0.05;
  double max_warp_scale_frac = 0.08;
  double max_perspective = 3e-4;
  PatternParams pattern;
  std::uint64_t seed = 0;

  void validate() const {
    if (height < kMinImageSide || width < kMinImageSide) throw ConfigError("scenario frame too small");
    if (warp_pairs < 0 || marker_frames < 0) throw ConfigError("scenario counts must be >= 0");
    if (!(marker_power >= 0.0)) throw ConfigError("marker_power must be >= 0");
    for (const auto* r : {&marker_ambient, &warp_ambient}) {
      if (!((*r)[0] >= 0.0 && (*r)[0] <= (*r)[1] && (*r)[1] <= 1.0)) throw ConfigError("ambient range outside [0,1]");
    }
    if (!(warp_power[0] >= 0.0 && warp_power[0] <= warp_power[1])) throw ConfigError("bad warp_power range");
    if (!(max_warp_scale_frac >= 0.0 && max_warp_scale_frac < 0.5)) throw ConfigError("bad warp scale range");
    if (!(max_warp_rotation_deg >= 0.0 && max_warp_shift_frac >= 0.0 && max_perspective >= 0.0)) {
      throw ConfigError("warp ranges must be >= 0");
    }
    SceneConfig probe;
    probe.height = height;
    probe.width = width;
    probe.pattern = pattern;
    probe.validate();
  }
};

inline nlohmann::json to_json(const ScenarioConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"warp_pairs", c.warp_pairs},
          {"marker_frames", c.marker_frames},
          {"marker_power", c.marker_power},
          {"marker_ambient", c.marker_ambient},
          {"warp_power", c.warp_power},
          {"warp_ambient", c.warp_ambient},
          {"max_warp_rotation_deg", c.max_warp_rotation_deg},
          {"max_warp_shift_frac", c.max_warp_shift_frac},
          {"max_warp_scale_frac", c.max_warp_scale_frac},
          {"max_perspective", c.max_perspective},
          {"density", c.pattern.density},
          {"jitter", c.pattern.jitter},
          {"noise_sigma", c.pattern.noise_sigma},
          {"seed", c.seed}};
}

inline ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.warp_pairs = j.value("warp_pairs", c.warp_pairs);
    c.marker_frames = j.value("marker_frames", c.marker_frames);
    c.marker_power = j.value("marker_power", c.marker_power);
    c.marker_ambient = j.value("marker_ambient", c.marker_ambient);
    c.warp_power = j.value("warp_power", c.warp_power);
    c.warp_ambient = j.value("warp_ambient", c.warp_ambient);
    c.max_warp_rotation_deg = j.value("max_warp_rotation_deg", c.max_warp_rotation_deg);
    c.max_warp_shift_frac = j.value("max_warp_shift_frac", c.max_warp_shift_frac);
    c.max_warp_scale_frac = j.value("max_warp_scale_frac", c.max_warp_scale_frac);
    c.max_perspective = j.value("max_perspective", c.max_perspective);
    c.pattern.density = j.value("density", c.pattern.density);
    c.pattern.jitter = j.value("jitter", c.pattern.jitter);
    c.pattern.noise_sigma = j.value("noise_sigma", c.pattern.noise_sigma);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad scenario config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Two views of one scene related by `h` (view a pixel -> view b pixel). The
/// emitter is rigid with the camera, so both raw frames carry the same dot
/// layout in image coordinates.
struct WarpPair {
  std::string id;
  Image raw_a, raw_b, clean_a, clean_b;
  Homography h;
};

struct MarkerFrame {
  std::string id;
  Image raw, clean;
  std::vector<MarkerPlacement> markers;
};

struct Scenario {
  std::vector<WarpPair> warps;
  std::vector<MarkerFrame> frames;
};

inline Homography random_view_warp(Rng& rng, const ScenarioConfig& c) {
  const double angle = rng.uniform(-c.max_warp_rotation_deg, c.max_warp_rotation_deg) * std::numbers::pi / 180.0;
  const double scale = 1.0 + rng.uniform(-c.max_warp_scale_frac, c.max_warp_scale_frac);
  const double tx = rng.uniform(-c.max_warp_shift_frac, c.max_warp_shift_frac) * c.width;
  const double ty = rng.uniform(-c.max_warp_shift_frac, c.max_warp_shift_frac) * c.height;
  const double px = rng.uniform(-c.max_perspective, c.max_perspective);
  const double py = rng.uniform(-c.max_perspective, c.max_perspective);
  return Homography::about({(c.width - 1) / 2.0, (c.height - 1) / 2.0}, angle, scale, tx, ty, px, py);
}

// Same scene geometry at a different emitter drive; the dot layout and
// sensor noise depend only on `seed`.
inline Image raw_frame(const SceneRaster& r, double power, double ambient, std::uint64_t seed,
                       const PatternParams& pattern) {
  const SceneSpec spec = make_scene_spec(r, power, ambient, seed);
  const DotField dots = generate_dot_pattern(seed, pattern.density, pattern.jitter, r.image.height(),
                                             r.image.width());
  return composite_ir_frame(spec, render_emitter_layer(dots, spec), pattern.noise_sigma);
}

inline Scenario build_scenario(const ScenarioConfig& c) {
  c.validate();
  Scenario s;
  for (int i = 0; i < c.warp_pairs; ++i) {
    const auto k = static_cast<std::uint64_t>(i);
    Rng rng(derive_seed(c.seed, stream::scenario, 2 * k));
    SceneStyle style;
    style.markers = 0;
    const ProceduralScene scene = random_scene(rng.next_u64(), c.height, c.width, style);
    const Homography h = random_view_warp(rng, c);
    const double power = rng.uniform(c.warp_power[0], c.warp_power[1]);
    const double ambient = rng.uniform(c.warp_ambient[0], c.warp_ambient[1]);
    const std::uint64_t dot_seed = rng.next_u64();

    const SceneRaster ra = scene.render(c.height, c.width);
    const SceneRaster rb = scene.render(c.height, c.width, h);
    const SceneSpec sa = make_scene_spec(ra, power, ambient, rng.next_u64());
    const SceneSpec sb = make_scene_spec(rb, power, ambient, rng.next_u64());
    const DotField dots = generate_dot_pattern(dot_seed, c.pattern.density, c.pattern.jitter, c.height, c.width);
    WarpPair w;
    w.id = "warp_" + std::to_string(i);
    w.raw_a = composite_ir_frame(sa, render_emitter_layer(dots, sa), c.pattern.noise_sigma);
    w.raw_b = composite_ir_frame(sb, render_emitter_layer(dots, sb), c.pattern.noise_sigma);
    w.clean_a = ra.image;
    w.clean_b = rb.image;
    w.h = h;
    s.warps.push_back(std::move(w));
  }
  for (int i = 0; i < c.marker_frames; ++i) {
    const auto k = static_cast<std::uint64_t>(i);
    Rng rng(derive_seed(c.seed, stream::scenario, 2 * k + 1));
    SceneStyle style;
    style.markers = 1;
    const ProceduralScene scene = random_scene(rng.next_u64(), c.height, c.width, style);
    const double ambient = rng.uniform(c.marker_ambient[0], c.marker_ambient[1]);
    const SceneRaster r = scene.render(c.height, c.width);
    MarkerFrame f;
    f.id = "marker_" + std::to_string(i);
    f.raw = raw_frame(r, c.marker_power, ambient, rng.next_u64(), c.pattern);
    f.clean = r.image;
    f.markers = r.markers;
    s.frames.push_back(std::move(f));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Suite

struct EvalRow {
  std::string method;
  double mean_ssim = 0.0;
  MatchCounts orb;
  MarkerCounts aruco;
  std::optional<std::string> error;
};

struct EvalReport {
  std::string dataset_id;
  std::string config_hash;
  std::vector<EvalRow> rows;

  const EvalRow& row(const std::string& method) const {
    for (const auto& r : rows)
      if (r.method == method) return r;
    throw ParameterError("no row for method '" + method + "'");
  }
};

struct EvalOptions {
  double ratio = 0.75;
  double reproj_px = 3.0;
  OrbParams orb;
  // Adds a "gt" row scoring the clean frames themselves.
  bool reference_row = true;
};

inline constexpr const char* kReferenceMethod = "gt";

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json j = {{"method", row.method},
                        {"mean_ssim", row.mean_ssim},
                        {"orb", {{"correct", row.orb.correct}, {"incorrect", row.orb.incorrect}}},
                        {"aruco",
                         {{"correct", row.aruco.correct},
                          {"missed", row.aruco.missed},
                          {"false_detections", row.aruco.false_detections}}}};
    if (row.error) {
      j["mean_ssim"] = nullptr;
      j["error"] = *row.error;
    }
    rows.push_back(std::move(j));
  }
  return {{"dataset_id", r.dataset_id}, {"config_hash", r.config_hash}, {"rows", rows}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& row : j.at("rows")) {
      EvalRow e;
      e.method = row.at("method").get<std::string>();
      if (row.contains("error")) e.error = row.at("error").get<std::string>();
      else e.mean_ssim = row.at("mean_ssim").get<double>();
      e.orb.correct = row.at("orb").at("correct").get<int>();
      e.orb.incorrect = row.at("orb").at("incorrect").get<int>();
      e.aruco.correct = row.at("aruco").at("correct").get<int>();
      e.aruco.missed = row.at("aruco").at("missed").get<int>();
      e.aruco.false_detections = row.at("aruco").at("false_detections").get<int>();
      if (!e.error && !(e.mean_ssim >= -1.0 && e.mean_ssim <= 1.0)) throw DecodeError("mean_ssim outside [-1,1]");
      if (e.orb.correct < 0 || e.orb.incorrect < 0 || e.aruco.correct < 0 || e.aruco.missed < 0 ||
          e.aruco.false_detections < 0) {
        throw DecodeError("negative count in report");
      }
      r.rows.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("bad report: ") + e.what());
  }
  return r;
}

inline std::string render_table(const EvalReport& r) {
  std::size_t name_w = 6;
  for (const auto& row : r.rows) name_w = std::max(name_w, row.method.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s | %9s | %17s | %19s | %5s\n", static_cast<int>(name_w), "Method",
                "Mean SSIM", "ORB corr / incorr", "ArUco corr / missed", "False");
  out << buf << std::string(name_w, '-') << "-+-----------+-------------------+---------------------+------\n";
  for (const auto& row : r.rows) {
    char ssim[32];
    if (row.error) std::snprintf(ssim, sizeof ssim, "%9s", "failed");
    else std::snprintf(ssim, sizeof ssim, "%9.4f", row.mean_ssim);
    std::snprintf(buf, sizeof buf, "%-*s | %s | %7d / %7d | %8d / %8d | %5d\n", static_cast<int>(name_w),
                  row.method.c_str(), ssim, row.orb.correct, row.orb.incorrect, row.aruco.correct,
                  row.aruco.missed, row.aruco.false_detections);
    out << buf;
    if (row.error) out << "  ! " << *row.error << "\n";
  }
  return out.str();
}

namespace detail {

inline EvalRow score_method(const std::string& name, const std::function<Image(const Image&)>& apply,
                            const std::vector<ImagePair>& pairs, const Scenario& sc,
                            const EvalOptions& opt, bool reference) {
  EvalRow row;
  row.method = name;
  row.orb.ratio_threshold = opt.ratio;
  try {
    double sum = 0.0;
    for (const auto& p : pairs) {
      sum += ssim_index(reference ? p.ground_truth : apply(p.input_ir), p.ground_truth);
    }
    row.mean_ssim = pairs.empty() ? 0.0 : sum / static_cast<double>(pairs.size());
    for (const auto& w : sc.warps) {
      const Image a = reference ? w.clean_a : apply(w.raw_a);
      const Image b = reference ? w.clean_b : apply(w.raw_b);
      row.orb += orb_match_eval(a, b, w.h, opt.ratio, opt.reproj_px, opt.orb);
    }
    for (const auto& f : sc.frames) {
      row.aruco += aruco_eval(reference ? f.clean : apply(f.raw), f.markers);
    }
  } catch (const std::exception& e) {
    row = EvalRow{};
    row.method = name;
    row.error = e.what();
  }
  return row;
}

}  // namespace detail

inline std::string suite_config_hash(const std::vector<Method>& methods, const ScenarioConfig& sc,
                                     const EvalOptions& opt) {
  nlohmann::json names = nlohmann::json::array();
  for (const auto& m : methods) names.push_back(m.name);
  const nlohmann::json j = {{"methods", names},
                            {"scenario", to_json(sc)},
                            {"ratio", opt.ratio},
                            {"reproj_px", opt.reproj_px},
                            {"orb", to_json(opt.orb)},
                            {"reference_row", opt.reference_row}};
  const std::string s = j.dump();
  return hex64(fnv1a64(s.data(), s.size()));
}

/// Scores every method on the manifest pairs (mean SSIM to ground truth) and
/// on the synthetic scenario (ORB matches over warp pairs, marker counts over
/// marker frames). Rows come back sorted by method name; a method that
/// throws yields a flagged row.
inline EvalReport evaluate_suite(const std::vector<Method>& methods, const DatasetManifest& manifest,
                                 const ScenarioConfig& scenario, const EvalOptions& opt = {}) {
  if (manifest.entries.empty()) throw ManifestError("evaluation manifest is empty");
  if (methods.empty() && !opt.reference_row) throw ParameterError("no methods to evaluate");
  std::vector<std::string> names;
  for (const auto& m : methods) {
    if (m.name.empty() || !m.apply) throw ParameterError("method needs a name and a transform");
    if (opt.reference_row && m.name == kReferenceMethod) throw ParameterError("method name 'gt' is reserved");
    names.push_back(m.name);
  }
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) throw ParameterError("duplicate method name");

  std::vector<ManifestEntry> entries = manifest.entries;
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.pair_id < b.pair_id; });
  std::vector<ImagePair> pairs;
  for (const auto& e : entries) pairs.push_back(manifest.load_pair(e));
  const Scenario sc = build_scenario(scenario);
  DatasetManifest canonical = manifest;
  canonical.entries = entries;

  EvalReport report;
  report.dataset_id = manifest_content_id(canonical);
  report.config_hash = suite_config_hash(methods, scenario, opt);
  for (const auto& m : methods) report.rows.push_back(detail::score_method(m.name, m.apply, pairs, sc, opt, false));
  if (opt.reference_row) report.rows.push_back(detail::score_method(kReferenceMethod, {}, pairs, sc, opt, true));
  std::sort(report.rows.begin(), report.rows.end(),
            [](const EvalRow& a, const EvalRow& b) { return a.method < b.method; });
  return report;
}

}  // namespace clearir
