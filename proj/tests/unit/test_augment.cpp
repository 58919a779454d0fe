#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "clearir/augment.hpp"
#include "clearir/emitter.hpp"
#include "helpers.hpp"

using namespace clearir;
using testing_util::random_image;
using testing_util::TempDir;

namespace {

ImagePair make_pair(std::uint64_t seed, int h = 48, int w = 64) {
  ImagePair p;
  p.input_ir = random_image(seed, h, w);
  p.ground_truth = random_image(seed + 1, h, w);
  p.pair_id = "p" + std::to_string(seed);
  return p;
}

Image dot_probe(int h, int w, Point2 c) {
  Image img(h, w, 0.1f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double r2 = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y);
      img.at(y, x) = static_cast<float>(0.1 + 0.8 * std::exp(-r2 / (2 * 2.0 * 2.0)));
    }
  return img;
}

Point2 centroid_near(const Image& img, Point2 guess) {
  double sx = 0, sy = 0, sw = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      if (std::hypot(x - guess.x, y - guess.y) > 6.0) continue;
      const double v = std::max(0.0, img.at(y, x) - 0.1);
      sx += v * x;
      sy += v * y;
      sw += v;
    }
  return {sx / sw, sy / sw};
}

DatasetManifest small_dataset(const fs::path& dir, std::size_t n) {
  std::vector<ManifestEntry> entries;
  fs::create_directories(dir / "input");
  fs::create_directories(dir / "gt");
  for (std::size_t i = 0; i < n; ++i) {
    const ImagePair p = make_pair(10 + i, 32, 32);
    const std::string id = "s" + std::to_string(i);
    save_image(p.input_ir, dir / "input" / (id + ".png"));
    save_image(p.ground_truth, dir / "gt" / (id + ".png"));
    entries.push_back({id, "input/" + id + ".png", "gt/" + id + ".png", Provenance::synthetic, i});
  }
  return write_manifest(entries, dir);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(AugmentSpec, Validation) {
  EXPECT_NO_THROW(AugmentSpec{}.validate());
  AugmentSpec s;
  s.max_rotation_deg = 31;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.max_zoom_frac = 0.31;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.contrast_lo = 1.3;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_EQ(to_json(augment_spec_from_json(to_json(AugmentSpec{}))), to_json(AugmentSpec{}));
}

TEST(AugmentPair, ZeroRangesAreIdentity) {
  const ImagePair p = make_pair(1);
  const ImagePair out = augment_pair(p, AugmentSpec::none(), 77);
  EXPECT_LE(max_abs_diff(out.input_ir, p.input_ir), 1e-6f);
  EXPECT_LE(max_abs_diff(out.ground_truth, p.ground_truth), 1e-6f);
}

TEST(AugmentPair, GeometricOnlyKeepsEqualImagesEqual) {
  ImagePair p = make_pair(2);
  p.ground_truth = p.input_ir;
  const AugmentSpec spec = AugmentSpec{}.geometric_only();
  for (std::uint64_t s = 0; s < 20; ++s) {
    const ImagePair out = augment_pair(p, spec, s);
    EXPECT_TRUE(out.input_ir == out.ground_truth) << "draw " << s;
  }
}

TEST(AugmentPair, PhotometricTouchesInputOnly) {
  const ImagePair p = make_pair(3);
  AugmentSpec spec = AugmentSpec::none();
  spec.brightness_delta = 0.2;
  spec.contrast_lo = 0.8;
  spec.contrast_hi = 1.25;
  const ImagePair out = augment_pair(p, spec, 5);
  EXPECT_TRUE(out.ground_truth == p.ground_truth);
  EXPECT_GT(max_abs_diff(out.input_ir, p.input_ir), 0.0f);
  EXPECT_NO_THROW(out.input_ir.validate());
}

TEST(AugmentPair, SampledBounds) {
  const AugmentSpec spec;
  double max_angle = 0.0, max_zoom = 0.0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const AugmentDraw d = sample_augment(spec, s);
    EXPECT_LE(std::abs(d.angle_deg), 30.0);
    EXPECT_GE(d.zoom, 1.0);
    EXPECT_LE(d.zoom, 1.3);
    EXPECT_LE(std::abs(d.translate_x), 0.1);
    EXPECT_LE(std::abs(d.brightness), 0.2);
    EXPECT_GE(d.contrast, 0.8);
    EXPECT_LE(d.contrast, 1.25);
    max_angle = std::max(max_angle, std::abs(d.angle_deg));
    max_zoom = std::max(max_zoom, d.zoom - 1.0);
  }
  EXPECT_GT(max_angle, 25.0);
  EXPECT_GT(max_zoom, 0.25);
}

TEST(AugmentPair, DotProbesStayAligned) {
  const int h = 64, w = 80;
  const AugmentSpec spec = AugmentSpec{}.geometric_only();
  const Point2 c{41.0, 30.0};
  ImagePair p;
  p.input_ir = dot_probe(h, w, c);
  p.ground_truth = dot_probe(h, w, c);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const AugmentDraw d = sample_augment(spec, s);
    const Point2 expect = d.forward(h, w).apply(c);
    const ImagePair out = augment_pair(p, spec, s);
    const Point2 a = centroid_near(out.input_ir, expect);
    const Point2 b = centroid_near(out.ground_truth, expect);
    EXPECT_LT(distance(a, expect), 0.5) << "draw " << s;
    EXPECT_LT(distance(a, b), 1e-9);
  }
}

TEST(AugmentPair, Deterministic) {
  const ImagePair p = make_pair(4);
  const AugmentSpec spec;
  EXPECT_TRUE(augment_pair(p, spec, 9).input_ir == augment_pair(p, spec, 9).input_ir);
  EXPECT_FALSE(augment_pair(p, spec, 9).input_ir == augment_pair(p, spec, 10).input_ir);
}

TEST(ExpandDataset, CountsAndProvenance) {
  TempDir dir("augment");
  const DatasetManifest src = small_dataset(dir / "src", 2);
  const DatasetManifest out = expand_dataset(src, AugmentSpec{}, dir / "aug");
  ASSERT_EQ(out.size(), 10u);
  std::set<std::string> ids;
  for (const auto& e : out.entries) {
    EXPECT_EQ(e.provenance, Provenance::augmented);
    ids.insert(e.pair_id);
  }
  EXPECT_EQ(ids.size(), 10u);
  // Copy 0 keeps the original.
  const ImagePair orig = src.load_pair(src.entries[0]);
  const ImagePair first = out.load_pair(out.entries[0]);
  EXPECT_TRUE(orig.input_ir == first.input_ir);
  EXPECT_EQ(read_manifest(dir / "aug"), out);
}

TEST(ExpandDataset, FixedSeedIsByteIdentical) {
  TempDir dir("augment_det");
  const DatasetManifest src = small_dataset(dir / "src", 3);
  AugmentSpec spec;
  spec.seed = 42;
  const DatasetManifest a = expand_dataset(src, spec, dir / "a");
  const DatasetManifest b = expand_dataset(src, spec, dir / "b");
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
  for (const auto& e : a.entries) {
    EXPECT_EQ(slurp(a.input_file(e)), slurp(b.input_file(e)));
    EXPECT_EQ(slurp(a.gt_file(e)), slurp(b.gt_file(e)));
  }
}

TEST(ExpandDataset, Errors) {
  TempDir dir("augment_err");
  DatasetManifest empty;
  EXPECT_THROW(expand_dataset(empty, AugmentSpec{}, dir / "x"), ManifestError);
  DatasetManifest src = small_dataset(dir / "src", 1);
  fs::remove(src.input_file(src.entries[0]));
  EXPECT_THROW(expand_dataset(src, AugmentSpec{}, dir / "y"), IoError);
}
