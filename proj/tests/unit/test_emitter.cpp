#include <gtest/gtest.h>

#include <fstream>

#include "clearir/emitter.hpp"
#include "clearir/losses.hpp"
#include "helpers.hpp"

using namespace clearir;
using testing_util::TempDir;

namespace {

SceneSpec flat_spec(int h, int w, float depth, float rho, double power, double ambient, float base = 0.2f) {
  return {Image(h, w, base), ScalarMap(h, w, depth), ScalarMap(h, w, rho), power, ambient, 1};
}

DotField single_dot(double x, double y) { return {{Point2{x, y}}, {1.0f}}; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

SceneConfig small_config(double ambient, double power = 1.0) {
  SceneConfig c;
  c.height = 64;
  c.width = 80;
  c.ambient = ambient;
  c.power = power;
  return c;
}

}  // namespace

TEST(DotPattern, DeterministicAndInBounds) {
  const DotField a = generate_dot_pattern(9, 15, 0.5, 96, 128);
  EXPECT_EQ(a, generate_dot_pattern(9, 15, 0.5, 96, 128));
  EXPECT_NE(a, generate_dot_pattern(10, 15, 0.5, 96, 128));
  ASSERT_EQ(a.centers.size(), a.base_amplitude.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_GE(a.centers[i].x, -0.5);
    EXPECT_LT(a.centers[i].x, 127.5);
    EXPECT_GE(a.centers[i].y, -0.5);
    EXPECT_LT(a.centers[i].y, 95.5);
    EXPECT_GT(a.base_amplitude[i], 0.0f);
    EXPECT_LE(a.base_amplitude[i], 1.0f);
  }
}

TEST(DotPattern, ZeroDensityAndErrors) {
  EXPECT_EQ(generate_dot_pattern(1, 0, 0.5, 50, 50).size(), 0u);
  EXPECT_THROW(generate_dot_pattern(1, -1, 0.5, 50, 50), ParameterError);
  EXPECT_THROW(generate_dot_pattern(1, 5, 1.5, 50, 50), ParameterError);
}

TEST(DotPattern, CountMatchesDensity) {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto n = static_cast<double>(generate_dot_pattern(seed, 20, 0.5, 100, 200).size());
    EXPECT_NEAR(n, 400.0, 40.0) << seed;
    total += n;
  }
  EXPECT_NEAR(total / 100.0, 400.0, 4.0);
}

TEST(EmitterLayer, InverseSquare) {
  SceneSpec spec = flat_spec(40, 80, 1.0f, 0.5f, 1.0, 0.0);
  for (int y = 0; y < 40; ++y)
    for (int x = 40; x < 80; ++x) spec.depth_map.at(y, x) = 2.0f;
  const DotField dots{{Point2{20, 20}, Point2{60, 20}}, {1.0f, 1.0f}};
  const Image layer = render_emitter_layer(dots, spec);
  EXPECT_NEAR(layer.at(20, 20) / layer.at(20, 60), 4.0, 0.04);
  EXPECT_NEAR(layer.at(20, 20), 0.5, 1e-6);

  for (double d : {0.5, 0.75, 1.0, 1.6, 2.5, 4.0}) {
    const SceneSpec s = flat_spec(32, 32, static_cast<float>(d), 0.2f, 1.0, 0.0);
    const double peak = render_emitter_layer(single_dot(16, 16), s).at(16, 16);
    EXPECT_NEAR(peak * d * d, 0.2, 0.002) << d;
  }
}

TEST(EmitterLayer, CloserDotsAreLarger) {
  const Image near = render_emitter_layer(single_dot(16, 16), flat_spec(32, 32, 0.7f, 0.2f, 1.0, 0.0));
  const Image far = render_emitter_layer(single_dot(16, 16), flat_spec(32, 32, 2.0f, 0.2f, 1.0, 0.0));
  EXPECT_GT(near.at(16, 18) / near.at(16, 16), far.at(16, 18) / far.at(16, 16));
}

TEST(EmitterLayer, ZeroReflectivityAndPowerLinearity) {
  const SceneSpec spec = build_scene_spec(small_config(0.1), 4);
  const DotField dots = generate_dot_pattern(4, 15, 0.5, 64, 80);
  SceneSpec dark = spec;
  std::fill(dark.reflectivity_map.values.begin(), dark.reflectivity_map.values.end(), 0.0f);
  for (float v : render_emitter_layer(dots, dark).pixels()) ASSERT_EQ(v, 0.0f);

  SceneSpec lo = spec, hi = spec;
  std::fill(lo.depth_map.values.begin(), lo.depth_map.values.end(), 1.5f);
  hi.depth_map = lo.depth_map;
  lo.emitter_power = 0.4;
  hi.emitter_power = 0.8;
  const Image a = render_emitter_layer(dots, lo), b = render_emitter_layer(dots, hi);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(b.pixels()[i], 2.0f * a.pixels()[i], 1e-6f);
  hi.emitter_power = 40.0;
  for (float v : render_emitter_layer(dots, hi).pixels()) ASSERT_LE(v, 1.0f);
}

TEST(EmitterLayer, SpecValidation) {
  SceneSpec s = flat_spec(32, 32, 1.0f, 0.5f, 1.0, 0.0);
  s.depth_map.at(3, 3) = 0.0f;
  EXPECT_THROW(render_emitter_layer({}, s), ParameterError);
  s = flat_spec(32, 32, 1.0f, 0.5f, 1.0, 0.0);
  s.reflectivity_map = ScalarMap(16, 32, 0.5f);
  EXPECT_THROW(render_emitter_layer({}, s), DimensionError);
  s = flat_spec(32, 32, 1.0f, 0.5f, -1.0, 0.0);
  EXPECT_THROW(render_emitter_layer({}, s), ParameterError);
}

TEST(Composite, ClosedFormPixel) {
  const SceneSpec spec = flat_spec(16, 16, 1.0f, 0.5f, 1.0, 0.5, 0.2f);
  const Image frame = composite_ir_frame(spec, Image(16, 16, 0.4f), 0.0);
  EXPECT_NEAR(frame.at(5, 5), 0.33f, 1e-6f);
  EXPECT_THROW(composite_ir_frame(spec, Image(16, 17), 0.0), DimensionError);
  EXPECT_THROW(composite_ir_frame(spec, Image(16, 16), -0.1), ParameterError);
}

TEST(Composite, FullAmbientNoPowerIsIdentity) {
  SceneSpec spec = build_scene_spec(small_config(1.0, 0.0), 12);
  const ImagePair p = synth_pair(spec, {15, 0.5, 0.0});
  EXPECT_EQ(p.input_ir, spec.base_image);
}

TEST(Composite, EmitterContributionFallsWithAmbient) {
  SceneSpec spec = build_scene_spec(small_config(0.0), 21);
  const DotField dots = generate_dot_pattern(21, 15, 0.5, 64, 80);
  const Image layer = render_emitter_layer(dots, spec);
  std::vector<float> prev(layer.size(), 2.0f);
  for (int k = 0; k <= 10; ++k) {
    spec.ambient = k / 10.0;
    const Image f = composite_ir_frame(spec, layer, 0.0);
    const auto g = static_cast<float>(scene_visibility(spec.ambient));
    for (std::size_t i = 0; i < f.size(); ++i) {
      const float contrib = f.pixels()[i] - spec.base_image.pixels()[i] * g;
      ASSERT_LE(contrib, prev[i] + 1e-6f);
      if (k == 10) {
        ASSERT_NEAR(contrib, 0.0f, 1e-6f);
      } else if (k == 0 && layer.pixels()[i] > 0.05f) {
        spec.ambient = 1.0;
        ASSERT_GT(contrib, composite_ir_frame(spec, layer, 0.0).pixels()[i] -
                               spec.base_image.pixels()[i] * static_cast<float>(scene_visibility(1.0)));
        spec.ambient = 0.0;
      }
      prev[i] = contrib;
    }
  }
}

TEST(SynthPair, DeterministicAndAligned) {
  const SceneSpec spec = build_scene_spec(small_config(0.2), 31);
  const ImagePair a = synth_pair(spec, {});
  const ImagePair b = synth_pair(spec, {});
  EXPECT_EQ(a.input_ir, b.input_ir);
  EXPECT_EQ(a.ground_truth, spec.base_image);
  EXPECT_EQ(a.provenance, Provenance::synthetic);
  EXPECT_EQ(a.seed, 31u);
  SceneSpec other = spec;
  other.seed = 32;
  EXPECT_NE(synth_pair(other, {}).input_ir, a.input_ir);
}

TEST(SynthPair, DefaultPatternIsVisible) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SceneConfig c;
    c.height = seed % 2 ? 96 : 240;
    c.width = seed % 2 ? 128 : 320;
    c.ambient = 0.1;
    const SceneSpec spec = build_scene_spec(c, seed);
    const ImagePair p = synth_pair(spec, {});
    EXPECT_LT(ssim_index(p.input_ir, p.ground_truth), 0.95) << seed;
  }
}

TEST(Dataset, CountsAndReproducibility) {
  TempDir dir("emitter_ds");
  std::vector<SceneConfig> cfgs;
  for (int i = 0; i < 10; ++i) cfgs.push_back(small_config(i / 10.0, 0.5 + i / 10.0));
  const DatasetManifest a = generate_dataset(cfgs, dir / "a", 100);
  generate_dataset(cfgs, dir / "b", 100);
  EXPECT_EQ(a.size(), 10u);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) files += e.path().extension() == ".png";
  EXPECT_EQ(files, 20);
  EXPECT_EQ(a.entries[3].seed, 103u);
  for (const auto& e : a.entries) {
    EXPECT_EQ(slurp(dir / "a" / e.input_path), slurp(dir / "b" / e.input_path));
    EXPECT_EQ(slurp(dir / "a" / e.gt_path), slurp(dir / "b" / e.gt_path));
  }
  EXPECT_EQ(slurp(dir / "a/manifest.json"), slurp(dir / "b/manifest.json"));
  EXPECT_THROW(generate_dataset(std::vector<SceneConfig>{}, dir / "c", 0), ConfigError);
}

TEST(Dataset, ProbeDotDimsWithAmbient) {
  TempDir dir("emitter_probe");
  SceneConfig base = small_config(0.0);
  base.pattern.noise_sigma = 0.0;
  base.marker_probability = 0.0;
  const SceneSpec spec = build_scene_spec(base, 55);
  const Image layer =
      render_emitter_layer(generate_dot_pattern(55, base.pattern.density, base.pattern.jitter, 64, 80), spec);
  std::size_t probe = 0;
  for (std::size_t i = 0; i < layer.size(); ++i) {
    if (spec.base_image.pixels()[i] * 0.3f + layer.pixels()[i] < 0.95f && layer.pixels()[i] > layer.pixels()[probe])
      probe = i;
  }
  ASSERT_GT(layer.pixels()[probe], 0.2f);

  std::vector<double> contrib;
  for (double a : {0.0, 0.5, 1.0}) {
    SceneConfig c = base;
    c.ambient = a;
    const fs::path out = dir / std::to_string(contrib.size());
    const DatasetManifest m = generate_dataset({c}, out, 55);
    const ImagePair p = m.load_pair(m.entries[0]);
    contrib.push_back(p.input_ir.pixels()[probe] - p.ground_truth.pixels()[probe] * scene_visibility(a));
  }
  EXPECT_GT(contrib[0], contrib[1]);
  EXPECT_GT(contrib[1], contrib[2]);
}

TEST(DatasetConfig, JsonAndExpansion) {
  const DatasetConfig c = dataset_config_from_json(
      nlohmann::json::parse(R"({"count": 5, "height": 32, "width": 48, "ambient_range": [0.2, 0.4], "seed_base": 9})"));
  EXPECT_EQ(to_json(dataset_config_from_json(to_json(c))), to_json(c));
  const auto cfgs = expand_scene_configs(c);
  ASSERT_EQ(cfgs.size(), 5u);
  for (const auto& s : cfgs) {
    EXPECT_GE(s.ambient, 0.2);
    EXPECT_LE(s.ambient, 0.4);
    EXPECT_LE(s.depth_near_m, s.depth_far_m);
  }
  EXPECT_THROW(dataset_config_from_json(nlohmann::json::parse(R"({"count": 0})")), ConfigError);
  EXPECT_THROW(dataset_config_from_json(nlohmann::json::parse(R"({"ambient_range": [0.5, 0.1]})")), ConfigError);
  EXPECT_THROW(dataset_config_from_json(nlohmann::json::parse(R"({"count": "many"})")), ConfigError);
}
