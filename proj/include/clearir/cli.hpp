#pragma once

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "clearir/augment.hpp"
#include "clearir/emitter.hpp"
#include "clearir/error.hpp"
#include "clearir/evaluation.hpp"
#include "clearir/io.hpp"
#include "clearir/manifest.hpp"
#include "clearir/train.hpp"
#include "clearir/unet.hpp"

namespace clearir {

// ---------------------------------------------------------------------------
// Comparison grid

struct ComparisonTriple {
  Image raw, denoised, ground_truth;
};

inline constexpr int kGridGutter = 4;
inline constexpr float kGridGutterValue = 1.0f;

/// Rows of raw | denoised | ground truth separated by fixed white gutters.
inline Image comparison_grid(const std::vector<ComparisonTriple>& rows) {
  if (rows.empty()) throw ParameterError("comparison grid needs at least one triple");
  const int h = rows[0].raw.height(), w = rows[0].raw.width();
  for (const auto& t : rows) {
    for (const Image* img : {&t.raw, &t.denoised, &t.ground_truth}) {
      if (img->height() != h || img->width() != w) throw DimensionError("comparison grid tiles differ in size");
    }
  }
  const int n = static_cast<int>(rows.size());
  Image grid(n * h + (n - 1) * kGridGutter, 3 * w + 2 * kGridGutter, kGridGutterValue);
  for (int r = 0; r < n; ++r) {
    const auto& t = rows[static_cast<std::size_t>(r)];
    const Image* cols[3] = {&t.raw, &t.denoised, &t.ground_truth};
    for (int c = 0; c < 3; ++c) {
      const int y0 = r * (h + kGridGutter), x0 = c * (w + kGridGutter);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) grid.at(y0 + y, x0 + x) = cols[c]->at(y, x);
    }
  }
  return grid;
}

inline void render_comparison_grid(const std::vector<ComparisonTriple>& rows, const fs::path& out_path) {
  save_image(comparison_grid(rows), out_path);
}

// ---------------------------------------------------------------------------
// Command line

namespace cli {

inline nlohmann::json read_json_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + p.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse '" + p.string() + "': " + e.what());
  }
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << s;
  if (!out) throw IoError("failed writing '" + p.string() + "'");
}

inline void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create '" + p.string() + "': " + ec.message());
}

// Writes a manifest file whose root points back at the source dataset.
inline void write_split(const DatasetManifest& m, const fs::path& file) {
  DatasetManifest out = m;
  const fs::path dir = file.parent_path().empty() ? fs::path(".") : file.parent_path();
  out.root_dir = fs::relative(fs::absolute(m.root()), fs::absolute(dir)).generic_string();
  if (out.root_dir.empty()) out.root_dir = ".";
  write_manifest(out, file);
}

struct Logger {
  std::ostream& err;
  int verbosity = 1;

  void event(const std::string& name, nlohmann::json fields = nlohmann::json::object()) const {
    if (verbosity < 1) return;
    fields["event"] = name;
    err << fields.dump() << '\n';
  }
};

struct Options {
  std::optional<std::uint64_t> seed;
  int verbosity = 1;

  std::string config, out, data, val, model, in, methods = "raw,clahe", scenario, grid;
  int grid_rows = 4;
  bool resize = false;
  int max_epochs = 0;
};

inline int cmd_synth(const Options& o, const Logger& log) {
  DatasetConfig cfg = dataset_config_from_json(read_json_file(o.config));
  if (o.seed) cfg.seed_base = *o.seed;
  cfg.validate();
  const DatasetManifest m = generate_dataset(cfg, o.out);
  log.event("synth", {{"entries", m.size()}, {"out", o.out}, {"dataset_id", manifest_content_id(m)}});
  return 0;
}

inline int cmd_augment(const Options& o, const Logger& log) {
  AugmentSpec spec = o.config.empty() ? AugmentSpec{} : augment_spec_from_json(read_json_file(o.config));
  if (o.seed) spec.seed = *o.seed;
  spec.validate();
  const DatasetManifest src = read_manifest(o.data);
  const DatasetManifest m = expand_dataset(src, spec, o.out);
  log.event("augment", {{"entries", m.size()}, {"out", o.out}, {"dataset_id", manifest_content_id(m)}});
  return 0;
}

inline int cmd_train(const Options& o, const Logger& log) {
  TrainConfig cfg = train_config_from_json(read_json_file(o.config));
  if (o.seed) cfg.seed = *o.seed;
  if (o.max_epochs > 0) cfg.max_epochs = o.max_epochs;
  cfg.validate();
  const DatasetManifest data = read_manifest(o.data);
  DatasetManifest train_set, val_set;
  if (o.val.empty()) {
    std::tie(train_set, val_set) = split_dataset(data, cfg.split_fraction, cfg.seed);
  } else {
    train_set = data;
    val_set = read_manifest(o.val);
  }
  const auto fx = cfg.weights.epsilon > 0.0 ? std::optional(make_feature_extractor(cfg)) : std::nullopt;
  UNet<float> model(cfg.unet, cfg.seed);

  const fs::path out(o.out);
  make_dirs(out);
  write_split(train_set, out / "train_manifest.json");
  write_split(val_set, out / "val_manifest.json");
  write_text(out / "train_config.json", to_json(cfg).dump(2) + "\n");
  TrainHooks hooks;
  hooks.checkpoint = out / "best.bin";
  hooks.progress_log = out / "progress.jsonl";
  hooks.on_epoch = [&](const EpochRecord& r) {
    nlohmann::json j = to_json(r);
    log.event("epoch", j);
  };
  const TrainReport report = train(model, cfg, train_set, val_set, fx ? &*fx : nullptr, hooks);
  write_text(out / "train_report.json", to_json(report).dump(2) + "\n");
  log.event("trained", {{"epochs_run", report.epochs_run},
                        {"best_epoch", report.best_epoch},
                        {"best_val_loss", report.best_val_loss},
                        {"stop_reason", to_string(report.stop)}});
  return 0;
}

inline int cmd_denoise(const Options& o, const Logger& log) {
  if (o.in.empty() == o.data.empty()) throw ConfigError("denoise needs exactly one of --in or --data");
  auto [model, meta] = load_checkpoint<float>(o.model);
  if (!o.in.empty()) {
    const Image ir = load_image(o.in);
    const Image out = denoise(model, ir, o.resize);
    save_image(out, o.out);
    log.event("denoise", {{"in", o.in}, {"out", o.out}});
    return 0;
  }
  const DatasetManifest m = read_manifest(o.data);
  std::vector<ComparisonTriple> triples;
  std::vector<std::pair<std::string, Image>> outputs;
  for (const auto& e : m.entries) {
    const ImagePair p = m.load_pair(e);
    Image d = denoise(model, p.input_ir, o.resize);
    if (static_cast<int>(triples.size()) < o.grid_rows) triples.push_back({p.input_ir, d, p.ground_truth});
    outputs.emplace_back(e.pair_id, std::move(d));
  }
  const fs::path out(o.out);
  make_dirs(out);
  for (const auto& [id, img] : outputs) save_image(img, out / (id + ".png"));
  if (!o.grid.empty()) render_comparison_grid(triples, o.grid);
  log.event("denoise", {{"images", outputs.size()}, {"out", o.out}});
  return 0;
}

inline std::vector<Method> parse_methods(const std::string& spec) {
  std::vector<Method> methods;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "raw") {
      methods.push_back(raw_method());
    } else if (tok == "clahe") {
      methods.push_back(clahe_method());
    } else if (tok.rfind("model:", 0) == 0) {
      const fs::path ckpt = tok.substr(6);
      auto model = std::make_shared<const UNet<float>>(load_checkpoint<float>(ckpt).first);
      const int k = static_cast<int>(std::count_if(methods.begin(), methods.end(), [](const Method& m) {
        return m.name.rfind("model", 0) == 0;
      }));
      methods.push_back(model_method<float>(model, k == 0 ? "model" : "model" + std::to_string(k + 1)));
    } else {
      throw ConfigError("unknown method '" + tok + "' (expected raw, clahe or model:<checkpoint>)");
    }
  }
  if (methods.empty()) throw ConfigError("no methods given");
  return methods;
}

inline int cmd_eval(const Options& o, const Logger& log, std::ostream& out) {
  ScenarioConfig sc = o.scenario.empty() ? ScenarioConfig{} : scenario_config_from_json(read_json_file(o.scenario));
  if (o.seed) sc.seed = *o.seed;
  sc.validate();
  const std::vector<Method> methods = parse_methods(o.methods);
  const DatasetManifest m = read_manifest(o.data);
  const EvalReport report = evaluate_suite(methods, m, sc);
  out << render_table(report);
  const std::string json = to_json(report).dump(2) + "\n";
  if (o.out.empty()) {
    out << json;
  } else {
    const fs::path p(o.out);
    if (p.has_parent_path()) make_dirs(p.parent_path());
    write_text(p, json);
  }
  log.event("eval", {{"rows", report.rows.size()}, {"dataset_id", report.dataset_id}});
  return 0;
}

}  // namespace cli

/// Entry point behind the clear_ir binary. Returns 0 on success, 1 on usage
/// or validation errors, 2 on runtime failures.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Removes structured-light emitter dots from IR frames", "clear_ir"};
  app.require_subcommand(1);
  cli::Options o;
  std::uint64_t seed = 0;
  bool quiet = false;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--seed", seed, "Global seed; every stage derives its own stream from it");
    c->add_flag("-q,--quiet", quiet, "Suppress JSON log lines");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic paired dataset");
  synth->add_option("--config", o.config, "Scene config JSON")->required();
  synth->add_option("--out", o.out, "Output dataset directory")->required();
  add_common(synth);

  auto* augment = app.add_subcommand("augment", "Expand a dataset with augmented copies");
  augment->add_option("--data", o.data, "Source dataset (directory or manifest)")->required();
  augment->add_option("--out", o.out, "Output dataset directory")->required();
  augment->add_option("--config", o.config, "Augmentation spec JSON");
  add_common(augment);

  auto* train = app.add_subcommand("train", "Train the U-Net");
  train->add_option("--config", o.config, "Training config JSON")->required();
  train->add_option("--data", o.data, "Training dataset")->required();
  train->add_option("--val", o.val, "Validation dataset (default: split --data)");
  train->add_option("--out", o.out, "Run directory")->required();
  train->add_option("--max-epochs", o.max_epochs, "Override max_epochs");
  add_common(train);

  auto* den = app.add_subcommand("denoise", "Run a trained model on images");
  den->add_option("--model", o.model, "Checkpoint")->required();
  den->add_option("--in", o.in, "Single input image");
  den->add_option("--data", o.data, "Dataset to denoise");
  den->add_option("--out", o.out, "Output image (with --in) or directory (with --data)")->required();
  den->add_flag("--resize", o.resize, "Resample inputs to the model size and back");
  den->add_option("--grid", o.grid, "Also write a raw | denoised | gt comparison grid");
  den->add_option("--grid-rows", o.grid_rows, "Rows in the comparison grid")->check(CLI::PositiveNumber);
  add_common(den);

  auto* ev = app.add_subcommand("eval", "Score methods on a dataset and synthetic scenarios");
  ev->add_option("--methods", o.methods, "Comma list of raw, clahe, model:<checkpoint>");
  ev->add_option("--data", o.data, "Evaluation dataset")->required();
  ev->add_option("--scenario", o.scenario, "Scenario config JSON");
  ev->add_option("--out", o.out, "Report JSON path (default: stdout)");
  add_common(ev);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  for (auto* c : {synth, augment, train, den, ev}) {
    if (c->parsed() && c->count("--seed") > 0) o.seed = seed;
  }
  o.verbosity = quiet ? 0 : 1;
  const cli::Logger log{err, o.verbosity};
  try {
    if (synth->parsed()) return cli::cmd_synth(o, log);
    if (augment->parsed()) return cli::cmd_augment(o, log);
    if (train->parsed()) return cli::cmd_train(o, log);
    if (den->parsed()) return cli::cmd_denoise(o, log);
    return cli::cmd_eval(o, log, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace clearir
