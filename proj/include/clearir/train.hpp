#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clearir/error.hpp"
#include "clearir/features.hpp"
#include "clearir/io.hpp"
#include "clearir/losses.hpp"
#include "clearir/manifest.hpp"
#include "clearir/rng.hpp"
#include "clearir/schedule.hpp"
#include "clearir/unet.hpp"

namespace clearir {

struct TrainConfig {
  LossWeights weights = LossWeights::defaults();
  std::vector<std::string> perceptual_layers = default_perceptual_layers();
  // "vgg19" loads published weights from the cache; "test" uses the frozen
  // random extractor (offline).
  std::string feature_extractor = "vgg19";
  UNetConfig unet = UNetConfig::desk_scale();
  int batch_size = 8;
  int max_epochs = 200;
  double initial_lr = 1e-4;
  int first_period_epochs = 10;
  double period_mult = 2.0;
  double min_fraction = 0.01;
  int patience = 30;
  double split_fraction = 0.9;
  std::uint64_t seed = 0;

  void validate() const {
    weights.validate();
    unet.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (first_period_epochs < 1) throw ConfigError("first_period_epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split_fraction must lie in (0,1)");
    if (feature_extractor != "vgg19" && feature_extractor != "test") {
      throw ConfigError("feature_extractor must be 'vgg19' or 'test'");
    }
    schedule(1).validate();
  }

  CosineRestarts schedule(std::int64_t steps_per_epoch) const {
    return {initial_lr, static_cast<std::int64_t>(first_period_epochs) * steps_per_epoch, period_mult,
            min_fraction};
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"weights", to_json(c.weights)},
          {"perceptual_layers", c.perceptual_layers},
          {"feature_extractor", c.feature_extractor},
          {"unet", to_json(c.unet)},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"initial_lr", c.initial_lr},
          {"first_period_epochs", c.first_period_epochs},
          {"period_mult", c.period_mult},
          {"min_fraction", c.min_fraction},
          {"patience", c.patience},
          {"split_fraction", c.split_fraction},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("weights")) c.weights = loss_weights_from_json(j.at("weights"));
    if (j.contains("unet")) c.unet = unet_config_from_json(j.at("unet"));
    c.perceptual_layers = j.value("perceptual_layers", c.perceptual_layers);
    c.feature_extractor = j.value("feature_extractor", c.feature_extractor);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.initial_lr = j.value("initial_lr", c.initial_lr);
    c.first_period_epochs = j.value("first_period_epochs", c.first_period_epochs);
    c.period_mult = j.value("period_mult", c.period_mult);
    c.min_fraction = j.value("min_fraction", c.min_fraction);
    c.patience = j.value("patience", c.patience);
    c.split_fraction = j.value("split_fraction", c.split_fraction);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

inline std::size_t train_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

/// Shuffled partition: ceil(fraction * N) entries for training, the rest for
/// validation.
inline std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& m, double fraction,
                                                                 std::uint64_t seed) {
  if (m.empty()) throw ManifestError("cannot split an empty manifest");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ParameterError("split fraction must lie in (0,1)");
  std::vector<std::size_t> order(m.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, stream::split));
  rng.shuffle(order.begin(), order.end());
  const std::size_t k = train_count(m.size(), fraction);
  DatasetManifest a = m, b = m;
  a.entries.clear();
  b.entries.clear();
  for (std::size_t i = 0; i < order.size(); ++i) (i < k ? a : b).entries.push_back(m.entries[order[i]]);
  return {std::move(a), std::move(b)};
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown train;
  double val_total = 0.0;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},           {"lr", r.lr},
          {"train_mae", r.train.mae},   {"train_ssim", r.train.ssim},
          {"train_freq", r.train.freq}, {"train_sobel", r.train.sobel},
          {"train_perceptual", r.train.perceptual},
          {"train_tv", r.train.tv},     {"train_total", r.train.total},
          {"val_total", r.val_total}};
}

enum class StopReason { early_stop, max_epochs };

inline const char* to_string(StopReason r) { return r == StopReason::early_stop ? "early_stop" : "max_epochs"; }

struct TrainReport {
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<EpochRecord> history;
  StopReason stop = StopReason::max_epochs;
};

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json h = nlohmann::json::array();
  for (const auto& e : r.history) h.push_back(to_json(e));
  return {{"epochs_run", r.epochs_run},
          {"best_epoch", r.best_epoch},
          {"best_val_loss", r.best_val_loss},
          {"stop_reason", to_string(r.stop)},
          {"history", h}};
}

struct TrainHooks {
  // Replaces the validation pass; receives the 1-based epoch.
  std::function<double(int)> validator;
  std::function<void(const EpochRecord&)> on_epoch;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> progress_log;
  bool restore_best = true;
};

/// Loads every pair of `m`, resized to the given size when needed.
inline std::vector<ImagePair> load_pairs(const DatasetManifest& m, int height, int width) {
  std::vector<ImagePair> out;
  out.reserve(m.size());
  for (const auto& e : m.entries) {
    ImagePair p = m.load_pair(e);
    if (p.input_ir.height() != height || p.input_ir.width() != width) {
      p.input_ir = resize_normalize(p.input_ir, height, width);
      p.ground_truth = resize_normalize(p.ground_truth, height, width);
    }
    out.push_back(std::move(p));
  }
  return out;
}

namespace detail {

inline void stack_batch(const std::vector<ImagePair>& pairs, const std::vector<std::size_t>& idx,
                        std::size_t begin, std::size_t end, Tensor<float>& x, Tensor<float>& y) {
  const int h = pairs.front().input_ir.height(), w = pairs.front().input_ir.width();
  x = Tensor<float>(static_cast<int>(end - begin), 1, h, w);
  y = Tensor<float>(static_cast<int>(end - begin), 1, h, w);
  for (std::size_t i = begin; i < end; ++i) {
    const ImagePair& p = pairs[idx[i]];
    std::copy(p.input_ir.pixels().begin(), p.input_ir.pixels().end(), x.sample(static_cast<int>(i - begin)));
    std::copy(p.ground_truth.pixels().begin(), p.ground_truth.pixels().end(),
              y.sample(static_cast<int>(i - begin)));
  }
}

inline std::string describe(const LossBreakdown& b) {
  std::ostringstream s;
  s << "mae=" << b.mae << " ssim=" << b.ssim << " freq=" << b.freq << " sobel=" << b.sobel
    << " perceptual=" << b.perceptual << " tv=" << b.tv << " total=" << b.total;
  return s.str();
}

}  // namespace detail

/// Mean composite loss of the model (inference mode) over `pairs`.
inline LossBreakdown evaluate_loss(const UNet<float>& model, const std::vector<ImagePair>& pairs,
                                   const LossWeights& w, const FeatureExtractor<float>* fx, int batch_size) {
  LossBreakdown sum;
  if (pairs.empty()) return sum;
  std::vector<std::size_t> idx(pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Tensor<float> x, y;
  for (std::size_t b = 0; b < pairs.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(pairs.size(), b + static_cast<std::size_t>(batch_size));
    detail::stack_batch(pairs, idx, b, e, x, y);
    LossBreakdown lb = total_loss(model.forward(x), y, w, w.epsilon > 0.0 ? fx : nullptr);
    lb *= static_cast<double>(e - b);
    sum += lb;
  }
  sum /= static_cast<double>(pairs.size());
  return sum;
}

/// Minimizes the composite loss with Adam under cosine restarts, monitoring
/// validation total loss for early stopping. The model ends at its best
/// validation weights unless hooks.restore_best is false.
inline TrainReport train(UNet<float>& model, const TrainConfig& cfg, const DatasetManifest& train_set,
                         const DatasetManifest& val_set, const FeatureExtractor<float>* fx,
                         const TrainHooks& hooks = {}) {
  cfg.validate();
  if (!(model.config() == cfg.unet)) throw ConfigError("model does not match the training config");
  if (train_set.empty()) throw ManifestError("training manifest is empty");
  if (val_set.empty() && !hooks.validator) throw ManifestError("validation manifest is empty");
  if (cfg.weights.epsilon > 0.0 && (!fx || !fx->initialized())) {
    throw StateError("perceptual weight set but no initialized feature extractor");
  }
  const FeatureExtractor<float>* loss_fx = cfg.weights.epsilon > 0.0 ? fx : nullptr;

  const std::vector<ImagePair> train_pairs = load_pairs(train_set, cfg.unet.input_h, cfg.unet.input_w);
  const std::vector<ImagePair> val_pairs =
      hooks.validator ? std::vector<ImagePair>{} : load_pairs(val_set, cfg.unet.input_h, cfg.unet.input_w);

  const std::size_t n = train_pairs.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
  const CosineRestarts sched = cfg.schedule(steps_per_epoch);
  Adam<float> opt;
  EarlyStopping stopper(cfg.patience);
  std::ofstream log;
  if (hooks.progress_log) {
    log.open(*hooks.progress_log, std::ios::trunc);
    if (!log) throw IoError("cannot write progress log '" + hooks.progress_log->string() + "'");
  }

  TrainReport report;
  std::vector<float> best_state;
  std::int64_t step = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Tensor<float> x, y;
  const auto params = model.parameters();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, stream::shuffle, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    LossBreakdown epoch_sum;
    const double epoch_lr = lr_at(step, sched);
    int batch_no = 0;
    for (std::size_t b = 0; b < n; b += bs, ++batch_no) {
      const std::size_t e = std::min(n, b + bs);
      detail::stack_batch(train_pairs, order, b, e, x, y);
      typename UNet<float>::Tape tape;
      const Tensor<float> pred = model.forward_train(x, tape);
      Tensor<float> grad(pred.n(), pred.c(), pred.h(), pred.w());
      const LossBreakdown lb = total_loss(pred, y, cfg.weights, loss_fx, &grad);
      if (!lb.finite()) {
        throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_no) + ": " + detail::describe(lb));
      }
      model.zero_grad();
      model.backward(tape, grad);
      opt.step(params, lr_at(step, sched));
      ++step;
      LossBreakdown weighted = lb;
      weighted *= static_cast<double>(e - b);
      epoch_sum += weighted;
    }
    epoch_sum /= static_cast<double>(n);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = epoch_lr;
    rec.train = epoch_sum;
    rec.val_total = hooks.validator ? hooks.validator(epoch)
                                    : evaluate_loss(model, val_pairs, cfg.weights, loss_fx, cfg.batch_size).total;
    if (!std::isfinite(rec.val_total)) {
      throw NonFiniteLossError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    report.history.push_back(rec);
    report.epochs_run = epoch;
    if (log) log << to_json(rec).dump() << '\n' << std::flush;
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (stopper.update(epoch, rec.val_total)) {
      if (hooks.restore_best) best_state = model.state();
      if (hooks.checkpoint) save_checkpoint(model, {epoch, rec.val_total, step}, *hooks.checkpoint);
    }
    if (stopper.should_stop()) {
      report.stop = StopReason::early_stop;
      break;
    }
  }
  report.best_epoch = stopper.best_epoch();
  report.best_val_loss = stopper.best();
  if (hooks.restore_best && !best_state.empty()) model.set_state(best_state);
  return report;
}

/// Builds the extractor named by the config.
inline ConvFeatureNet<float> make_feature_extractor(const TrainConfig& cfg) {
  if (cfg.feature_extractor == "test") return random_feature_extractor<float>();
  return load_vgg19_extractor<float>(vgg19_weights_path(), cfg.perceptual_layers);
}

}  // namespace clearir
