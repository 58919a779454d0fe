#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clearir/error.hpp"
#include "clearir/nn.hpp"
#include "clearir/rng.hpp"
#include "clearir/tensor.hpp"

namespace clearir {

struct UNetConfig {
  int depth = 3;
  int base_channels = 16;
  int input_h = 96;
  int input_w = 128;
  std::string activation = "relu";
  std::string output_activation = "sigmoid";

  static UNetConfig full_scale() { return {4, 64, 480, 640}; }
  static UNetConfig desk_scale() { return {3, 16, 96, 128}; }

  void validate() const {
    if (depth < 1) throw ConfigError("unet depth must be >= 1");
    if (base_channels < 4) throw ConfigError("unet base_channels must be >= 4");
    if (input_h <= 0 || input_w <= 0) throw ConfigError("unet input size must be positive");
    const int div = 1 << depth;
    if (input_h % div || input_w % div) {
      throw ConfigError("input " + std::to_string(input_w) + "x" + std::to_string(input_h) +
                        " not divisible by 2^depth = " + std::to_string(div));
    }
    if (activation != "relu") throw ConfigError("unsupported activation '" + activation + "'");
    if (output_activation != "sigmoid") {
      throw ConfigError("unsupported output activation '" + output_activation + "'");
    }
  }

  int channels_at(int level) const { return base_channels << level; }

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

inline nlohmann::json to_json(const UNetConfig& c) {
  return {{"depth", c.depth},
          {"base_channels", c.base_channels},
          {"input_h", c.input_h},
          {"input_w", c.input_w},
          {"activation", c.activation},
          {"output_activation", c.output_activation}};
}

inline UNetConfig unet_config_from_json(const nlohmann::json& j) {
  UNetConfig c;
  try {
    c.depth = j.value("depth", c.depth);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.input_h = j.value("input_h", c.input_h);
    c.input_w = j.value("input_w", c.input_w);
    c.activation = j.value("activation", c.activation);
    c.output_activation = j.value("output_activation", c.output_activation);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad unet config: ") + e.what());
  }
  c.validate();
  return c;
}

inline std::uint64_t config_hash(const UNetConfig& c) {
  const std::string s = to_json(c).dump();
  return fnv1a64(s.data(), s.size());
}

template <typename T>
struct Param {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::size_t size, T fill = T(0))
      : name(std::move(n)), value(size, fill), grad(size, T(0)) {}
};

// 3x3 conv (no bias) -> batch norm -> ReLU.
template <typename T>
struct ConvBnRelu {
  int cin = 0, cout = 0;
  Param<T> weight, gamma, beta;
  std::vector<T> running_mean, running_var;

  ConvBnRelu() = default;
  ConvBnRelu(const std::string& name, int in, int out)
      : cin(in),
        cout(out),
        weight(name + ".conv", static_cast<std::size_t>(out) * in * 9),
        gamma(name + ".bn.gamma", static_cast<std::size_t>(out), T(1)),
        beta(name + ".bn.beta", static_cast<std::size_t>(out), T(0)),
        running_mean(static_cast<std::size_t>(out), T(0)),
        running_var(static_cast<std::size_t>(out), T(1)) {}
};

template <typename T>
struct DoubleConv {
  ConvBnRelu<T> first, second;
};

template <typename T>
struct UpStage {
  Param<T> up_weight, up_bias;  // [cout][2][2][cin]
  int cin = 0, cout = 0;
  DoubleConv<T> conv;
};

struct ForwardOptions {
  int ablate_skip = -1;  // zero the skip tensor at this level (diagnostics)
};

/// Symmetric encoder/decoder with concatenating skips, single-channel
/// sigmoid output. Inference uses running batch-norm statistics; training
/// passes record a tape for backward().
template <typename T>
class UNet {
 public:
  struct ConvTape {
    Tensor<T> input, output;
    nn::BatchNormCache<T> bn;
  };
  struct Tape {
    std::vector<ConvTape> convs;  // in execution order
    std::vector<std::vector<std::uint8_t>> pools;
    std::vector<Tensor<T>> up_inputs;
    std::vector<int> skip_channels;
    Tensor<T> head_input, output;
  };

  static constexpr T kMomentum = T(0.1);
  static constexpr T kEps = T(1e-5);

  explicit UNet(UNetConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int d = cfg_.depth;
    int cin = 1;
    for (int i = 0; i < d; ++i) {
      const int c = cfg_.channels_at(i);
      encoders_.push_back(make_double("enc" + std::to_string(i), cin, c));
      cin = c;
    }
    bottleneck_ = make_double("bottleneck", cin, cfg_.channels_at(d));
    for (int i = d - 1; i >= 0; --i) {
      const int c = cfg_.channels_at(i), cup = cfg_.channels_at(i + 1);
      UpStage<T> s;
      s.cin = cup;
      s.cout = c;
      s.up_weight = Param<T>("dec" + std::to_string(i) + ".up", static_cast<std::size_t>(c) * 4 * cup);
      s.up_bias = Param<T>("dec" + std::to_string(i) + ".up.bias", static_cast<std::size_t>(c));
      s.conv = make_double("dec" + std::to_string(i), 2 * c, c);
      decoders_.push_back(std::move(s));
    }
    head_weight_ = Param<T>("head", static_cast<std::size_t>(cfg_.base_channels));
    head_bias_ = Param<T>("head.bias", 1);
    initialize(seed);
  }

  const UNetConfig& config() const { return cfg_; }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    auto add_conv = [&](ConvBnRelu<T>& c) {
      out.push_back(&c.weight);
      out.push_back(&c.gamma);
      out.push_back(&c.beta);
    };
    for (auto& e : encoders_) { add_conv(e.first); add_conv(e.second); }
    add_conv(bottleneck_.first);
    add_conv(bottleneck_.second);
    for (auto& s : decoders_) {
      out.push_back(&s.up_weight);
      out.push_back(&s.up_bias);
      add_conv(s.conv.first);
      add_conv(s.conv.second);
    }
    out.push_back(&head_weight_);
    out.push_back(&head_bias_);
    return out;
  }

  std::vector<const Param<T>*> parameters() const {
    std::vector<const Param<T>*> out;
    for (Param<T>* p : const_cast<UNet*>(this)->parameters()) out.push_back(p);
    return out;
  }

  // Batch-norm running statistics, in a fixed order.
  std::vector<std::vector<T>*> buffers() {
    std::vector<std::vector<T>*> out;
    auto add = [&](ConvBnRelu<T>& c) {
      out.push_back(&c.running_mean);
      out.push_back(&c.running_var);
    };
    for (auto& e : encoders_) { add(e.first); add(e.second); }
    add(bottleneck_.first);
    add(bottleneck_.second);
    for (auto& s : decoders_) { add(s.conv.first); add(s.conv.second); }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Param<T>* p : parameters()) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (Param<T>* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), T(0));
  }

  void check_input(const Tensor<T>& x) const {
    if (x.c() != 1 || x.h() != cfg_.input_h || x.w() != cfg_.input_w || x.n() < 1) {
      throw DimensionError("unet expects (N,1," + std::to_string(cfg_.input_h) + "," +
                           std::to_string(cfg_.input_w) + ") input, got (" + std::to_string(x.n()) +
                           "," + std::to_string(x.c()) + "," + std::to_string(x.h()) + "," +
                           std::to_string(x.w()) + ")");
    }
  }

  /// Inference pass (running statistics). Output in (0, 1), same size as input.
  Tensor<T> forward(const Tensor<T>& input, const ForwardOptions& opt = {}) const {
    check_input(input);
    std::vector<Tensor<T>> skips;
    Tensor<T> x = input;
    std::vector<std::uint8_t> argmax;
    for (const auto& e : encoders_) {
      x = eval_conv(e.second, eval_conv(e.first, x));
      skips.push_back(x);
      x = nn::maxpool2(x, argmax);
    }
    x = eval_conv(bottleneck_.second, eval_conv(bottleneck_.first, x));
    for (const auto& s : decoders_) {
      const int level = level_of(s);
      Tensor<T> up = nn::conv_transpose2x2<T>(x, s.up_weight.value, s.up_bias.value, s.cout);
      Tensor<T>& skip = skips[static_cast<std::size_t>(level)];
      if (opt.ablate_skip == level) skip.fill(T(0));
      x = eval_conv(s.conv.second, eval_conv(s.conv.first, nn::concat_channels(skip, up)));
    }
    Tensor<T> out = nn::conv2d<T>(x, head_weight_.value, head_bias_.value, 1, 1);
    nn::sigmoid_inplace(out);
    return out;
  }

  /// Training pass: batch statistics, running stats updated, tape recorded.
  Tensor<T> forward_train(const Tensor<T>& input, Tape& tape) {
    check_input(input);
    tape = Tape{};
    std::vector<Tensor<T>> skips;
    Tensor<T> x = input;
    for (auto& e : encoders_) {
      x = train_conv(e.second, train_conv(e.first, x, tape), tape);
      skips.push_back(x);
      tape.pools.emplace_back();
      x = nn::maxpool2(x, tape.pools.back());
    }
    x = train_conv(bottleneck_.second, train_conv(bottleneck_.first, x, tape), tape);
    for (auto& s : decoders_) {
      tape.up_inputs.push_back(x);
      Tensor<T> up = nn::conv_transpose2x2<T>(x, s.up_weight.value, s.up_bias.value, s.cout);
      const Tensor<T>& skip = skips[static_cast<std::size_t>(level_of(s))];
      tape.skip_channels.push_back(skip.c());
      x = train_conv(s.conv.second, train_conv(s.conv.first, nn::concat_channels(skip, up), tape), tape);
    }
    tape.head_input = x;
    Tensor<T> out = nn::conv2d<T>(x, head_weight_.value, head_bias_.value, 1, 1);
    nn::sigmoid_inplace(out);
    tape.output = out;
    return out;
  }

  /// Accumulates parameter gradients for d(loss)/d(output); returns
  /// d(loss)/d(input).
  Tensor<T> backward(const Tape& tape, const Tensor<T>& dout) {
    Tensor<T> g = dout;
    {
      auto gv = g.values();
      const auto y = tape.output.values();
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= y[i] * (T(1) - y[i]);
    }
    g = nn::conv2d_backward<T>(tape.head_input, head_weight_.value, 1, 1, g, head_weight_.grad,
                               head_bias_.grad);
    std::size_t conv_i = tape.convs.size();
    std::vector<Tensor<T>> skip_grads(encoders_.size());
    for (std::size_t k = decoders_.size(); k-- > 0;) {
      UpStage<T>& s = decoders_[k];
      g = back_conv(s.conv.second, tape.convs[--conv_i], g);
      g = back_conv(s.conv.first, tape.convs[--conv_i], g);
      Tensor<T> dskip, dup;
      nn::split_channels(g, tape.skip_channels[k], dskip, dup);
      skip_grads[static_cast<std::size_t>(level_of(s))] = std::move(dskip);
      g = nn::conv_transpose2x2_backward<T>(tape.up_inputs[k], s.up_weight.value, s.cout, dup,
                                            s.up_weight.grad, s.up_bias.grad);
    }
    g = back_conv(bottleneck_.second, tape.convs[--conv_i], g);
    g = back_conv(bottleneck_.first, tape.convs[--conv_i], g);
    for (std::size_t i = encoders_.size(); i-- > 0;) {
      g = nn::maxpool2_backward(g, tape.pools[i]);
      auto gv = g.values();
      const auto sv = skip_grads[i].values();
      for (std::size_t q = 0; q < gv.size(); ++q) gv[q] += sv[q];
      g = back_conv(encoders_[i].second, tape.convs[--conv_i], g);
      g = back_conv(encoders_[i].first, tape.convs[--conv_i], g);
    }
    return g;
  }

  // Flat parameter + buffer vector, in parameters()/buffers() order.
  std::vector<T> state() const {
    std::vector<T> out;
    auto* self = const_cast<UNet*>(this);
    for (const Param<T>* p : self->parameters()) out.insert(out.end(), p->value.begin(), p->value.end());
    for (const std::vector<T>* b : self->buffers()) out.insert(out.end(), b->begin(), b->end());
    return out;
  }

  void set_state(const std::vector<T>& s) {
    std::size_t expected = 0;
    for (Param<T>* p : parameters()) expected += p->value.size();
    for (std::vector<T>* b : buffers()) expected += b->size();
    if (s.size() != expected) throw IncompatibleError("state size does not match model");
    std::size_t off = 0;
    for (Param<T>* p : parameters()) {
      std::copy(s.begin() + static_cast<std::ptrdiff_t>(off),
                s.begin() + static_cast<std::ptrdiff_t>(off + p->value.size()), p->value.begin());
      off += p->value.size();
    }
    for (std::vector<T>* b : buffers()) {
      std::copy(s.begin() + static_cast<std::ptrdiff_t>(off),
                s.begin() + static_cast<std::ptrdiff_t>(off + b->size()), b->begin());
      off += b->size();
    }
  }

 private:
  static DoubleConv<T> make_double(const std::string& name, int cin, int cout) {
    return {ConvBnRelu<T>(name + ".a", cin, cout), ConvBnRelu<T>(name + ".b", cout, cout)};
  }

  int level_of(const UpStage<T>& s) const {
    return static_cast<int>(encoders_.size()) - 1 - static_cast<int>(&s - decoders_.data());
  }

  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, stream::init));
    auto fill = [&](Param<T>& p, double stddev) {
      for (T& v : p.value) v = static_cast<T>(rng.normal() * stddev);
    };
    auto conv = [&](ConvBnRelu<T>& c) { fill(c.weight, std::sqrt(2.0 / (c.cin * 9))); };
    for (auto& e : encoders_) { conv(e.first); conv(e.second); }
    conv(bottleneck_.first);
    conv(bottleneck_.second);
    for (auto& s : decoders_) {
      fill(s.up_weight, std::sqrt(2.0 / s.cin));
      conv(s.conv.first);
      conv(s.conv.second);
    }
    fill(head_weight_, std::sqrt(1.0 / cfg_.base_channels));
  }

  Tensor<T> eval_conv(const ConvBnRelu<T>& c, const Tensor<T>& x) const {
    Tensor<T> y = nn::conv2d<T>(x, c.weight.value, {}, c.cout, 3);
    y = nn::batchnorm_eval<T>(y, c.gamma.value, c.beta.value, c.running_mean, c.running_var, kEps);
    nn::relu_inplace(y);
    return y;
  }

  Tensor<T> train_conv(ConvBnRelu<T>& c, const Tensor<T>& x, Tape& tape) {
    ConvTape t;
    t.input = x;
    Tensor<T> y = nn::conv2d<T>(x, c.weight.value, {}, c.cout, 3);
    y = nn::batchnorm_train<T>(y, c.gamma.value, c.beta.value, c.running_mean, c.running_var,
                               kMomentum, kEps, t.bn);
    nn::relu_inplace(y);
    t.output = y;
    tape.convs.push_back(std::move(t));
    return y;
  }

  Tensor<T> back_conv(ConvBnRelu<T>& c, const ConvTape& t, Tensor<T> g, bool want_dx = true) {
    nn::relu_backward_inplace(t.output, g);
    g = nn::batchnorm_backward<T>(g, c.gamma.value, t.bn, c.gamma.grad, c.beta.grad);
    return nn::conv2d_backward<T>(t.input, c.weight.value, c.cout, 3, g, c.weight.grad, {}, want_dx);
  }

  UNetConfig cfg_;
  std::vector<DoubleConv<T>> encoders_;
  DoubleConv<T> bottleneck_;
  std::vector<UpStage<T>> decoders_;  // deepest first
  Param<T> head_weight_, head_bias_;
};

// ---------------------------------------------------------------------------
// Checkpoints: binary state blob + JSON sidecar (<path>.json).

struct CheckpointMeta {
  int epoch = 0;
  double val_loss = 0.0;
  std::int64_t schedule_step = 0;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

inline constexpr char kCheckpointMagic[8] = {'C', 'L', 'I', 'R', 'C', 'K', 'P', 'T'};

inline std::filesystem::path checkpoint_sidecar(const std::filesystem::path& blob) {
  return std::filesystem::path(blob.string() + ".json");
}

template <typename T>
void save_checkpoint(const UNet<T>& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  const std::vector<T> s = model.state();
  const std::uint64_t hash = config_hash(model.config());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  const std::uint32_t version = 1, scalar = sizeof(T);
  const std::uint64_t count = s.size();
  const std::uint64_t checksum = fnv1a64(s.data(), s.size() * sizeof(T));
  out.write(kCheckpointMagic, 8);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&scalar), sizeof scalar);
  out.write(reinterpret_cast<const char*>(&hash), sizeof hash);
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size() * sizeof(T)));
  out.write(reinterpret_cast<const char*>(&checksum), sizeof checksum);
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");

  const nlohmann::json side{{"config_hash", hex64(hash)},
                            {"epoch", meta.epoch},
                            {"val_loss", meta.val_loss},
                            {"schedule_step", meta.schedule_step},
                            {"unet", to_json(model.config())}};
  std::ofstream js(checkpoint_sidecar(path), std::ios::trunc);
  if (!js) throw IoError("cannot write checkpoint sidecar for '" + path.string() + "'");
  js << side.dump(2) << '\n';
}

namespace detail {

template <typename T>
std::pair<std::vector<T>, std::uint64_t> read_checkpoint_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  std::uint32_t version = 0, scalar = 0;
  std::uint64_t hash = 0, count = 0, checksum = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&scalar), sizeof scalar);
  in.read(reinterpret_cast<char*>(&hash), sizeof hash);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8) || version != 1) {
    throw DecodeError("'" + path.string() + "' is not a checkpoint");
  }
  if (scalar != sizeof(T)) throw IncompatibleError("checkpoint scalar width mismatch");
  if (count > (std::uint64_t{1} << 34)) throw DecodeError("corrupt checkpoint header");
  std::vector<T> s(count);
  in.read(reinterpret_cast<char*>(s.data()), static_cast<std::streamsize>(count * sizeof(T)));
  in.read(reinterpret_cast<char*>(&checksum), sizeof checksum);
  if (!in || checksum != fnv1a64(s.data(), s.size() * sizeof(T))) {
    throw DecodeError("checkpoint '" + path.string() + "' is truncated or corrupt");
  }
  return {std::move(s), hash};
}

inline nlohmann::json read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(checkpoint_sidecar(path));
  if (!in) throw DecodeError("missing checkpoint sidecar for '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("bad checkpoint sidecar: ") + e.what());
  }
}

inline CheckpointMeta meta_from_json(const nlohmann::json& j) {
  try {
    return {j.at("epoch").get<int>(), j.at("val_loss").get<double>(),
            j.at("schedule_step").get<std::int64_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("bad checkpoint sidecar: ") + e.what());
  }
}

}  // namespace detail

/// Restores a model for `expected`; throws IncompatibleError when the stored
/// configuration hash differs.
template <typename T = float>
std::pair<UNet<T>, CheckpointMeta> load_checkpoint(const std::filesystem::path& path,
                                                   const UNetConfig& expected) {
  auto [state, hash] = detail::read_checkpoint_blob<T>(path);
  if (hash != config_hash(expected)) {
    throw IncompatibleError("checkpoint '" + path.string() + "' was saved for a different model config");
  }
  UNet<T> model(expected);
  model.set_state(state);
  return {std::move(model), detail::meta_from_json(detail::read_sidecar(path))};
}

/// Restores a model using the configuration recorded in the sidecar.
template <typename T = float>
std::pair<UNet<T>, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
  const nlohmann::json side = detail::read_sidecar(path);
  UNetConfig cfg;
  try {
    cfg = unet_config_from_json(side.at("unet"));
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("bad checkpoint sidecar: ") + e.what());
  }
  return load_checkpoint<T>(path, cfg);
}

}  // namespace clearir
