#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "clearir/error.hpp"
#include "clearir/nn.hpp"
#include "clearir/rng.hpp"
#include "clearir/tensor.hpp"

namespace clearir {

// Per-call record of the activations a frozen extractor needs to
// back-propagate into its input.
template <typename T>
struct FeatureTrace {
  std::vector<Tensor<T>> inputs;  // input of each op
  std::vector<Tensor<T>> outputs;
  std::vector<std::vector<std::uint8_t>> pool_argmax;
};

/// Frozen feature extractor: a single-channel batch in, one feature map per
/// configured layer out. Implementations must be immutable after
/// construction so they can be shared between threads.
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual bool initialized() const = 0;
  virtual const std::vector<std::string>& layers() const = 0;

  // `trace` may be null when no backward pass will follow.
  virtual std::vector<Tensor<T>> extract(const Tensor<T>& gray, FeatureTrace<T>* trace) const = 0;

  // d(loss)/d(gray) given d(loss)/d(feature) for every configured layer.
  virtual Tensor<T> backward(const FeatureTrace<T>& trace,
                             const std::vector<Tensor<T>>& feature_grads) const = 0;
};

/// Sequential stack of 3x3 conv+ReLU and 2x2 max-pool ops with named taps.
/// Grey inputs are replicated to three channels and normalized per channel
/// before the first conv.
template <typename T>
class ConvFeatureNet final : public FeatureExtractor<T> {
 public:
  struct Op {
    enum class Kind { conv_relu, pool } kind = Kind::conv_relu;
    std::string name;
    int cin = 0, cout = 0;
    std::vector<T> weight, bias;
  };

  ConvFeatureNet() = default;

  ConvFeatureNet(std::vector<Op> ops, std::vector<std::string> taps, std::array<T, 3> mean,
                 std::array<T, 3> stddev)
      : ops_(std::move(ops)), layers_(std::move(taps)), mean_(mean), std_(stddev) {
    for (const auto& name : layers_) {
      const auto it = std::find_if(ops_.begin(), ops_.end(), [&](const Op& o) { return o.name == name; });
      if (it == ops_.end()) throw ConfigError("unknown feature layer '" + name + "'");
      tap_index_.push_back(static_cast<int>(it - ops_.begin()));
    }
    if (tap_index_.empty()) throw ConfigError("feature extractor needs at least one layer");
    last_op_ = *std::max_element(tap_index_.begin(), tap_index_.end());
    ops_.resize(static_cast<std::size_t>(last_op_) + 1);
    initialized_ = true;
  }

  bool initialized() const override { return initialized_; }
  const std::vector<std::string>& layers() const override { return layers_; }
  const std::vector<Op>& ops() const { return ops_; }

  std::vector<Tensor<T>> extract(const Tensor<T>& gray, FeatureTrace<T>* trace) const override {
    require_ready();
    if (gray.c() != 1) throw DimensionError("feature extractor expects single-channel input");
    Tensor<T> x(gray.n(), 3, gray.h(), gray.w());
    for (int n = 0; n < gray.n(); ++n)
      for (int c = 0; c < 3; ++c) {
        const T* src = gray.channel(n, 0);
        T* dst = x.channel(n, c);
        const T inv = T(1) / std_[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < gray.plane(); ++i) dst[i] = (src[i] - mean_[static_cast<std::size_t>(c)]) * inv;
      }
    if (trace) {
      trace->inputs.clear();
      trace->outputs.clear();
      trace->pool_argmax.assign(ops_.size(), {});
    }
    std::vector<Tensor<T>> feats(tap_index_.size());
    std::vector<std::uint8_t> scratch;
    for (std::size_t i = 0; i < ops_.size(); ++i) {
      const Op& op = ops_[i];
      Tensor<T> y;
      if (op.kind == Op::Kind::conv_relu) {
        y = nn::conv2d<T>(x, op.weight, op.bias, op.cout, 3);
        nn::relu_inplace(y);
      } else {
        y = nn::maxpool2(x, trace ? trace->pool_argmax[i] : scratch);
      }
      for (std::size_t t = 0; t < tap_index_.size(); ++t)
        if (tap_index_[t] == static_cast<int>(i)) feats[t] = y;
      if (trace) {
        trace->inputs.push_back(std::move(x));
        trace->outputs.push_back(y);
      }
      x = std::move(y);
    }
    return feats;
  }

  Tensor<T> backward(const FeatureTrace<T>& trace,
                     const std::vector<Tensor<T>>& feature_grads) const override {
    require_ready();
    if (feature_grads.size() != tap_index_.size()) {
      throw DimensionError("feature gradient count does not match layer count");
    }
    Tensor<T> grad;
    std::vector<T> dw_scratch;
    for (int i = last_op_; i >= 0; --i) {
      const auto ui = static_cast<std::size_t>(i);
      for (std::size_t t = 0; t < tap_index_.size(); ++t) {
        if (tap_index_[t] != i) continue;
        if (grad.size() == 0) {
          grad = feature_grads[t];
        } else {
          auto g = grad.values();
          const auto f = feature_grads[t].values();
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += f[k];
        }
      }
      if (grad.size() == 0) continue;
      const Op& op = ops_[ui];
      if (op.kind == Op::Kind::conv_relu) {
        nn::relu_backward_inplace(trace.outputs[ui], grad);
        dw_scratch.assign(op.weight.size(), T(0));
        grad = nn::conv2d_backward<T>(trace.inputs[ui], op.weight, op.cout, 3, grad, dw_scratch, {});
      } else {
        grad = nn::maxpool2_backward(grad, trace.pool_argmax[ui]);
      }
    }
    const Tensor<T>& rgb = trace.inputs.front();
    Tensor<T> out(rgb.n(), 1, rgb.h(), rgb.w());
    for (int n = 0; n < rgb.n(); ++n)
      for (int c = 0; c < 3; ++c) {
        const T* g = grad.channel(n, c);
        T* dst = out.channel(n, 0);
        const T inv = T(1) / std_[static_cast<std::size_t>(c)];
        for (std::size_t k = 0; k < rgb.plane(); ++k) dst[k] += g[k] * inv;
      }
    return out;
  }

  template <typename U>
  ConvFeatureNet<U> cast() const {
    std::vector<typename ConvFeatureNet<U>::Op> ops;
    for (const auto& o : ops_) {
      typename ConvFeatureNet<U>::Op u;
      u.kind = o.kind == Op::Kind::pool ? ConvFeatureNet<U>::Op::Kind::pool
                                        : ConvFeatureNet<U>::Op::Kind::conv_relu;
      u.name = o.name;
      u.cin = o.cin;
      u.cout = o.cout;
      u.weight.assign(o.weight.begin(), o.weight.end());
      u.bias.assign(o.bias.begin(), o.bias.end());
      ops.push_back(std::move(u));
    }
    return ConvFeatureNet<U>(std::move(ops), layers_,
                             {static_cast<U>(mean_[0]), static_cast<U>(mean_[1]), static_cast<U>(mean_[2])},
                             {static_cast<U>(std_[0]), static_cast<U>(std_[1]), static_cast<U>(std_[2])});
  }

 private:
  void require_ready() const {
    if (!initialized_) throw StateError("feature extractor is not initialized");
  }

  std::vector<Op> ops_;
  std::vector<std::string> layers_;
  std::vector<int> tap_index_;
  int last_op_ = -1;
  std::array<T, 3> mean_{};
  std::array<T, 3> std_{1, 1, 1};
  bool initialized_ = false;
};

/// Small frozen extractor with seeded He-initialized weights:
/// conv1(3->8) conv2(8->8) pool conv3(8->16); taps conv2 and conv3.
template <typename T>
ConvFeatureNet<T> random_feature_extractor(std::uint64_t seed = 2024) {
  using Op = typename ConvFeatureNet<T>::Op;
  Rng rng(derive_seed(seed, stream::extractor));
  auto conv = [&](const char* name, int cin, int cout) {
    Op op{Op::Kind::conv_relu, name, cin, cout, {}, {}};
    const double s = std::sqrt(2.0 / (cin * 9));
    op.weight.resize(static_cast<std::size_t>(cout) * cin * 9);
    for (T& w : op.weight) w = static_cast<T>(rng.normal() * s);
    op.bias.resize(static_cast<std::size_t>(cout));
    for (T& b : op.bias) b = static_cast<T>(rng.normal() * 0.05);
    return op;
  };
  std::vector<Op> ops{conv("conv1", 3, 8), conv("conv2", 8, 8), Op{Op::Kind::pool, "pool1", 8, 8, {}, {}},
                      conv("conv3", 8, 16)};
  return ConvFeatureNet<T>(std::move(ops), {"conv2", "conv3"}, {T(0.45), T(0.45), T(0.45)},
                           {T(0.25), T(0.25), T(0.25)});
}

// ---------------------------------------------------------------------------
// VGG19 (ImageNet weights). Weight file layout, little-endian:
//   "CIRVGG19" | u32 version = 1 | for each of the 16 convs in order:
//   f32 weight[cout][cin][3][3], f32 bias[cout]

inline constexpr const char* kVgg19WeightsFile = "vgg19_imagenet.bin";
inline constexpr const char* kCacheEnvVar = "CLEAR_IR_CACHE";

inline std::vector<std::string> default_perceptual_layers() {
  return {"block3_conv2", "block4_conv2", "block5_conv1",
          "block5_conv2", "block5_conv3", "block5_conv4"};
}

struct Vgg19Layout {
  std::string name;
  int cin, cout;
  bool pool;  // a max-pool precedes this conv
};

inline std::vector<Vgg19Layout> vgg19_layout() {
  static constexpr std::array<int, 5> widths{64, 128, 256, 512, 512};
  static constexpr std::array<int, 5> convs{2, 2, 4, 4, 4};
  std::vector<Vgg19Layout> out;
  int cin = 3;
  for (int b = 0; b < 5; ++b) {
    for (int i = 0; i < convs[static_cast<std::size_t>(b)]; ++i) {
      out.push_back({"block" + std::to_string(b + 1) + "_conv" + std::to_string(i + 1), cin,
                     widths[static_cast<std::size_t>(b)], b > 0 && i == 0});
      cin = widths[static_cast<std::size_t>(b)];
    }
  }
  return out;
}

inline std::filesystem::path vgg19_weights_path() {
  const char* dir = std::getenv(kCacheEnvVar);
  return std::filesystem::path(dir ? dir : ".") / kVgg19WeightsFile;
}

template <typename T>
ConvFeatureNet<T> load_vgg19_extractor(const std::filesystem::path& file,
                                       std::vector<std::string> layers = default_perceptual_layers()) {
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw StateError("VGG19 weights not found at '" + file.string() + "' (set " + kCacheEnvVar + ")");
  }
  char magic[8];
  std::uint32_t version = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || std::string(magic, 8) != "CIRVGG19" || version != 1) {
    throw DecodeError("'" + file.string() + "' is not a VGG19 weight file");
  }
  using Op = typename ConvFeatureNet<T>::Op;
  std::vector<Op> ops;
  std::vector<float> buf;
  for (const auto& l : vgg19_layout()) {
    if (l.pool) ops.push_back(Op{Op::Kind::pool, "pool_before_" + l.name, l.cin, l.cin, {}, {}});
    Op op{Op::Kind::conv_relu, l.name, l.cin, l.cout, {}, {}};
    buf.resize(static_cast<std::size_t>(l.cout) * l.cin * 9);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    op.weight.assign(buf.begin(), buf.end());
    buf.resize(static_cast<std::size_t>(l.cout));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    op.bias.assign(buf.begin(), buf.end());
    if (!in) throw DecodeError("truncated VGG19 weight file '" + file.string() + "'");
    ops.push_back(std::move(op));
  }
  // torchvision ImageNet normalization (inputs in [0,1]).
  return ConvFeatureNet<T>(std::move(ops), std::move(layers), {T(0.485), T(0.456), T(0.406)},
                           {T(0.229), T(0.224), T(0.225)});
}

}  // namespace clearir
