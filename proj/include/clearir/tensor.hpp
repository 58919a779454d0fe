#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "clearir/error.hpp"
#include "clearir/image.hpp"

namespace clearir {

/// Dense NCHW tensor. Value type, contiguous storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0)) : shape_{n, c, h, w} {
    data_.assign(static_cast<std::size_t>(n) * c * h * w, fill);
  }

  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  const std::array<int, 4>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h()) * w(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T* sample(int i) { return data_.data() + static_cast<std::size_t>(i) * c() * plane(); }
  const T* sample(int i) const {
    return data_.data() + static_cast<std::size_t>(i) * c() * plane();
  }
  T* channel(int i, int ch) { return sample(i) + static_cast<std::size_t>(ch) * plane(); }
  const T* channel(int i, int ch) const {
    return sample(i) + static_cast<std::size_t>(ch) * plane();
  }

  T& operator()(int i, int ch, int y, int x) {
    return channel(i, ch)[static_cast<std::size_t>(y) * w() + x];
  }
  T operator()(int i, int ch, int y, int x) const {
    return channel(i, ch)[static_cast<std::size_t>(y) * w() + x];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n(), c(), h(), w());
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::array<int, 4> shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    auto fmt = [](const Tensor<T>& t) {
      return std::to_string(t.n()) + "x" + std::to_string(t.c()) + "x" +
             std::to_string(t.h()) + "x" + std::to_string(t.w());
    };
    throw DimensionError(std::string(what) + ": shape mismatch " + fmt(a) + " vs " + fmt(b));
  }
}

// Stacks equally-sized images into an (N,1,H,W) batch.
template <typename T = float>
Tensor<T> to_batch(std::span<const Image> images) {
  if (images.empty()) return {};
  const int h = images[0].height();
  const int w = images[0].width();
  Tensor<T> out(static_cast<int>(images.size()), 1, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height() != h || images[i].width() != w) {
      throw DimensionError("to_batch: images differ in size");
    }
    std::transform(images[i].pixels().begin(), images[i].pixels().end(),
                   out.sample(static_cast<int>(i)), [](float v) { return static_cast<T>(v); });
  }
  return out;
}

template <typename T = float>
Tensor<T> to_batch(const Image& image) {
  return to_batch<T>(std::span<const Image>(&image, 1));
}

template <typename T>
Image to_image(const Tensor<T>& t, int index = 0, int ch = 0) {
  std::vector<float> buf(t.plane());
  std::transform(t.channel(index, ch), t.channel(index, ch) + t.plane(), buf.begin(),
                 [](T v) { return static_cast<float>(v); });
  return Image(t.h(), t.w(), std::move(buf));
}

}  // namespace clearir
