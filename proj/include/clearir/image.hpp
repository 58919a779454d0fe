#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clearir/error.hpp"

namespace clearir {

inline constexpr int kMinImageSide = 16;

/// Single-channel luminance raster, row-major, values nominally in [0, 1].
///
/// Construction checks the dimension invariant only; the value range is
/// checked by validate() because intermediate results are routinely clamped
/// by the operation that produced them.
class Image {
 public:
  Image() = default;

  Image(int height, int width, float fill = 0.0f)
      : height_(height), width_(width) {
    check_dims(height, width);
    data_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  Image(int height, int width, std::vector<float> data)
      : height_(height), width_(width), data_(std::move(data)) {
    check_dims(height, width);
    if (data_.size() != static_cast<std::size_t>(height) * width) {
      throw DimensionError("image buffer size " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(height) + "x" +
                           std::to_string(width));
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<float> pixels() { return data_; }
  std::span<const float> pixels() const { return data_; }
  std::vector<float>& buffer() { return data_; }
  const std::vector<float>& buffer() const { return data_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  // Throws ValidationError when any pixel is non-finite or outside [0, 1].
  void validate() const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const float v = data_[i];
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
        throw ValidationError("pixel " + std::to_string(i) + " has value " +
                              std::to_string(v) + " outside [0,1]");
      }
    }
  }

  Image& clamp() {
    for (float& v : data_) v = std::clamp(v, 0.0f, 1.0f);
    return *this;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  static void check_dims(int height, int width) {
    if (height < kMinImageSide || width < kMinImageSide) {
      throw DimensionError("image must be at least " + std::to_string(kMinImageSide) +
                           "x" + std::to_string(kMinImageSide) + ", got " +
                           std::to_string(height) + "x" + std::to_string(width));
    }
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " +
                         std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                         " vs " + std::to_string(b.height()) + "x" +
                         std::to_string(b.width()));
  }
}

inline float max_abs_diff(const Image& a, const Image& b) {
  require_same_shape(a, b, "max_abs_diff");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.pixels()[i] - b.pixels()[i]));
  }
  return m;
}

enum class Provenance { synthetic, imported, augmented };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::synthetic: return "synthetic";
    case Provenance::imported: return "imported";
    case Provenance::augmented: return "augmented";
  }
  return "unknown";
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "synthetic") return Provenance::synthetic;
  if (s == "imported") return Provenance::imported;
  if (s == "augmented") return Provenance::augmented;
  throw ValidationError("unknown provenance '" + s + "'");
}

struct ImagePair {
  Image input_ir;
  Image ground_truth;
  std::string pair_id;
  Provenance provenance = Provenance::synthetic;
  std::uint64_t seed = 0;

  void validate() const {
    require_same_shape(input_ir, ground_truth, "ImagePair");
    input_ir.validate();
    ground_truth.validate();
  }
};

}  // namespace clearir
