#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dms/graph.hpp"

namespace dms {

class ImageU8;

/// Continuous image in pixel units, channels-last. Values are finite and,
/// for anything handed to a quantizer, within [0, 255].
class ImageF {
 public:
  ImageF() = default;
  explicit ImageF(Shape3 shape, float fill = 0.0f);
  ImageF(Shape3 shape, std::vector<float> values);
  explicit ImageF(const ImageU8& image);

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  float& operator[](std::size_t i) { return values_[i]; }
  float operator[](std::size_t i) const { return values_[i]; }

  /// Model-input tensor: every value divided by 255.
  Tensor normalized() const;
  static ImageF from_normalized(Shape3 shape, std::span<const float> normalized);

  bool in_pixel_range() const;
  bool is_integral() const;

  friend bool operator==(const ImageF&, const ImageF&) = default;

 private:
  Shape3 shape_;
  std::vector<float> values_;
};

/// Stored 8-bit image, channels-last.
class ImageU8 {
 public:
  ImageU8() = default;
  explicit ImageU8(Shape3 shape, std::uint8_t fill = 0);
  ImageU8(Shape3 shape, std::vector<std::uint8_t> values);

  /// Converts an integer-valued image in [0, 255]; anything else throws.
  static ImageU8 from_integral(const ImageF& image);

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::span<std::uint8_t> values() { return values_; }
  std::span<const std::uint8_t> values() const { return values_; }
  std::uint8_t& operator[](std::size_t i) { return values_[i]; }
  std::uint8_t operator[](std::size_t i) const { return values_[i]; }

  Tensor normalized() const;

  friend bool operator==(const ImageU8&, const ImageU8&) = default;

 private:
  Shape3 shape_;
  std::vector<std::uint8_t> values_;
};

/// Largest per-element |a - b| / 255.
double linf_normalized(const ImageF& a, const ImageF& b);

}  // namespace dms
