#include "dms/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dms {
namespace {

void check_count(const Shape3& shape, std::size_t count) {
  if (shape.size() != count) {
    throw std::invalid_argument("image shape " + to_string(shape.dims()) + " holds " +
                                std::to_string(shape.size()) + " values, got " +
                                std::to_string(count));
  }
}

}  // namespace

ImageF::ImageF(Shape3 shape, float fill) : shape_(shape), values_(shape.size(), fill) {}

ImageF::ImageF(Shape3 shape, std::vector<float> values)
    : shape_(shape), values_(std::move(values)) {
  check_count(shape_, values_.size());
}

ImageF::ImageF(const ImageU8& image)
    : shape_(image.shape()), values_(image.values().begin(), image.values().end()) {}

Tensor ImageF::normalized() const {
  std::vector<float> out(values_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = values_[i] / 255.0f;
  return Tensor(shape_.dims(), std::move(out));
}

ImageF ImageF::from_normalized(Shape3 shape, std::span<const float> normalized) {
  std::vector<float> out(normalized.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = normalized[i] * 255.0f;
  return ImageF(shape, std::move(out));
}

bool ImageF::in_pixel_range() const {
  return std::all_of(values_.begin(), values_.end(), [](float v) {
    return std::isfinite(v) && v >= 0.0f && v <= 255.0f;
  });
}

bool ImageF::is_integral() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](float v) { return std::isfinite(v) && std::floor(v) == v; });
}

ImageU8::ImageU8(Shape3 shape, std::uint8_t fill) : shape_(shape), values_(shape.size(), fill) {}

ImageU8::ImageU8(Shape3 shape, std::vector<std::uint8_t> values)
    : shape_(shape), values_(std::move(values)) {
  check_count(shape_, values_.size());
}

ImageU8 ImageU8::from_integral(const ImageF& image) {
  std::vector<std::uint8_t> out(image.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = image[i];
    if (!std::isfinite(v) || std::floor(v) != v || v < 0.0f || v > 255.0f) {
      throw std::invalid_argument("element " + std::to_string(i) + " = " +
                                  std::to_string(v) + " is not an integer in [0,255]");
    }
    out[i] = static_cast<std::uint8_t>(v);
  }
  return ImageU8(image.shape(), std::move(out));
}

Tensor ImageU8::normalized() const {
  std::vector<float> out(values_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = float(values_[i]) / 255.0f;
  return Tensor(shape_.dims(), std::move(out));
}

double linf_normalized(const ImageF& a, const ImageF& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("linf: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(double(a[i]) / 255.0 - double(b[i]) / 255.0));
  }
  return worst;
}

}  // namespace dms
