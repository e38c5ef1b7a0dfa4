#include "dms/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dms {

std::string to_string(QuantMethod method) {
  switch (method) {
    case QuantMethod::Upper: return "Upper";
    case QuantMethod::Truncate: return "Truncate";
    case QuantMethod::Round: return "Round";
    case QuantMethod::DmsAi: return "DmsAi";
  }
  return "?";
}

std::optional<QuantMethod> parse_quant_method(std::string_view name) {
  if (name == "Upper") return QuantMethod::Upper;
  if (name == "Truncate") return QuantMethod::Truncate;
  if (name == "Round") return QuantMethod::Round;
  if (name == "DmsAi") return QuantMethod::DmsAi;
  return std::nullopt;
}

float round_half_away(float value) { return std::round(value); }

float quantize_value(float value, QuantMethod method, float grad) {
  switch (method) {
    case QuantMethod::Upper: return std::ceil(value);
    case QuantMethod::Truncate: return std::floor(value);
    case QuantMethod::Round: return round_half_away(value);
    case QuantMethod::DmsAi:
      if (grad > 0.0f) return std::ceil(value);
      if (grad < 0.0f) return std::floor(value);
      return round_half_away(value);
  }
  return value;
}

ImageU8 quantize(const ImageF& x, QuantMethod method, const ImageF* grad) {
  if (method == QuantMethod::DmsAi) {
    if (!grad) throw std::invalid_argument("DmsAi quantization needs a gradient");
    if (!(grad->shape() == x.shape())) {
      throw std::invalid_argument("gradient shape " + to_string(grad->shape().dims()) +
                                  " differs from image shape " +
                                  to_string(x.shape().dims()));
    }
  }
  std::vector<std::uint8_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float g = grad ? (*grad)[i] : 0.0f;
    const float q = std::clamp(quantize_value(x[i], method, g), 0.0f, 255.0f);
    out[i] = static_cast<std::uint8_t>(q);
  }
  return ImageU8(x.shape(), std::move(out));
}

double precision_loss(const ImageF& before, const ImageU8& after) {
  if (!(before.shape() == after.shape())) {
    throw std::invalid_argument("precision_loss: shape mismatch");
  }
  if (before.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    total += std::abs(double(after[i]) - double(before[i]));
  }
  return total / double(before.size());
}

}  // namespace dms
