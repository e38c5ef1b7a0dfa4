#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "dms/image.hpp"

namespace dms {

/// Integerization policy for storing a continuous pixel.
enum class QuantMethod { Upper, Truncate, Round, DmsAi };

std::string to_string(QuantMethod method);
std::optional<QuantMethod> parse_quant_method(std::string_view name);

/// Nearest integer, halves rounded away from zero.
float round_half_away(float value);

/// Integerizes one value. `grad` is only consulted by DmsAi: ceiling when
/// positive, floor when negative, nearest when exactly zero. Integers are
/// returned unchanged by every method.
float quantize_value(float value, QuantMethod method, float grad = 0.0f);

/// Maps every pixel of `x` onto {0..255}. DmsAi requires a gradient image of
/// the same shape; the other methods ignore it.
ImageU8 quantize(const ImageF& x, QuantMethod method,
                 const ImageF* grad = nullptr);

/// mean(|after - before|) over all elements.
double precision_loss(const ImageF& before, const ImageU8& after);

}  // namespace dms
