#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dms/image.hpp"
#include "dms/model.hpp"

namespace dms {

/// Per-element attribution scores, same shape as the attributed image.
struct AttributionMap {
  Shape3 shape;
  std::vector<double> scores;

  double total() const;
};

/// Scalar the attribution differentiates.
struct AttributionTarget {
  enum class Kind { CrossEntropy, Logit };
  Kind kind = Kind::CrossEntropy;
  std::size_t index = 0;  // label for cross-entropy, class for logit

  static AttributionTarget loss(std::size_t label) { return {Kind::CrossEntropy, label}; }
  static AttributionTarget logit(std::size_t cls) { return {Kind::Logit, cls}; }
};

/// Value of the target at `image` (pixel units).
double target_value(const ModelParams& model, const ImageF& image,
                    const AttributionTarget& target);

/// Integrated gradients with an m-term right Riemann sum:
///   A_i = (x_i - b_i) * (1/m) * sum_{k=1..m} dT/dx_i (b + (k/m)(x - b))
/// Gradients are taken with respect to pixel units, so the scores sum to
/// approximately T(x) - T(b).
AttributionMap integrated_gradients(const ModelParams& model, const ImageF& x,
                                    const ImageF& baseline, const AttributionTarget& target,
                                    std::size_t steps);

enum class AsTrigger { OnFailure, Always };

std::string to_string(AsTrigger trigger);
std::optional<AsTrigger> parse_as_trigger(std::string_view name);

/// Keeps stored pixels within the relaxed budget
/// |v - clean| <= 255 * epsilon + 1 around a clean reference.
struct PixelBudget {
  ImageU8 clean;
  double epsilon = 0.0;
};

struct DmsConfig {
  double k_ratio = 0.20;
  std::size_t riemann_steps = 32;
  AsTrigger as_trigger = AsTrigger::OnFailure;
  /// When set, the attribution pass never leaves the relaxed budget.
  std::optional<PixelBudget> budget;

  void validate() const;
};

/// ceil(k_ratio * count), computed so exact products are not bumped up by
/// floating-point noise.
std::size_t selection_count(double k_ratio, std::size_t count);

/// Indices of the `count` largest scores, ordered by descending score with
/// ties broken by the lowest index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t count);

struct AsTrace {
  std::vector<std::size_t> raised;   // pass-1 selection
  std::vector<std::size_t> lowered;  // pass-2 selection
};

/// Attribution-selection repair of an integerized adversarial image:
/// pass 1 attributes against clip(x + 1) and raises the top-k pixels by one,
/// pass 2 attributes against clip(x - 1) on the pass-1 result and lowers its
/// top-k; the result is clipped to [0, 255] (and the budget, when set).
/// The attribution target is the cross-entropy against `label`.
ImageU8 dms_as(const ModelParams& model, const ImageU8& x, std::size_t label,
               const DmsConfig& config, AsTrace* trace = nullptr);
/// Same, for a float image that must already be integer-valued.
ImageU8 dms_as(const ModelParams& model, const ImageF& x, std::size_t label,
               const DmsConfig& config, AsTrace* trace = nullptr);

struct DmsResult {
  ImageU8 image;
  ImageU8 integerized;  // output of the gradient-directed rounding alone
  bool attribution_applied = false;
};

/// Gradient-directed integerization of `x_adv`, followed by attribution
/// selection when the trigger asks for it.
DmsResult dms(const ModelParams& model, const ImageF& x_adv, std::size_t label,
              const DmsConfig& config);

/// Gradient-directed integerization only: one forward/backward of the loss
/// at `x_adv`, then ceiling/floor by gradient sign.
ImageU8 dms_ai(const ModelParams& model, const ImageF& x_adv, std::size_t label);

}  // namespace dms
