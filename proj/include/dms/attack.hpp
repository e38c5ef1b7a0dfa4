#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dms/image.hpp"
#include "dms/model.hpp"

namespace dms {

enum class AttackMethod { IFGSM, PGD, MIFGSM, TIFGSM, SINIFGSM };

std::string to_string(AttackMethod method);
std::optional<AttackMethod> parse_attack_method(std::string_view name);

/// Untargeted FGSM-family attack settings. Budgets and step sizes are in
/// normalized units (pixel / 255).
struct AttackConfig {
  AttackMethod method = AttackMethod::IFGSM;
  double epsilon = 0.3;
  std::size_t steps = 10;
  std::optional<double> alpha;  // per-step size; epsilon / steps when unset
  double decay = 1.0;           // momentum for MI / TI / SINI
  std::size_t kernel_size = 7;  // TI smoothing kernel side, odd
  double kernel_sigma = 3.0;
  std::size_t scale_copies = 5;  // SINI scale levels
  std::uint64_t seed = 0;        // PGD random start
  bool random_start = true;      // PGD only

  double step_size() const;
  /// Throws std::invalid_argument describing the first violated constraint.
  /// A zero epsilon is accepted as a degenerate no-perturbation attack.
  void validate() const;
};

/// Row-major size x size kernel.
struct Kernel2D {
  std::size_t size = 0;
  std::vector<double> values;

  double at(std::size_t row, std::size_t col) const { return values[row * size + col]; }
};

/// Normalized Gaussian exp(-(i^2 + j^2) / (2 sigma^2)) / Z with i, j
/// measured from the kernel center.
Kernel2D gaussian_kernel(std::size_t size, double sigma);

/// Zero-padded same-size filtering of each channel of a channels-last map.
std::vector<double> smooth_channels(std::span<const double> values, const Shape3& shape,
                                    const Kernel2D& kernel);

/// dJ/dx for a normalized input x; the attack ascends J.
using GradientFn = std::function<std::vector<float>(std::span<const float>)>;

/// Runs the configured attack in normalized space and returns the last
/// iterate. Every element stays inside [clean - eps, clean + eps] and [0, 1].
std::vector<float> run_attack(const GradientFn& gradient, const Shape3& shape,
                              std::span<const float> clean, const AttackConfig& config);

/// Attacks a classifier by ascending cross-entropy against the sample's own
/// label. Returns pixel units, generally non-integer.
ImageF attack(const ModelParams& model, const LabeledSample& sample,
              const AttackConfig& config);

}  // namespace dms
