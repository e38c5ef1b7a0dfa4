#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dms/tensor.hpp"

namespace dms {

/// Height x width x channels of an activation (channels-last layout).
struct Shape3 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t size() const { return height * width * channels; }
  Tensor::Shape dims() const { return {height, width, channels}; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

enum class LayerKind { Dense, Conv2d, Relu, MaxPool2x2, Scale };
enum class Padding { Same, Valid };

/// One primitive of a sequential network.
///
/// Dense flattens its input and owns `units * (in + 1)` parameters laid out
/// as a row-major [units][in] weight block followed by `units` biases.
/// Conv2d (stride 1) owns `filters * (k * k * c_in + 1)` parameters laid out
/// as [filter][ky][kx][c_in] followed by `filters` biases.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t units = 0;    // dense outputs or conv filters
  std::size_t kernel = 0;   // conv kernel side
  Padding padding = Padding::Same;
  float factor = 1.0f;      // scale

  static LayerSpec dense(std::size_t units) {
    return {LayerKind::Dense, units, 0, Padding::Same, 1.0f};
  }
  static LayerSpec conv2d(std::size_t filters, std::size_t kernel,
                          Padding padding = Padding::Same) {
    return {LayerKind::Conv2d, filters, kernel, padding, 1.0f};
  }
  static LayerSpec relu() { return {LayerKind::Relu, 0, 0, Padding::Same, 1.0f}; }
  static LayerSpec maxpool() {
    return {LayerKind::MaxPool2x2, 0, 0, Padding::Same, 1.0f};
  }
  static LayerSpec scale(float factor) {
    return {LayerKind::Scale, 0, 0, Padding::Same, factor};
  }
};

std::string to_string(LayerKind kind);

struct Gradients {
  Tensor input;   // same shape as the forward input
  Tensor params;  // shape {param_count}
};

/// Sequential computation graph with a forward tape.
///
/// The architecture is fixed at construction. `forward` records every
/// intermediate activation; `backward` consumes the tape, so each gradient
/// needs its own forward pass. Instances are cheap to copy and a copy is
/// the unit of concurrency: never share one instance between threads.
class Graph {
 public:
  Graph(Shape3 input, std::vector<LayerSpec> layers);

  const Shape3& input_shape() const { return input_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t param_count() const { return param_count_; }
  std::size_t output_size() const { return shapes_.back().size(); }
  /// Shape entering node `i`; index `layers().size()` is the output.
  const Shape3& shape_at(std::size_t i) const { return shapes_[i]; }
  std::size_t param_offset(std::size_t layer) const { return offsets_[layer]; }

  /// Runs the network and records the tape. Returns logits of shape
  /// {output_size()}.
  Tensor forward(const Tensor& input, std::span<const float> params);

  /// Attaches softmax cross-entropy against `label` to the recorded logits
  /// and returns its value.
  float attach_loss(std::size_t label);

  /// Backpropagates `loss_seed * dL/dlogits` where L is the attached loss,
  /// or the single logit itself when no loss is attached and the network has
  /// one output.
  Gradients backward(float loss_seed = 1.0f);

  /// Backpropagates an explicit upstream gradient on the logits.
  Gradients backward_from(const Tensor& logit_grad);

  bool has_tape() const { return tape_.has_value(); }

  /// Tape-free double-precision replay of the same network. Used as the
  /// numeric side of gradient checks. `pattern`, when given, receives every
  /// ReLU on/off state and max-pool winner in node order.
  std::vector<double> evaluate(std::span<const double> input, std::span<const float> params,
                               std::vector<std::uint32_t>* pattern = nullptr) const;

 private:
  struct Tape {
    std::vector<std::vector<float>> activations;  // input to node i
    std::vector<std::vector<std::uint32_t>> argmax;
    std::vector<float> params;
    std::optional<std::size_t> label;
    std::vector<float> probabilities;
  };

  void check_input(const Tensor& input, std::span<const float> params) const;

  Shape3 input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape3> shapes_;
  std::vector<std::size_t> offsets_;
  std::size_t param_count_ = 0;
  std::optional<Tape> tape_;
};

/// Numerically stable softmax.
std::vector<float> softmax(std::span<const float> logits);

/// -log softmax(logits)[label].
float loss_ce(const Tensor& logits, std::size_t label);
double loss_ce(std::span<const double> logits, std::size_t label);

/// Target of a gradient check: cross-entropy against `label`.
struct GradCheckOptions {
  std::size_t samples = 100;
  double step = 1e-3;
  std::size_t label = 0;
  std::uint64_t seed = 0;
  /// Sample parameter coordinates as well as input coordinates.
  bool include_params = true;
  /// Redraw a coordinate when the +-step probes change a ReLU state or a
  /// max-pool winner: a difference across a kink is not a derivative.
  bool skip_kinks = true;
};

/// Max over sampled coordinates of |analytic - numeric| / (|numeric| + 1e-8),
/// numeric being a central difference of the double-precision replay.
/// Throws std::runtime_error if no smooth coordinates can be found.
double grad_check(Graph& graph, const Tensor& input,
                  std::span<const float> params,
                  const GradCheckOptions& options = {});

}  // namespace dms
