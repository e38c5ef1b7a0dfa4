#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dms/graph.hpp"
#include "dms/image.hpp"

namespace dms {

struct InputSpec {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::uint32_t classes = 0;

  Shape3 shape() const { return {height, width, channels}; }
  friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

struct LabeledSample {
  ImageU8 image;
  std::uint32_t label = 0;
};

/// Layer sequence for a named architecture:
///   mlp-small: dense(32)-relu-dense(classes)
///   cnn-small: conv(8,3x3)-relu-maxpool-conv(16,3x3)-relu-maxpool-
///              dense(64)-relu-dense(classes)
/// Throws for unknown names.
std::vector<LayerSpec> architecture_layers(const std::string& name, const InputSpec& spec);

/// A classifier: architecture name, input contract and flat weights. Stored
/// pixels are divided by 255 before entering the network.
struct ModelParams {
  std::string architecture;
  InputSpec input;
  std::vector<float> weights;

  Graph graph() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Seeded initialization, uniform in +-1/sqrt(fan_in) for weights and biases.
ModelParams build_model(const std::string& architecture, const InputSpec& spec,
                        std::uint64_t seed);

struct TrainOptions {
  std::size_t epochs = 10;
  float learning_rate = 0.05f;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelParams model;
  double train_accuracy = 0.0;
  std::vector<double> epoch_losses;  // mean loss during each epoch
};

/// Plain per-sample SGD with a seeded shuffle each epoch.
TrainResult train(ModelParams model, std::span<const LabeledSample> data,
                  const TrainOptions& options);

struct Prediction {
  std::size_t label = 0;
  std::vector<float> probabilities;
};

Prediction predict(const ModelParams& model, const ImageF& image);
Prediction predict(const ModelParams& model, const ImageU8& image);

double accuracy(const ModelParams& model, std::span<const LabeledSample> data);

/// Weight container:
///   "DMSW" | u16 version | u32 name length | name bytes |
///   u32 height, width, channels, classes | u64 count | count x f32
/// All integers and floats little-endian.
void save_weights(const ModelParams& model, const std::filesystem::path& path);
ModelParams load_weights(const std::filesystem::path& path);

/// Cross-entropy against `label` and its gradient with respect to the
/// image in pixel units. Reuses one graph so repeated calls do not rebuild
/// the architecture; not thread-safe.
class LossGradient {
 public:
  explicit LossGradient(const ModelParams& model);

  struct Result {
    float loss = 0.0f;
    std::vector<float> logits;
    ImageF grad;  // dJ/dpixel
  };

  Result pixel_gradient(const ImageF& image, std::size_t label);
  /// Gradient with respect to the normalized (pixel/255) input.
  std::vector<float> normalized_gradient(std::span<const float> normalized, std::size_t label,
                                         float* loss = nullptr);

  const ModelParams& model() const { return model_; }

 private:
  ModelParams model_;
  Graph graph_;
};

}  // namespace dms
