#include "dms/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "dms/random.hpp"

namespace dms {
namespace {

constexpr char kMagic[4] = {'D', 'M', 'S', 'W'};
constexpr std::uint16_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

template <class T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, const std::filesystem::path& path)
      : data_(data), path_(path) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw std::runtime_error(path_.string() + ": truncated while reading " + what);
    }
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  const std::string& data_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

std::size_t fan_in(const LayerSpec& layer, const Shape3& in) {
  if (layer.kind == LayerKind::Dense) return in.size();
  return layer.kernel * layer.kernel * in.channels;
}

}  // namespace

std::vector<LayerSpec> architecture_layers(const std::string& name, const InputSpec& spec) {
  if (spec.classes == 0 || spec.height == 0 || spec.width == 0 || spec.channels == 0) {
    throw std::invalid_argument("input spec must have positive dimensions and classes");
  }
  if (name == "mlp-small") {
    return {LayerSpec::dense(32), LayerSpec::relu(), LayerSpec::dense(spec.classes)};
  }
  if (name == "cnn-small") {
    if (spec.height < 4 || spec.width < 4) {
      throw std::invalid_argument("cnn-small needs at least 4x4 inputs");
    }
    return {LayerSpec::conv2d(8, 3),  LayerSpec::relu(), LayerSpec::maxpool(),
            LayerSpec::conv2d(16, 3), LayerSpec::relu(), LayerSpec::maxpool(),
            LayerSpec::dense(64),     LayerSpec::relu(), LayerSpec::dense(spec.classes)};
  }
  throw std::invalid_argument("unknown architecture '" + name + "'");
}

Graph ModelParams::graph() const {
  Graph g(input.shape(), architecture_layers(architecture, input));
  if (g.param_count() != weights.size()) {
    throw std::invalid_argument(architecture + " expects " + std::to_string(g.param_count()) +
                                " weights, model holds " + std::to_string(weights.size()));
  }
  return g;
}

ModelParams build_model(const std::string& architecture, const InputSpec& spec,
                        std::uint64_t seed) {
  const Graph g(spec.shape(), architecture_layers(architecture, spec));
  ModelParams model{architecture, spec, std::vector<float>(g.param_count())};
  Rng rng(seed);
  for (std::size_t i = 0; i < g.layers().size(); ++i) {
    const LayerSpec& layer = g.layers()[i];
    if (layer.kind != LayerKind::Dense && layer.kind != LayerKind::Conv2d) continue;
    const double bound = 1.0 / std::sqrt(double(fan_in(layer, g.shape_at(i))));
    const std::size_t begin = g.param_offset(i);
    const std::size_t end = i + 1 < g.layers().size() ? g.param_offset(i + 1) : g.param_count();
    for (std::size_t j = begin; j < end; ++j) {
      model.weights[j] = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
  return model;
}

TrainResult train(ModelParams model, std::span<const LabeledSample> data,
                  const TrainOptions& options) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (!(options.learning_rate > 0.0f)) throw std::invalid_argument("train: lr must be > 0");
  Graph graph = model.graph();
  for (const auto& sample : data) {
    if (!(sample.image.shape() == model.input.shape()) || sample.label >= model.input.classes) {
      throw std::invalid_argument("train: sample does not match the model input spec");
    }
  }

  Rng rng(options.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t idx : order) {
      const LabeledSample& sample = data[idx];
      graph.forward(sample.image.normalized(), model.weights);
      total += graph.attach_loss(sample.label);
      const Gradients grads = graph.backward();
      for (std::size_t j = 0; j < model.weights.size(); ++j) {
        model.weights[j] -= options.learning_rate * grads.params[j];
      }
    }
    result.epoch_losses.push_back(total / double(data.size()));
  }
  result.train_accuracy = accuracy(model, data);
  result.model = std::move(model);
  return result;
}

Prediction predict(const ModelParams& model, const ImageF& image) {
  if (!(image.shape() == model.input.shape())) {
    throw std::invalid_argument("predict: image shape " + to_string(image.shape().dims()) +
                                " does not match model input " +
                                to_string(model.input.shape().dims()));
  }
  Graph graph = model.graph();
  const Tensor logits = graph.forward(image.normalized(), model.weights);
  Prediction p;
  p.probabilities = softmax(logits.data());
  // max_element returns the first maximum, so ties go to the lowest class.
  p.label = std::size_t(std::max_element(logits.data().begin(), logits.data().end()) -
                        logits.data().begin());
  return p;
}

Prediction predict(const ModelParams& model, const ImageU8& image) {
  return predict(model, ImageF(image));
}

double accuracy(const ModelParams& model, std::span<const LabeledSample> data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : data) hits += predict(model, s.image).label == s.label;
  return double(hits) / double(data.size());
}

void save_weights(const ModelParams& model, const std::filesystem::path& path) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint16_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.architecture.size()));
  out += model.architecture;
  put<std::uint32_t>(out, model.input.height);
  put<std::uint32_t>(out, model.input.width);
  put<std::uint32_t>(out, model.input.channels);
  put<std::uint32_t>(out, model.input.classes);
  put<std::uint64_t>(out, model.weights.size());
  out.append(reinterpret_cast<const char*>(model.weights.data()),
             model.weights.size() * sizeof(float));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error(path.string() + ": cannot open for writing");
  file.write(out.data(), std::streamsize(out.size()));
  if (!file) throw std::runtime_error(path.string() + ": write failed");
}

ModelParams load_weights(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error(path.string() + ": cannot open for reading");
  const std::string data((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  Reader r(data, path);

  if (r.bytes(4, "magic") != std::string(kMagic, 4)) {
    throw std::runtime_error(path.string() + ": bad magic, not a DMSW weight file");
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kVersion) {
    throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));
  }
  ModelParams model;
  const auto name_len = r.get<std::uint32_t>("name length");
  model.architecture = r.bytes(name_len, "architecture name");
  model.input.height = r.get<std::uint32_t>("height");
  model.input.width = r.get<std::uint32_t>("width");
  model.input.channels = r.get<std::uint32_t>("channels");
  model.input.classes = r.get<std::uint32_t>("classes");
  const auto count = r.get<std::uint64_t>("parameter count");
  if (count > r.remaining() / sizeof(float)) {
    throw std::runtime_error(path.string() + ": header declares " + std::to_string(count) +
                             " parameters but the file is shorter");
  }
  if (r.remaining() != count * sizeof(float)) {
    throw std::runtime_error(path.string() + ": trailing bytes after parameters");
  }
  model.weights.resize(count);
  const std::string payload = r.bytes(count * sizeof(float), "parameters");
  std::memcpy(model.weights.data(), payload.data(), payload.size());
  model.graph();  // validates architecture against the parameter count
  return model;
}

LossGradient::LossGradient(const ModelParams& model) : model_(model), graph_(model.graph()) {}

std::vector<float> LossGradient::normalized_gradient(std::span<const float> normalized,
                                                     std::size_t label, float* loss) {
  Tensor input(model_.input.shape().dims(), std::vector<float>(normalized.begin(), normalized.end()));
  graph_.forward(input, model_.weights);
  const float value = graph_.attach_loss(label);
  if (loss) *loss = value;
  return std::move(graph_.backward().input.values());
}

LossGradient::Result LossGradient::pixel_gradient(const ImageF& image, std::size_t label) {
  Result result;
  const Tensor input = image.normalized();
  result.logits = graph_.forward(input, model_.weights).values();
  result.loss = graph_.attach_loss(label);
  std::vector<float> g = std::move(graph_.backward().input.values());
  for (float& v : g) v /= 255.0f;
  result.grad = ImageF(image.shape(), std::move(g));
  return result;
}

}  // namespace dms
