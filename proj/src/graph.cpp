#include "dms/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace dms {
namespace {

std::string node_name(std::size_t index, const LayerSpec& layer) {
  return "node " + std::to_string(index) + " (" + to_string(layer.kind) + ")";
}

Shape3 output_shape(std::size_t index, const LayerSpec& layer, const Shape3& in) {
  switch (layer.kind) {
    case LayerKind::Dense:
      if (layer.units == 0) {
        throw std::invalid_argument(node_name(index, layer) + ": zero units");
      }
      return {1, 1, layer.units};
    case LayerKind::Conv2d: {
      if (layer.units == 0 || layer.kernel == 0 || layer.kernel % 2 == 0) {
        throw std::invalid_argument(node_name(index, layer) +
                                    ": filters must be positive and kernel odd");
      }
      if (layer.padding == Padding::Same) return {in.height, in.width, layer.units};
      if (in.height < layer.kernel || in.width < layer.kernel) {
        throw std::invalid_argument(node_name(index, layer) +
                                    ": input smaller than kernel");
      }
      return {in.height - layer.kernel + 1, in.width - layer.kernel + 1, layer.units};
    }
    case LayerKind::MaxPool2x2:
      if (in.height < 2 || in.width < 2) {
        throw std::invalid_argument(node_name(index, layer) +
                                    ": input smaller than 2x2");
      }
      return {in.height / 2, in.width / 2, in.channels};
    case LayerKind::Relu:
    case LayerKind::Scale:
      return in;
  }
  return in;
}

std::size_t layer_params(const LayerSpec& layer, const Shape3& in) {
  switch (layer.kind) {
    case LayerKind::Dense:
      return layer.units * (in.size() + 1);
    case LayerKind::Conv2d:
      return layer.units * (layer.kernel * layer.kernel * in.channels + 1);
    default:
      return 0;
  }
}

// Forward kernels are shared between the float tape path and the double
// replay used by gradient checks.

template <class T>
void dense_forward(const T* in, std::size_t n_in, const float* w, std::size_t units,
                   T* out) {
  const float* bias = w + units * n_in;
  for (std::size_t o = 0; o < units; ++o) {
    const float* row = w + o * n_in;
    double acc = bias[o];
    for (std::size_t i = 0; i < n_in; ++i) acc += double(row[i]) * double(in[i]);
    out[o] = static_cast<T>(acc);
  }
}

template <class T>
void conv_forward(const T* in, const Shape3& is, const LayerSpec& layer,
                  const float* w, const Shape3& os, T* out) {
  const std::size_t k = layer.kernel;
  const long pad = layer.padding == Padding::Same ? long(k / 2) : 0;
  const std::size_t fsize = k * k * is.channels;
  const float* bias = w + layer.units * fsize;
  for (std::size_t y = 0; y < os.height; ++y) {
    for (std::size_t x = 0; x < os.width; ++x) {
      for (std::size_t f = 0; f < layer.units; ++f) {
        double acc = bias[f];
        const float* filt = w + f * fsize;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const long iy = long(y) + long(ky) - pad;
          if (iy < 0 || iy >= long(is.height)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long ix = long(x) + long(kx) - pad;
            if (ix < 0 || ix >= long(is.width)) continue;
            const T* px = in + (std::size_t(iy) * is.width + std::size_t(ix)) * is.channels;
            const float* wk = filt + (ky * k + kx) * is.channels;
            for (std::size_t c = 0; c < is.channels; ++c) acc += double(wk[c]) * double(px[c]);
          }
        }
        out[(y * os.width + x) * layer.units + f] = static_cast<T>(acc);
      }
    }
  }
}

// Ties go to the first maximal element in window scan order, which is also
// the lowest flat input index.
template <class T>
void maxpool_forward(const T* in, const Shape3& is, const Shape3& os, T* out,
                     std::uint32_t* argmax) {
  for (std::size_t y = 0; y < os.height; ++y) {
    for (std::size_t x = 0; x < os.width; ++x) {
      for (std::size_t c = 0; c < os.channels; ++c) {
        std::size_t best = ((2 * y) * is.width + 2 * x) * is.channels + c;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx =
                ((2 * y + dy) * is.width + (2 * x + dx)) * is.channels + c;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (y * os.width + x) * os.channels + c;
        out[o] = in[best];
        if (argmax) argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

template <class T>
void layer_forward(const LayerSpec& layer, const Shape3& is, const Shape3& os,
                   const T* in, const float* w, T* out, std::uint32_t* argmax) {
  switch (layer.kind) {
    case LayerKind::Dense:
      dense_forward(in, is.size(), w, layer.units, out);
      break;
    case LayerKind::Conv2d:
      conv_forward(in, is, layer, w, os, out);
      break;
    case LayerKind::Relu:
      for (std::size_t i = 0; i < is.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
      break;
    case LayerKind::MaxPool2x2:
      maxpool_forward(in, is, os, out, argmax);
      break;
    case LayerKind::Scale:
      for (std::size_t i = 0; i < is.size(); ++i) out[i] = in[i] * static_cast<T>(layer.factor);
      break;
  }
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool2x2: return "maxpool2x2";
    case LayerKind::Scale: return "scale";
  }
  return "unknown";
}

Graph::Graph(Shape3 input, std::vector<LayerSpec> layers)
    : input_(input), layers_(std::move(layers)) {
  if (input_.size() == 0) throw std::invalid_argument("graph input shape is empty");
  shapes_.push_back(input_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    offsets_.push_back(param_count_);
    param_count_ += layer_params(layers_[i], shapes_.back());
    shapes_.push_back(output_shape(i, layers_[i], shapes_.back()));
  }
}

void Graph::check_input(const Tensor& input, std::span<const float> params) const {
  if (input.size() != input_.size()) {
    throw std::invalid_argument("node 0 (input): expected " +
                                to_string(input_.dims()) + " but got " +
                                to_string(input.shape()));
  }
  if (params.size() != param_count_) {
    throw std::invalid_argument("parameters: expected " + std::to_string(param_count_) +
                                " values but got " + std::to_string(params.size()));
  }
}

Tensor Graph::forward(const Tensor& input, std::span<const float> params) {
  check_input(input, params);
  Tape tape;
  tape.params.assign(params.begin(), params.end());
  tape.activations.reserve(layers_.size() + 1);
  tape.activations.emplace_back(input.values());
  tape.argmax.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Shape3& is = shapes_[i];
    const Shape3& os = shapes_[i + 1];
    std::vector<float> out(os.size());
    std::uint32_t* argmax = nullptr;
    if (layers_[i].kind == LayerKind::MaxPool2x2) {
      tape.argmax[i].resize(os.size());
      argmax = tape.argmax[i].data();
    }
    layer_forward<float>(layers_[i], is, os, tape.activations.back().data(),
                         tape.params.data() + offsets_[i], out.data(), argmax);
    tape.activations.push_back(std::move(out));
  }
  Tensor logits({output_size()}, tape.activations.back());
  tape_ = std::move(tape);
  return logits;
}

std::vector<double> Graph::evaluate(std::span<const double> input,
                                    std::span<const float> params,
                                    std::vector<std::uint32_t>* pattern) const {
  if (input.size() != input_.size() || params.size() != param_count_) {
    throw std::invalid_argument("node 0 (input): size mismatch in replay");
  }
  if (pattern) pattern->clear();
  std::vector<double> cur(input.begin(), input.end());
  std::vector<std::uint32_t> argmax;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Shape3& os = shapes_[i + 1];
    std::vector<double> out(os.size());
    const bool pool = layers_[i].kind == LayerKind::MaxPool2x2;
    if (pattern && pool) argmax.resize(os.size());
    layer_forward<double>(layers_[i], shapes_[i], os, cur.data(), params.data() + offsets_[i],
                          out.data(), pattern && pool ? argmax.data() : nullptr);
    if (pattern && pool) pattern->insert(pattern->end(), argmax.begin(), argmax.end());
    if (pattern && layers_[i].kind == LayerKind::Relu) {
      for (double v : cur) pattern->push_back(v > 0.0 ? 1u : 0u);
    }
    cur = std::move(out);
  }
  return cur;
}

float Graph::attach_loss(std::size_t label) {
  if (!tape_) throw std::logic_error("attach_loss called before forward");
  const auto& logits = tape_->activations.back();
  if (label >= logits.size()) {
    throw std::out_of_range("label " + std::to_string(label) + " out of range for " +
                            std::to_string(logits.size()) + " classes");
  }
  tape_->label = label;
  tape_->probabilities = softmax(logits);
  return loss_ce(Tensor({logits.size()}, logits), label);
}

Gradients Graph::backward(float loss_seed) {
  if (!tape_) throw std::logic_error("backward called before forward");
  Tensor seed({output_size()});
  if (tape_->label) {
    for (std::size_t i = 0; i < seed.size(); ++i) {
      const float onehot = i == *tape_->label ? 1.0f : 0.0f;
      seed[i] = loss_seed * (tape_->probabilities[i] - onehot);
    }
  } else if (output_size() == 1) {
    seed[0] = loss_seed;
  } else {
    throw std::logic_error("backward needs an attached loss or a scalar output");
  }
  return backward_from(seed);
}

Gradients Graph::backward_from(const Tensor& logit_grad) {
  if (!tape_) throw std::logic_error("backward called before forward");
  if (logit_grad.size() != output_size()) {
    throw std::invalid_argument("logit gradient has " + std::to_string(logit_grad.size()) +
                                " elements, expected " + std::to_string(output_size()));
  }
  Tape tape = std::move(*tape_);
  tape_.reset();

  std::vector<float> pgrad(param_count_, 0.0f);
  std::vector<float> grad(logit_grad.values());
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const LayerSpec& layer = layers_[li];
    const Shape3& is = shapes_[li];
    const Shape3& os = shapes_[li + 1];
    const std::vector<float>& in = tape.activations[li];
    const float* w = tape.params.data() + offsets_[li];
    float* gw = pgrad.data() + offsets_[li];
    std::vector<float> gin(is.size(), 0.0f);

    switch (layer.kind) {
      case LayerKind::Dense: {
        const std::size_t n_in = is.size();
        for (std::size_t o = 0; o < layer.units; ++o) {
          const float g = grad[o];
          gw[layer.units * n_in + o] += g;
          if (g == 0.0f) continue;
          for (std::size_t i = 0; i < n_in; ++i) gw[o * n_in + i] += g * in[i];
        }
        for (std::size_t i = 0; i < n_in; ++i) {
          double acc = 0.0;
          for (std::size_t o = 0; o < layer.units; ++o) acc += double(w[o * n_in + i]) * grad[o];
          gin[i] = static_cast<float>(acc);
        }
        break;
      }
      case LayerKind::Conv2d: {
        const std::size_t k = layer.kernel;
        const long pad = layer.padding == Padding::Same ? long(k / 2) : 0;
        const std::size_t fsize = k * k * is.channels;
        std::vector<double> gin_acc(is.size(), 0.0);
        for (std::size_t y = 0; y < os.height; ++y) {
          for (std::size_t x = 0; x < os.width; ++x) {
            for (std::size_t f = 0; f < layer.units; ++f) {
              const float g = grad[(y * os.width + x) * layer.units + f];
              if (g == 0.0f) continue;
              gw[layer.units * fsize + f] += g;
              for (std::size_t ky = 0; ky < k; ++ky) {
                const long iy = long(y) + long(ky) - pad;
                if (iy < 0 || iy >= long(is.height)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const long ix = long(x) + long(kx) - pad;
                  if (ix < 0 || ix >= long(is.width)) continue;
                  const std::size_t base =
                      (std::size_t(iy) * is.width + std::size_t(ix)) * is.channels;
                  const std::size_t wbase = f * fsize + (ky * k + kx) * is.channels;
                  for (std::size_t c = 0; c < is.channels; ++c) {
                    gw[wbase + c] += g * in[base + c];
                    gin_acc[base + c] += double(w[wbase + c]) * g;
                  }
                }
              }
            }
          }
        }
        for (std::size_t i = 0; i < gin.size(); ++i) gin[i] = static_cast<float>(gin_acc[i]);
        break;
      }
      case LayerKind::Relu:
        for (std::size_t i = 0; i < gin.size(); ++i) gin[i] = in[i] > 0.0f ? grad[i] : 0.0f;
        break;
      case LayerKind::MaxPool2x2:
        for (std::size_t o = 0; o < os.size(); ++o) gin[tape.argmax[li][o]] += grad[o];
        break;
      case LayerKind::Scale:
        for (std::size_t i = 0; i < gin.size(); ++i) gin[i] = grad[i] * layer.factor;
        break;
    }
    grad = std::move(gin);
  }

  Gradients out;
  out.input = Tensor(input_.dims(), std::move(grad));
  out.params = Tensor({param_count_}, std::move(pgrad));
  return out;
}

std::vector<float> softmax(std::span<const float> logits) {
  std::vector<float> out(logits.size());
  if (logits.empty()) return out;
  const float peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (float& v : out) v = static_cast<float>(v / total);
  return out;
}

float loss_ce(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw std::out_of_range("label " + std::to_string(label) + " out of range for " +
                            std::to_string(logits.size()) + " classes");
  }
  const float peak = *std::max_element(logits.data().begin(), logits.data().end());
  double total = 0.0;
  for (float v : logits.data()) total += std::exp(double(v) - peak);
  return static_cast<float>(std::log(total) - (double(logits[label]) - peak));
}

double loss_ce(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw std::out_of_range("label out of range");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - peak);
  return std::log(total) - (logits[label] - peak);
}

double grad_check(Graph& graph, const Tensor& input, std::span<const float> params,
                  const GradCheckOptions& options) {
  if (options.samples == 0) throw std::invalid_argument("grad_check needs samples >= 1");
  graph.forward(input, params);
  graph.attach_loss(options.label);
  const Gradients analytic = graph.backward();

  std::vector<double> x(input.data().begin(), input.data().end());
  std::vector<float> p(params.begin(), params.end());
  const std::size_t n_input = x.size();
  const std::size_t n_total = n_input + (options.include_params ? p.size() : 0);

  // Parameters stay float, so parameter differences divide by the step that
  // survives rounding rather than the nominal one.
  std::vector<std::uint32_t> reference, probe;
  graph.evaluate(x, p, &reference);
  bool crossed = false;
  auto loss_at = [&](const std::vector<double>& xin) {
    const double loss = loss_ce(graph.evaluate(xin, p, &probe), options.label);
    crossed = crossed || probe != reference;
    return loss;
  };

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n_total - 1);
  double worst = 0.0;
  std::size_t checked = 0;
  const std::size_t max_draws = 100 * options.samples;
  for (std::size_t draw = 0; checked < options.samples; ++draw) {
    if (draw == max_draws) {
      throw std::runtime_error("grad_check: every sampled coordinate sits next to a kink");
    }
    const std::size_t idx = pick(rng);
    crossed = false;
    double numeric = 0.0;
    double exact = 0.0;
    if (idx < n_input) {
      const double saved = x[idx];
      x[idx] = saved + options.step;
      const double up = loss_at(x);
      x[idx] = saved - options.step;
      const double down = loss_at(x);
      x[idx] = saved;
      numeric = (up - down) / (2.0 * options.step);
      exact = analytic.input[idx];
    } else {
      const std::size_t j = idx - n_input;
      const float saved = p[j];
      const float up_w = static_cast<float>(saved + options.step);
      const float down_w = static_cast<float>(saved - options.step);
      p[j] = up_w;
      const double up = loss_at(x);
      p[j] = down_w;
      const double down = loss_at(x);
      p[j] = saved;
      numeric = (up - down) / (double(up_w) - double(down_w));
      exact = analytic.params[j];
    }
    if (crossed && options.skip_kinks) continue;
    ++checked;
    worst = std::max(worst, std::abs(exact - numeric) / (std::abs(numeric) + 1e-8));
  }
  return worst;
}

}  // namespace dms
