#include "dms/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dms/quantize.hpp"

namespace dms {
namespace {

// Gradient of the target with respect to pixel units at `pixels`.
std::vector<double> target_gradient(Graph& graph, const ModelParams& model,
                                    std::span<const float> pixels,
                                    const AttributionTarget& target) {
  std::vector<float> norm(pixels.size());
  for (std::size_t i = 0; i < norm.size(); ++i) norm[i] = pixels[i] / 255.0f;
  graph.forward(Tensor(model.input.shape().dims(), std::move(norm)), model.weights);
  Gradients g;
  if (target.kind == AttributionTarget::Kind::CrossEntropy) {
    graph.attach_loss(target.index);
    g = graph.backward();
  } else {
    if (target.index >= graph.output_size()) throw std::out_of_range("logit index out of range");
    Tensor seed({graph.output_size()});
    seed[target.index] = 1.0f;
    g = graph.backward_from(seed);
  }
  std::vector<double> out(g.input.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = double(g.input[i]) / 255.0;
  return out;
}

void clip_into(std::vector<int>& values, const DmsConfig& config) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    int lo = 0, hi = 255;
    if (config.budget) {
      const double slack = std::floor(255.0 * config.budget->epsilon + 1.0 + 1e-9);
      const int c = config.budget->clean[i];
      lo = std::max(lo, int(c - slack));
      hi = std::min(hi, int(c + slack));
    }
    values[i] = std::clamp(values[i], lo, hi);
  }
}

ImageF as_image(const Shape3& shape, const std::vector<int>& values) {
  std::vector<float> f(values.begin(), values.end());
  return ImageF(shape, std::move(f));
}

}  // namespace

double AttributionMap::total() const {
  return std::accumulate(scores.begin(), scores.end(), 0.0);
}

double target_value(const ModelParams& model, const ImageF& image,
                    const AttributionTarget& target) {
  Graph graph = model.graph();
  const Tensor logits = graph.forward(image.normalized(), model.weights);
  if (target.kind == AttributionTarget::Kind::CrossEntropy) {
    return loss_ce(logits, target.index);
  }
  if (target.index >= logits.size()) throw std::out_of_range("logit index out of range");
  return logits[target.index];
}

AttributionMap integrated_gradients(const ModelParams& model, const ImageF& x,
                                    const ImageF& baseline, const AttributionTarget& target,
                                    std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("integrated_gradients: m must be >= 1");
  if (!(x.shape() == baseline.shape()) || !(x.shape() == model.input.shape())) {
    throw std::invalid_argument("integrated_gradients: image, baseline and model shapes differ");
  }
  Graph graph = model.graph();
  const std::size_t n = x.size();
  std::vector<double> sum(n, 0.0);
  std::vector<float> point(n);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double t = double(k) / double(steps);
    for (std::size_t i = 0; i < n; ++i) {
      point[i] = static_cast<float>(baseline[i] + t * (double(x[i]) - baseline[i]));
    }
    const std::vector<double> g = target_gradient(graph, model, point, target);
    for (std::size_t i = 0; i < n; ++i) sum[i] += g[i];
  }
  AttributionMap map{x.shape(), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    map.scores[i] = (double(x[i]) - baseline[i]) * sum[i] / double(steps);
  }
  return map;
}

std::string to_string(AsTrigger trigger) {
  return trigger == AsTrigger::Always ? "always" : "on_failure";
}

std::optional<AsTrigger> parse_as_trigger(std::string_view name) {
  if (name == "always" || name == "Always") return AsTrigger::Always;
  if (name == "on_failure" || name == "OnFailure") return AsTrigger::OnFailure;
  return std::nullopt;
}

void DmsConfig::validate() const {
  if (!(k_ratio > 0.0 && k_ratio <= 1.0)) {
    throw std::invalid_argument("dms: k_ratio must be in (0, 1]");
  }
  if (riemann_steps < 1) throw std::invalid_argument("dms: riemann_steps must be >= 1");
  if (budget && !(budget->epsilon >= 0.0)) {
    throw std::invalid_argument("dms: budget epsilon must be >= 0");
  }
}

std::size_t selection_count(double k_ratio, std::size_t count) {
  const double raw = k_ratio * double(count);
  const double nearest = std::round(raw);
  if (std::abs(raw - nearest) <= 1e-9 * std::max(1.0, raw)) return std::size_t(nearest);
  return std::min(count, std::size_t(std::ceil(raw)));
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t count) {
  if (count > scores.size()) {
    throw std::invalid_argument("top_k: asked for " + std::to_string(count) + " of " +
                                std::to_string(scores.size()) + " scores");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + long(count), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(count);
  return idx;
}

ImageU8 dms_as(const ModelParams& model, const ImageU8& x, std::size_t label,
               const DmsConfig& config, AsTrace* trace) {
  config.validate();
  if (config.budget && !(config.budget->clean.shape() == x.shape())) {
    throw std::invalid_argument("dms_as: budget reference shape differs from the image");
  }
  const Shape3 shape = x.shape();
  const std::size_t k = selection_count(config.k_ratio, x.size());
  const auto target = AttributionTarget::loss(label);
  std::vector<int> cur(x.values().begin(), x.values().end());

  // Pass 1: baseline one step above, raise the strongest pixels.
  std::vector<int> base(cur.size());
  for (std::size_t i = 0; i < cur.size(); ++i) base[i] = std::clamp(cur[i] + 1, 0, 255);
  AttributionMap a = integrated_gradients(model, as_image(shape, cur), as_image(shape, base),
                                          target, config.riemann_steps);
  const std::vector<std::size_t> raised = top_k(a.scores, k);
  for (std::size_t i : raised) cur[i] += 1;

  // Pass 2 works on the pass-1 result: baseline one step below.
  for (std::size_t i = 0; i < cur.size(); ++i) base[i] = std::clamp(cur[i] - 1, 0, 255);
  a = integrated_gradients(model, as_image(shape, cur), as_image(shape, base), target,
                           config.riemann_steps);
  const std::vector<std::size_t> lowered = top_k(a.scores, k);
  for (std::size_t i : lowered) cur[i] -= 1;

  clip_into(cur, config);
  if (trace) *trace = {raised, lowered};
  return ImageU8(shape, std::vector<std::uint8_t>(cur.begin(), cur.end()));
}

ImageU8 dms_as(const ModelParams& model, const ImageF& x, std::size_t label,
               const DmsConfig& config, AsTrace* trace) {
  if (!x.is_integral()) throw std::invalid_argument("dms_as: input image is not integer-valued");
  return dms_as(model, ImageU8::from_integral(x), label, config, trace);
}

ImageU8 dms_ai(const ModelParams& model, const ImageF& x_adv, std::size_t label) {
  if (!x_adv.in_pixel_range()) throw std::invalid_argument("dms: image outside [0,255]");
  LossGradient loss(model);
  const auto result = loss.pixel_gradient(x_adv, label);
  return quantize(x_adv, QuantMethod::DmsAi, &result.grad);
}

DmsResult dms(const ModelParams& model, const ImageF& x_adv, std::size_t label,
              const DmsConfig& config) {
  config.validate();
  DmsResult result;
  result.integerized = dms_ai(model, x_adv, label);
  result.image = result.integerized;
  const bool run_as = config.as_trigger == AsTrigger::Always ||
                      predict(model, result.integerized).label == label;
  if (run_as) {
    result.image = dms_as(model, result.integerized, label, config);
    result.attribution_applied = true;
  }
  return result;
}

}  // namespace dms
