#include "dms/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dms/random.hpp"

namespace dms {
namespace {

template <class T>
float sign(T v) {
  return v > T(0) ? 1.0f : (v < T(0) ? -1.0f : 0.0f);
}

void accumulate_momentum(std::vector<double>& momentum, std::span<const double> grad,
                         double decay) {
  double l1 = 0.0;
  for (double g : grad) l1 += std::abs(g);
  for (std::size_t i = 0; i < momentum.size(); ++i) {
    momentum[i] = decay * momentum[i] + (l1 > 0.0 ? grad[i] / l1 : 0.0);
  }
}

}  // namespace

std::string to_string(AttackMethod method) {
  switch (method) {
    case AttackMethod::IFGSM: return "IFGSM";
    case AttackMethod::PGD: return "PGD";
    case AttackMethod::MIFGSM: return "MIFGSM";
    case AttackMethod::TIFGSM: return "TIFGSM";
    case AttackMethod::SINIFGSM: return "SINIFGSM";
  }
  return "?";
}

std::optional<AttackMethod> parse_attack_method(std::string_view name) {
  for (auto m : {AttackMethod::IFGSM, AttackMethod::PGD, AttackMethod::MIFGSM,
                 AttackMethod::TIFGSM, AttackMethod::SINIFGSM}) {
    if (name == to_string(m)) return m;
  }
  return std::nullopt;
}

double AttackConfig::step_size() const {
  return alpha ? *alpha : epsilon / double(steps == 0 ? 1 : steps);
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw std::invalid_argument("attack: epsilon must be >= 0");
  }
  if (steps < 1) throw std::invalid_argument("attack: steps must be >= 1");
  if (epsilon > 0.0 && !(step_size() > 0.0)) {
    throw std::invalid_argument("attack: alpha must be > 0");
  }
  if (!(decay >= 0.0)) throw std::invalid_argument("attack: decay must be >= 0");
  if (kernel_size % 2 == 0) throw std::invalid_argument("attack: kernel_size must be odd");
  if (!(kernel_sigma > 0.0)) throw std::invalid_argument("attack: kernel_sigma must be > 0");
  if (scale_copies < 1) throw std::invalid_argument("attack: scale_copies must be >= 1");
}

Kernel2D gaussian_kernel(std::size_t size, double sigma) {
  if (size % 2 == 0) throw std::invalid_argument("gaussian_kernel: size must be odd");
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
  Kernel2D k{size, std::vector<double>(size * size)};
  const long r = long(size / 2);
  double total = 0.0;
  for (long i = -r; i <= r; ++i) {
    for (long j = -r; j <= r; ++j) {
      const double v = std::exp(-double(i * i + j * j) / (2.0 * sigma * sigma));
      k.values[std::size_t(i + r) * size + std::size_t(j + r)] = v;
      total += v;
    }
  }
  for (double& v : k.values) v /= total;
  return k;
}

std::vector<double> smooth_channels(std::span<const double> values, const Shape3& shape,
                                    const Kernel2D& kernel) {
  std::vector<double> out(values.size(), 0.0);
  const long r = long(kernel.size / 2);
  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      for (std::size_t c = 0; c < shape.channels; ++c) {
        double acc = 0.0;
        for (long dy = -r; dy <= r; ++dy) {
          const long yy = long(y) + dy;
          if (yy < 0 || yy >= long(shape.height)) continue;
          for (long dx = -r; dx <= r; ++dx) {
            const long xx = long(x) + dx;
            if (xx < 0 || xx >= long(shape.width)) continue;
            acc += kernel.at(std::size_t(dy + r), std::size_t(dx + r)) *
                   values[(std::size_t(yy) * shape.width + std::size_t(xx)) * shape.channels + c];
          }
        }
        out[(y * shape.width + x) * shape.channels + c] = acc;
      }
    }
  }
  return out;
}

std::vector<float> run_attack(const GradientFn& gradient, const Shape3& shape,
                              std::span<const float> clean, const AttackConfig& config) {
  config.validate();
  if (clean.size() != shape.size()) throw std::invalid_argument("attack: input shape mismatch");
  const std::size_t n = clean.size();
  const auto eps = static_cast<float>(config.epsilon);
  const double alpha = config.step_size();

  std::vector<float> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = std::max(0.0f, clean[i] - eps);
    hi[i] = std::min(1.0f, clean[i] + eps);
  }
  auto project = [&](std::vector<float>& x) {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
  };

  std::vector<float> x(clean.begin(), clean.end());
  if (config.method == AttackMethod::PGD && config.random_start) {
    Rng rng(config.seed);
    for (float& v : x) v += static_cast<float>(rng.uniform(-config.epsilon, config.epsilon));
    project(x);
  }

  const bool uses_momentum = config.method == AttackMethod::MIFGSM ||
                             config.method == AttackMethod::TIFGSM ||
                             config.method == AttackMethod::SINIFGSM;
  std::optional<Kernel2D> kernel;
  if (config.method == AttackMethod::TIFGSM) {
    kernel = gaussian_kernel(config.kernel_size, config.kernel_sigma);
  }
  std::vector<double> momentum(n, 0.0);
  std::vector<double> grad(n);

  for (std::size_t step = 0; step < config.steps; ++step) {
    if (config.method == AttackMethod::SINIFGSM) {
      std::vector<float> lookahead(n);
      for (std::size_t i = 0; i < n; ++i) {
        lookahead[i] = static_cast<float>(x[i] + alpha * config.decay * momentum[i]);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      std::vector<float> scaled(n);
      for (std::size_t copy = 0; copy < config.scale_copies; ++copy) {
        const double factor = std::ldexp(1.0, -int(copy));
        for (std::size_t i = 0; i < n; ++i) scaled[i] = static_cast<float>(lookahead[i] * factor);
        const std::vector<float> g = gradient(scaled);
        // d/dx J(x * factor) = factor * J'(x * factor)
        for (std::size_t i = 0; i < n; ++i) grad[i] += factor * g[i];
      }
      for (double& g : grad) g /= double(config.scale_copies);
    } else {
      const std::vector<float> g = gradient(x);
      if (g.size() != n) throw std::logic_error("attack: gradient has the wrong size");
      std::copy(g.begin(), g.end(), grad.begin());
      if (kernel) grad = smooth_channels(grad, shape, *kernel);
    }

    std::span<const double> direction = grad;
    if (uses_momentum) {
      accumulate_momentum(momentum, grad, config.decay);
      direction = momentum;
    }
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<float>(x[i] + alpha * sign(direction[i]));
    }
    project(x);
  }
  return x;
}

ImageF attack(const ModelParams& model, const LabeledSample& sample,
              const AttackConfig& config) {
  if (!(sample.image.shape() == model.input.shape())) {
    throw std::invalid_argument("attack: sample shape does not match the model");
  }
  LossGradient loss(model);
  const std::size_t label = sample.label;
  GradientFn fn = [&loss, label](std::span<const float> x) {
    return loss.normalized_gradient(x, label);
  };
  const Tensor clean = sample.image.normalized();
  const std::vector<float> adv = run_attack(fn, model.input.shape(), clean.data(), config);
  // Expressed as an offset from the clean pixels so untouched pixels stay
  // bit-identical to the stored originals.
  ImageF out(sample.image);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(out[i] + (adv[i] - clean[i]) * 255.0f, 0.0f, 255.0f);
  }
  return out;
}

}  // namespace dms
