#include "dms/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dms/image_io.hpp"
#include "dms/random.hpp"

namespace dms {
namespace {

constexpr int kWaves = 3;
constexpr double kNoise = 24.0;

std::vector<double> make_template(const InputSpec& spec, Rng& rng) {
  const Shape3 shape = spec.shape();
  std::vector<double> t(shape.size());
  for (std::size_t c = 0; c < shape.channels; ++c) {
    const double base = rng.uniform(70.0, 185.0);
    struct Wave { double fy, fx, phase, amp; };
    Wave waves[kWaves];
    for (auto& w : waves) {
      w.fy = double(rng.index(3));
      w.fx = double(rng.index(3));
      w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      w.amp = rng.uniform(10.0, 22.0);
    }
    for (std::size_t y = 0; y < shape.height; ++y) {
      for (std::size_t x = 0; x < shape.width; ++x) {
        double v = base;
        for (const auto& w : waves) {
          v += w.amp * std::cos(2.0 * std::numbers::pi *
                                    (w.fy * double(y) / double(shape.height) +
                                     w.fx * double(x) / double(shape.width)) +
                                w.phase);
        }
        t[(y * shape.width + x) * shape.channels + c] = v;
      }
    }
  }
  return t;
}

}  // namespace

std::vector<LabeledSample> synth_dataset(std::size_t count, const InputSpec& spec,
                                         std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("synth_dataset: count must be >= 1");
  if (spec.classes == 0 || spec.shape().size() == 0) {
    throw std::invalid_argument("synth_dataset: empty input spec");
  }
  Rng template_rng(derive_seed(seed, 0));
  std::vector<std::vector<double>> templates;
  for (std::uint32_t k = 0; k < spec.classes; ++k) templates.push_back(make_template(spec, template_rng));

  Rng noise(derive_seed(seed, 1));
  std::vector<LabeledSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<std::uint32_t>(i % spec.classes);
    const auto& t = templates[label];
    std::vector<std::uint8_t> px(t.size());
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double v = std::round(t[j] + noise.uniform(-kNoise, kNoise));
      px[j] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    out.push_back({ImageU8(spec.shape(), std::move(px)), label});
  }
  return out;
}

std::vector<LabeledSample> load_image_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error(dir.string() + ": not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<LabeledSample> out;
  for (const auto& path : files) {
    const std::string name = path.filename().string();
    std::uint32_t label = 0;
    const auto stop = name.find('_');
    const auto [ptr, ec] = std::from_chars(name.data(), name.data() + std::min(stop, name.size()), label);
    if (ec != std::errc() || stop == std::string::npos || ptr != name.data() + stop) {
      throw std::runtime_error(path.string() + ": file name must start with '<label>_'");
    }
    out.push_back({read_ppm(path), label});
  }
  if (out.empty()) throw std::runtime_error(dir.string() + ": no .ppm/.pgm images found");
  return out;
}

}  // namespace dms
