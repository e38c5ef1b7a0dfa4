#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "dms/dataset.hpp"
#include "dms/image_io.hpp"
#include "dms/model.hpp"

using namespace dms;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dms_model_test";
  fs::create_directories(dir);
  return dir / name;
}

// Two classes split by mean brightness.
std::vector<LabeledSample> separable(std::size_t n, const InputSpec& spec) {
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t label = i % 2;
    ImageU8 img(spec.shape());
    for (std::size_t j = 0; j < img.size(); ++j) {
      img[j] = std::uint8_t((label ? 170 : 40) + (i * 7 + j * 13) % 40);
    }
    out.push_back({img, label});
  }
  return out;
}

}  // namespace

TEST(Build, Deterministic) {
  const InputSpec spec{8, 8, 3, 4};
  EXPECT_EQ(build_model("cnn-small", spec, 5).weights, build_model("cnn-small", spec, 5).weights);
  EXPECT_NE(build_model("cnn-small", spec, 5).weights, build_model("cnn-small", spec, 6).weights);
}

TEST(Build, MlpParameterCountByHand) {
  const InputSpec spec{8, 8, 1, 2};
  const std::size_t expect = 32 * (64 + 1) + 2 * (32 + 1);
  EXPECT_EQ(build_model("mlp-small", spec, 0).weights.size(), expect);
}

TEST(Build, CnnParameterCountByHand) {
  const InputSpec spec{16, 16, 3, 4};
  const std::size_t conv1 = 8 * (3 * 3 * 3 + 1);
  const std::size_t conv2 = 16 * (3 * 3 * 8 + 1);
  const std::size_t dense1 = 64 * (4 * 4 * 16 + 1);
  const std::size_t dense2 = 4 * (64 + 1);
  EXPECT_EQ(build_model("cnn-small", spec, 0).weights.size(), conv1 + conv2 + dense1 + dense2);
}

TEST(Build, InitRange) {
  const InputSpec spec{8, 8, 1, 2};
  const auto m = build_model("mlp-small", spec, 1);
  const float first = 1.0f / std::sqrt(64.0f);
  for (std::size_t i = 0; i < 32 * 65; ++i) EXPECT_LE(std::abs(m.weights[i]), first);
}

TEST(Build, RejectsUnknownArchitecture) {
  EXPECT_THROW(build_model("resnet", {8, 8, 3, 2}, 0), std::invalid_argument);
  EXPECT_THROW(build_model("mlp-small", {8, 8, 3, 0}, 0), std::invalid_argument);
}

TEST(Train, ZeroEpochsKeepsWeights) {
  const InputSpec spec{4, 4, 1, 2};
  const auto m = build_model("mlp-small", spec, 2);
  const auto r = train(m, separable(10, spec), {0, 0.1f, 0});
  EXPECT_EQ(r.model.weights, m.weights);
}

TEST(Train, RejectsEmptyData) {
  const InputSpec spec{4, 4, 1, 2};
  EXPECT_THROW(train(build_model("mlp-small", spec, 0), {}, {}), std::invalid_argument);
}

TEST(Train, SeparableReachesHighAccuracyAndIsDeterministic) {
  const InputSpec spec{6, 6, 1, 2};
  const auto data = separable(60, spec);
  const auto m = build_model("mlp-small", spec, 3);
  const TrainOptions opt{20, 0.05f, 9};
  const auto a = train(m, data, opt);
  const auto b = train(m, data, opt);
  EXPECT_GE(a.train_accuracy, 0.95);
  EXPECT_EQ(a.model.weights, b.model.weights);
  ASSERT_EQ(a.epoch_losses.size(), 20u);
  EXPECT_LT(a.epoch_losses.back(), a.epoch_losses.front());
  EXPECT_EQ(predict(a.model, data[0].image).label, data[0].label);
  EXPECT_EQ(predict(a.model, data[1].image).label, data[1].label);
}

TEST(Train, LossMostlyNonIncreasingOnSynthetic) {
  const InputSpec spec{8, 8, 3, 3};
  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto data = synth_dataset(60, spec, seed);
    const auto r = train(build_model("mlp-small", spec, seed), data, {5, 0.02f, seed});
    bool ok = true;
    for (std::size_t e = 1; e < r.epoch_losses.size(); ++e) {
      ok = ok && r.epoch_losses[e] <= r.epoch_losses[e - 1];
    }
    monotone += ok;
  }
  EXPECT_GE(monotone, 9);
}

TEST(Predict, TiesGoToFirstClass) {
  ModelParams m = build_model("mlp-small", {2, 2, 1, 3}, 0);
  std::fill(m.weights.begin(), m.weights.end(), 0.0f);
  const auto p = predict(m, ImageU8({2, 2, 1}, 7));
  EXPECT_EQ(p.label, 0u);
  for (float v : p.probabilities) EXPECT_NEAR(v, 1.0f / 3.0f, 1e-6);
}

TEST(Predict, U8AndFloatAgree) {
  const InputSpec spec{8, 8, 3, 4};
  const auto m = build_model("cnn-small", spec, 4);
  for (const auto& s : synth_dataset(8, spec, 1)) {
    const auto a = predict(m, s.image);
    const auto b = predict(m, ImageF(s.image));
    EXPECT_EQ(a.label, b.label);
    EXPECT_EQ(a.probabilities, b.probabilities);
  }
}

TEST(Predict, RejectsShapeMismatch) {
  const auto m = build_model("mlp-small", {4, 4, 1, 2}, 0);
  EXPECT_THROW(predict(m, ImageU8({4, 4, 3})), std::invalid_argument);
}

TEST(Weights, RoundTrip) {
  const auto m = build_model("cnn-small", {8, 8, 3, 4}, 11);
  const auto path = scratch("roundtrip.dmsw");
  save_weights(m, path);
  EXPECT_EQ(load_weights(path), m);
  // magic, version, name length, name, four u32, u64 count, floats
  EXPECT_EQ(fs::file_size(path), 4 + 2 + 4 + m.architecture.size() + 16 + 8 + 4 * m.weights.size());
}

TEST(Weights, RejectsCorruption) {
  const auto m = build_model("mlp-small", {4, 4, 1, 2}, 0);
  const auto path = scratch("corrupt.dmsw");
  save_weights(m, path);
  std::string bytes = read_file(path);

  std::string bad = bytes;
  bad[0] = 'X';
  write_file(path, bad);
  EXPECT_THROW(load_weights(path), std::runtime_error);

  bad = bytes;
  bad[4] = 9;  // version
  write_file(path, bad);
  EXPECT_THROW(load_weights(path), std::runtime_error);

  write_file(path, bytes.substr(0, bytes.size() - 4));
  try {
    load_weights(path);
    FAIL() << "truncated file accepted";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("shorter"), std::string::npos) << e.what();
  }

  write_file(path, bytes + "x");
  EXPECT_THROW(load_weights(path), std::runtime_error);
  EXPECT_THROW(load_weights(scratch("missing.dmsw")), std::runtime_error);
}

TEST(LossGradient, PixelGradientIsNormalizedOver255) {
  const InputSpec spec{6, 6, 3, 3};
  const auto m = build_model("cnn-small", spec, 2);
  LossGradient lg(m);
  const ImageF x(synth_dataset(1, spec, 0)[0].image);
  const auto pix = lg.pixel_gradient(x, 1);
  const Tensor xn = x.normalized();
  float loss = 0;
  const auto norm = lg.normalized_gradient(xn.data(), 1, &loss);
  EXPECT_FLOAT_EQ(loss, pix.loss);
  for (std::size_t i = 0; i < norm.size(); ++i) EXPECT_FLOAT_EQ(pix.grad[i], norm[i] / 255.0f);
}

TEST(Dataset, SyntheticContract) {
  const InputSpec spec{8, 8, 3, 2};
  const auto a = synth_dataset(100, spec, 3);
  const auto b = synth_dataset(100, spec, 3);
  ASSERT_EQ(a.size(), 100u);
  std::size_t ones = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].label, i % 2);
    ones += a[i].label;
  }
  EXPECT_EQ(ones, 50u);
  EXPECT_NE(synth_dataset(4, spec, 4)[0].image, a[0].image);
  EXPECT_THROW(synth_dataset(0, spec, 0), std::invalid_argument);
}

TEST(Dataset, DirectoryLoader) {
  const fs::path dir = scratch("images");
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_ppm(ImageU8({2, 2, 3}, 10), dir / "1_b.ppm");
  write_ppm(ImageU8({2, 2, 3}, 20), dir / "0_a.ppm");
  write_file(dir / "notes.txt", "ignored");
  const auto data = load_image_directory(dir);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data[0].label, 0u);
  EXPECT_EQ(data[0].image[0], 20);
  EXPECT_EQ(data[1].label, 1u);
  write_ppm(ImageU8({2, 2, 3}), dir / "nolabel.ppm");
  EXPECT_THROW(load_image_directory(dir), std::runtime_error);
}
