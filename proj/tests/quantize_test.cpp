#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "dms/quantize.hpp"
#include "dms/random.hpp"

using namespace dms;

namespace {

// Scalar oracles written straight from the definitions, in double.
double oracle_upper(double v) { return std::min(255.0, std::max(0.0, std::ceil(v))); }
double oracle_truncate(double v) { return std::min(255.0, std::max(0.0, std::floor(v))); }
double oracle_round(double v) {
  const double f = std::floor(v);
  const double r = v - f >= 0.5 ? f + 1 : f;
  return std::min(255.0, std::max(0.0, r));
}
double oracle_dms_ai(double v, double g) {
  if (v == std::floor(v)) return v;
  if (g > 0) return oracle_upper(v);
  if (g < 0) return oracle_truncate(v);
  return oracle_round(v);
}

ImageF random_image(Shape3 s, std::uint64_t seed) {
  Rng rng(seed);
  ImageF img(s);
  for (float& v : img.values()) v = float(rng.uniform(0, 255));
  return img;
}

}  // namespace

TEST(Scalar, Examples) {
  EXPECT_EQ(quantize_value(100.3f, QuantMethod::DmsAi, 0.5f), 101.0f);
  EXPECT_EQ(quantize_value(100.3f, QuantMethod::DmsAi, -0.5f), 100.0f);
  for (auto m : {QuantMethod::Upper, QuantMethod::Truncate, QuantMethod::Round, QuantMethod::DmsAi}) {
    for (float g : {-1.0f, 0.0f, 1.0f}) EXPECT_EQ(quantize_value(7.0f, m, g), 7.0f);
  }
  EXPECT_EQ(quantize_value(0.25f, QuantMethod::Truncate), 0.0f);
  EXPECT_EQ(quantize_value(0.25f, QuantMethod::Round), 0.0f);
  EXPECT_EQ(quantize_value(0.25f, QuantMethod::Upper), 1.0f);
}

TEST(Scalar, HalvesRoundAwayFromZero) {
  EXPECT_EQ(round_half_away(2.5f), 3.0f);
  EXPECT_EQ(round_half_away(3.5f), 4.0f);
  EXPECT_EQ(round_half_away(-2.5f), -3.0f);
  EXPECT_EQ(quantize_value(12.5f, QuantMethod::DmsAi, 0.0f), 13.0f);
  EXPECT_EQ(quantize_value(12.5f, QuantMethod::DmsAi, -0.0f), 13.0f);
}

TEST(Scalar, MatchesOracles) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const float v = float(rng.uniform(0, 255));
    const float g = i % 17 == 0 ? 0.0f : float(rng.uniform(-1, 1));
    ASSERT_EQ(quantize_value(v, QuantMethod::Upper), oracle_upper(v)) << v;
    ASSERT_EQ(quantize_value(v, QuantMethod::Truncate), oracle_truncate(v)) << v;
    ASSERT_EQ(quantize_value(v, QuantMethod::Round), oracle_round(v)) << v;
    ASSERT_EQ(quantize_value(v, QuantMethod::DmsAi, g), oracle_dms_ai(v, g)) << v << " " << g;
  }
}

TEST(Image, ConstantQuarterField) {
  const ImageF x({4, 4, 3}, 0.25f);
  EXPECT_EQ(quantize(x, QuantMethod::Truncate), ImageU8({4, 4, 3}, 0));
  EXPECT_EQ(quantize(x, QuantMethod::Round), ImageU8({4, 4, 3}, 0));
  EXPECT_EQ(quantize(x, QuantMethod::Upper), ImageU8({4, 4, 3}, 1));
  EXPECT_DOUBLE_EQ(precision_loss(x, quantize(x, QuantMethod::Truncate)), 0.25);
}

TEST(Image, ClipsToRange) {
  const ImageF x({1, 1, 2}, std::vector<float>{254.5f, 0.2f});
  const ImageF g({1, 1, 2}, std::vector<float>{1.0f, -1.0f});
  const ImageU8 q = quantize(x, QuantMethod::DmsAi, &g);
  EXPECT_EQ(q[0], 255);
  EXPECT_EQ(q[1], 0);
}

TEST(Image, DmsAiNeedsMatchingGradient) {
  const ImageF x({2, 2, 1}, 1.5f);
  EXPECT_THROW(quantize(x, QuantMethod::DmsAi), std::invalid_argument);
  const ImageF g({2, 2, 3});
  EXPECT_THROW(quantize(x, QuantMethod::DmsAi, &g), std::invalid_argument);
}

TEST(Image, Invariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ImageF x = random_image({8, 8, 3}, seed);
    const ImageF g = random_image({8, 8, 3}, seed + 100);
    ImageF centered = g;
    for (float& v : centered.values()) v -= 127.5f;
    ImageF scaled = centered;
    for (float& v : scaled.values()) v *= 3.7f;

    const ImageU8 r = quantize(x, QuantMethod::Round);
    const ImageU8 d = quantize(x, QuantMethod::DmsAi, &centered);
    EXPECT_EQ(d, quantize(x, QuantMethod::DmsAi, &scaled));
    for (auto m : {QuantMethod::Upper, QuantMethod::Truncate, QuantMethod::Round}) {
      const ImageU8 q = quantize(x, m);
      for (std::size_t i = 0; i < x.size(); ++i) ASSERT_LT(std::abs(q[i] - x[i]), 1.0f);
      EXPECT_LE(precision_loss(x, r), precision_loss(x, q));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      ASSERT_LE(std::abs(r[i] - x[i]), 0.5f);
      ASSERT_LT(std::abs(d[i] - x[i]), 1.0f);
      if (centered[i] > 0) ASSERT_GE(float(d[i]), x[i]);
      if (centered[i] < 0) ASSERT_LE(float(d[i]), x[i]);
    }

    const ImageF promoted(r);
    for (auto m : {QuantMethod::Upper, QuantMethod::Truncate, QuantMethod::Round, QuantMethod::DmsAi}) {
      EXPECT_EQ(quantize(promoted, m, &centered), r);
    }
  }
}

TEST(PrecisionLoss, UniformMonteCarlo) {
  const ImageF x = random_image({64, 64, 3}, 42);
  EXPECT_NEAR(precision_loss(x, quantize(x, QuantMethod::Round)), 0.25, 0.02);
  EXPECT_NEAR(precision_loss(x, quantize(x, QuantMethod::Truncate)), 0.5, 0.02);
  EXPECT_NEAR(precision_loss(x, quantize(x, QuantMethod::Upper)), 0.5, 0.02);
}

TEST(PrecisionLoss, IdenticalAndMismatch) {
  const ImageU8 u({3, 3, 3}, 9);
  EXPECT_EQ(precision_loss(ImageF(u), u), 0.0);
  EXPECT_THROW(precision_loss(ImageF({3, 3, 1}), u), std::invalid_argument);
}

TEST(Names, RoundTrip) {
  for (auto m : {QuantMethod::Upper, QuantMethod::Truncate, QuantMethod::Round, QuantMethod::DmsAi}) {
    EXPECT_EQ(parse_quant_method(to_string(m)), m);
  }
  EXPECT_FALSE(parse_quant_method("nearest").has_value());
}

TEST(ImageTypes, U8FromIntegral) {
  EXPECT_THROW(ImageU8::from_integral(ImageF({1, 1, 1}, 1.5f)), std::invalid_argument);
  EXPECT_THROW(ImageU8::from_integral(ImageF({1, 1, 1}, 256.0f)), std::invalid_argument);
  EXPECT_EQ(ImageU8::from_integral(ImageF({1, 1, 1}, 12.0f))[0], 12);
}
