#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dms/attribution.hpp"
#include "dms/dataset.hpp"
#include "dms/quantize.hpp"
#include "dms/random.hpp"

using namespace dms;

namespace {

// mlp-small whose hidden layer never leaves the ReLU's linear side on
// [0,255] inputs: logit 1 - logit 0 = v . (x / 255) + const.
ModelParams linear_model(const InputSpec& spec, const std::vector<float>& v) {
  ModelParams m = build_model("mlp-small", spec, 0);
  std::fill(m.weights.begin(), m.weights.end(), 0.0f);
  const std::size_t n = spec.shape().size();
  for (std::size_t i = 0; i < n; ++i) m.weights[i] = v[i];  // hidden unit 0
  for (std::size_t u = 0; u < 32; ++u) m.weights[32 * n + u] = 10.0f;
  const std::size_t w2 = 32 * (n + 1);
  m.weights[w2 + 32] = 1.0f;  // class 1 reads hidden unit 0
  return m;
}

ImageF random_image(Shape3 s, std::uint64_t seed, double lo = 0, double hi = 255) {
  Rng rng(seed);
  ImageF img(s);
  for (float& v : img.values()) v = float(rng.uniform(lo, hi));
  return img;
}

ImageU8 random_u8(Shape3 s, std::uint64_t seed, int lo = 0, int hi = 255) {
  Rng rng(seed);
  ImageU8 img(s);
  for (auto& v : img.values()) v = std::uint8_t(lo + rng.index(hi - lo + 1));
  return img;
}

// Brute force: materialize every path point, average gradients from the
// loss-gradient code, and rank with a stable sort.
std::vector<std::size_t> brute_force_selection(const ModelParams& model, const ImageF& x,
                                               const ImageF& base, std::size_t label,
                                               std::size_t m, std::size_t k) {
  LossGradient lg(model);
  std::vector<double> avg(x.size(), 0.0);
  for (std::size_t step = 1; step <= m; ++step) {
    ImageF point(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      point[i] = float(base[i] + (double(step) / m) * (double(x[i]) - base[i]));
    }
    const auto g = lg.pixel_gradient(point, label).grad;
    for (std::size_t i = 0; i < x.size(); ++i) avg[i] += g[i] / double(m);
  }
  std::vector<double> score(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) score[i] = (double(x[i]) - base[i]) * avg[i];
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST(Selection, Count) {
  EXPECT_EQ(selection_count(0.2, 10), 2u);
  EXPECT_EQ(selection_count(0.25, 16), 4u);
  EXPECT_EQ(selection_count(0.3, 10), 3u);
  EXPECT_EQ(selection_count(0.7, 10), 7u);
  EXPECT_EQ(selection_count(0.21, 10), 3u);
  EXPECT_EQ(selection_count(1.0, 768), 768u);
  EXPECT_EQ(selection_count(1e-9, 768), 1u);
}

TEST(Selection, TopKOrderAndTies) {
  const std::vector<double> s = {0.5, 2.0, 0.5, 2.0, -1.0};
  EXPECT_EQ(top_k(s, 3), (std::vector<std::size_t>{1, 3, 0}));
  EXPECT_EQ(top_k(s, 5), (std::vector<std::size_t>{1, 3, 0, 2, 4}));
  EXPECT_TRUE(top_k(s, 0).empty());
  EXPECT_THROW(top_k(s, 6), std::invalid_argument);
}

TEST(Config, Validation) {
  DmsConfig c;
  EXPECT_NO_THROW(c.validate());
  c.k_ratio = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.k_ratio = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.riemann_steps = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_as_trigger("always"), AsTrigger::Always);
  EXPECT_EQ(parse_as_trigger(to_string(AsTrigger::OnFailure)), AsTrigger::OnFailure);
  EXPECT_FALSE(parse_as_trigger("sometimes").has_value());
}

TEST(IntegratedGradients, ZeroWhenInputIsBaseline) {
  const InputSpec spec{6, 6, 3, 3};
  const auto m = build_model("cnn-small", spec, 1);
  const ImageF x = random_image(spec.shape(), 2);
  const auto a = integrated_gradients(m, x, x, AttributionTarget::loss(1), 8);
  for (double v : a.scores) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(a.shape, spec.shape());
}

TEST(IntegratedGradients, ExactOnLinearTarget) {
  const InputSpec spec{2, 2, 3, 2};
  const std::vector<float> v = {0.3f, -0.7f, 1.1f, 0.2f, -0.4f, 0.9f,
                                -1.3f, 0.5f, 0.05f, -0.25f, 0.6f, 0.8f};
  const auto m = linear_model(spec, v);
  const auto target = AttributionTarget::logit(1);
  const ImageF x = random_image(spec.shape(), 3);
  const ImageF b = random_image(spec.shape(), 4);
  for (std::size_t steps : {1u, 2u, 7u, 32u}) {
    const auto a = integrated_gradients(m, x, b, target, steps);
    for (std::size_t i = 0; i < v.size(); ++i) {
      EXPECT_NEAR(a.scores[i], (double(x[i]) - b[i]) * v[i] / 255.0, 1e-5);
    }
    EXPECT_NEAR(a.total(), target_value(m, x, target) - target_value(m, b, target), 1e-5);
  }
}

TEST(IntegratedGradients, CompletenessOnCnn) {
  const InputSpec spec{8, 8, 3, 4};
  const auto m = build_model("cnn-small", spec, 7);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ImageF x = random_image(spec.shape(), 10 + seed);
    const ImageF b = random_image(spec.shape(), 20 + seed);
    const auto target = AttributionTarget::loss(seed % 4);
    const double diff = target_value(m, x, target) - target_value(m, b, target);
    const auto a = integrated_gradients(m, x, b, target, 256);
    EXPECT_LE(std::abs(a.total() - diff), 1e-2 * std::abs(diff) + 1e-4) << seed;
  }
}

TEST(IntegratedGradients, ErrorShrinksWithSteps) {
  // Cross-entropy over linear logits is smooth, so halving the step should
  // never make the right Riemann sum worse.
  const InputSpec spec{2, 2, 3, 2};
  const std::vector<float> v = {3.0f, -7.0f, 11.0f, 2.0f, -4.0f, 9.0f,
                                -13.0f, 5.0f, 0.5f, -2.5f, 6.0f, 8.0f};
  const auto m = linear_model(spec, v);
  const auto target = AttributionTarget::loss(0);
  const ImageF x = random_image(spec.shape(), 5);
  const ImageF b = random_image(spec.shape(), 6);
  const double diff = target_value(m, x, target) - target_value(m, b, target);
  double prev = std::abs(integrated_gradients(m, x, b, target, 1).total() - diff);
  for (std::size_t steps = 2; steps <= 256; steps *= 2) {
    const double err = std::abs(integrated_gradients(m, x, b, target, steps).total() - diff);
    EXPECT_LE(err, prev + 1e-6) << steps;
    prev = err;
  }
  EXPECT_LT(prev, 1e-2);
}

TEST(IntegratedGradients, Errors) {
  const InputSpec spec{4, 4, 1, 2};
  const auto m = build_model("cnn-small", spec, 0);
  const ImageF x(spec.shape(), 3.0f);
  EXPECT_THROW(integrated_gradients(m, x, x, AttributionTarget::loss(0), 0),
               std::invalid_argument);
  EXPECT_THROW(integrated_gradients(m, x, ImageF({4, 4, 3}), AttributionTarget::loss(0), 4),
               std::invalid_argument);
}

TEST(DmsAs, SelectionsMatchBruteForce) {
  const InputSpec spec{4, 4, 1, 3};
  const auto model = build_model("cnn-small", spec, 13);
  DmsConfig cfg;
  cfg.k_ratio = 0.25;
  cfg.riemann_steps = 8;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const ImageU8 x = random_u8(spec.shape(), 30 + seed, 1, 254);
    const std::size_t label = seed % 3;
    AsTrace trace;
    const ImageU8 out = dms_as(model, x, label, cfg, &trace);

    const ImageF xf(x);
    ImageF up = xf;
    for (float& v : up.values()) v = std::min(v + 1.0f, 255.0f);
    const auto raised = brute_force_selection(model, xf, up, label, 8, 4);
    EXPECT_EQ(sorted(trace.raised), raised) << seed;

    ImageF mid = xf;
    for (std::size_t i : raised) mid[i] += 1.0f;
    ImageF down = mid;
    for (float& v : down.values()) v = std::max(v - 1.0f, 0.0f);
    const auto lowered = brute_force_selection(model, mid, down, label, 8, 4);
    EXPECT_EQ(sorted(trace.lowered), lowered) << seed;

    ImageU8 expect = x;
    for (std::size_t i : raised) expect[i] += 1;
    for (std::size_t i : lowered) expect[i] -= 1;
    EXPECT_EQ(out, expect);
  }
}

TEST(DmsAs, Structure) {
  const InputSpec spec{8, 8, 3, 4};
  const auto model = build_model("cnn-small", spec, 3);
  for (double k : {0.05, 0.2, 0.5}) {
    DmsConfig cfg;
    cfg.k_ratio = k;
    cfg.riemann_steps = 4;
    const ImageU8 x = random_u8(spec.shape(), 8);
    AsTrace trace;
    const ImageU8 out = dms_as(model, x, 1, cfg, &trace);
    const std::size_t expect = selection_count(k, x.size());
    EXPECT_EQ(trace.raised.size(), expect);
    EXPECT_EQ(trace.lowered.size(), expect);
    std::vector<int> delta(x.size(), 0);
    for (std::size_t i : trace.raised) delta[i] += 1;
    for (std::size_t i : trace.lowered) delta[i] -= 1;
    std::size_t changed = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const int want = std::clamp(int(x[i]) + delta[i], 0, 255);
      EXPECT_EQ(int(out[i]), want);
      changed += out[i] != x[i];
    }
    EXPECT_LE(changed, 2 * expect);
    EXPECT_EQ(out, dms_as(model, x, 1, cfg));
  }
}

TEST(DmsAs, FullSelectionCancels) {
  const InputSpec spec{4, 4, 3, 2};
  ModelParams flat = build_model("mlp-small", spec, 0);
  std::fill(flat.weights.begin(), flat.weights.end(), 0.0f);
  DmsConfig cfg;
  cfg.k_ratio = 1.0;
  cfg.riemann_steps = 4;
  ImageU8 x = random_u8(spec.shape(), 2);
  x[0] = 0;
  x[1] = 255;
  AsTrace trace;
  EXPECT_EQ(dms_as(flat, x, 0, cfg, &trace), x);
  EXPECT_EQ(trace.raised.size(), x.size());
}

TEST(DmsAs, RaisedPixelAt255IsClipped) {
  // Class-1 margin grows with every pixel, so for label 0 the loss gradient
  // is positive everywhere. Pass 1 scores are -g except at 255 where the
  // baseline equals the pixel, so the saturated pixel wins; pass 2 lowers
  // the pixel with the largest weight.
  const InputSpec spec{2, 2, 1, 2};
  const auto m = linear_model(spec, {0.1f, 0.2f, 0.3f, 0.4f});
  DmsConfig cfg;
  cfg.k_ratio = 0.25;
  cfg.riemann_steps = 4;
  AsTrace trace;
  const ImageU8 out =
      dms_as(m, ImageU8({2, 2, 1}, std::vector<std::uint8_t>{255, 10, 20, 30}), 0, cfg, &trace);
  EXPECT_EQ(trace.raised, (std::vector<std::size_t>{0}));
  EXPECT_EQ(trace.lowered, (std::vector<std::size_t>{3}));
  EXPECT_EQ(out, ImageU8({2, 2, 1}, std::vector<std::uint8_t>{255, 10, 20, 29}));
}

TEST(DmsAs, BudgetKeepsRelaxedBound) {
  const InputSpec spec{4, 4, 1, 2};
  const auto m = linear_model(spec, std::vector<float>(16, 0.5f));
  const ImageU8 clean({4, 4, 1}, 100);
  DmsConfig cfg;
  cfg.k_ratio = 1.0;
  cfg.riemann_steps = 2;
  // Every pixel already sits at the edge of a 1-pixel budget.
  cfg.budget = PixelBudget{clean, 0.0};
  const ImageU8 x({4, 4, 1}, 101);
  const ImageU8 out = dms_as(m, x, 0, cfg);
  for (auto v : out.values()) EXPECT_LE(std::abs(int(v) - 100), 1);
  cfg.budget = PixelBudget{ImageU8({2, 2, 1}), 0.1};
  EXPECT_THROW(dms_as(m, x, 0, cfg), std::invalid_argument);
}

TEST(DmsAs, RejectsNonInteger) {
  const InputSpec spec{4, 4, 1, 2};
  const auto m = build_model("mlp-small", spec, 0);
  EXPECT_THROW(dms_as(m, ImageF({4, 4, 1}, 2.5f), 0, DmsConfig{}), std::invalid_argument);
  EXPECT_NO_THROW(dms_as(m, ImageF({4, 4, 1}, 2.0f), 0, DmsConfig{}));
}

TEST(Dms, AiMatchesQuantizeWithLossGradient) {
  const InputSpec spec{6, 6, 3, 3};
  const auto m = build_model("cnn-small", spec, 5);
  const ImageF x = random_image(spec.shape(), 9);
  LossGradient lg(m);
  const auto g = lg.pixel_gradient(x, 2).grad;
  EXPECT_EQ(dms_ai(m, x, 2), quantize(x, QuantMethod::DmsAi, &g));
  EXPECT_THROW(dms_ai(m, ImageF(spec.shape(), 300.0f), 0), std::invalid_argument);
}

TEST(Dms, TriggerSemantics) {
  const InputSpec spec{6, 6, 3, 3};
  const auto m = build_model("cnn-small", spec, 6);
  const ImageF x = random_image(spec.shape(), 11);
  const std::size_t predicted = predict(m, x).label;
  const std::size_t other = (predicted + 1) % 3;
  DmsConfig cfg;
  cfg.riemann_steps = 4;

  // The label the model already disagrees with: DMS-AI output still fools it.
  DmsResult r = dms::dms(m, x, other, cfg);
  if (predict(m, r.integerized).label != other) {
    EXPECT_FALSE(r.attribution_applied);
    EXPECT_EQ(r.image, r.integerized);
  }
  // The label it agrees with: the attack failed, so AS runs.
  r = dms::dms(m, x, predicted, cfg);
  if (predict(m, r.integerized).label == predicted) EXPECT_TRUE(r.attribution_applied);

  cfg.as_trigger = AsTrigger::Always;
  EXPECT_TRUE(dms::dms(m, x, other, cfg).attribution_applied);
}

TEST(Dms, AlwaysWithFullSelectionEqualsAi) {
  const InputSpec spec{4, 4, 3, 2};
  ModelParams flat = build_model("mlp-small", spec, 0);
  std::fill(flat.weights.begin(), flat.weights.end(), 0.0f);
  DmsConfig cfg;
  cfg.k_ratio = 1.0;
  cfg.riemann_steps = 2;
  cfg.as_trigger = AsTrigger::Always;
  const ImageF x = random_image(spec.shape(), 3);
  const DmsResult r = dms::dms(flat, x, 1, cfg);
  EXPECT_TRUE(r.attribution_applied);
  EXPECT_EQ(r.image, r.integerized);
}
