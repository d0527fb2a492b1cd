#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "test_support.hpp"

namespace kgrag {
namespace {

using testing::fixture;

DenseLayer layer(std::size_t out, std::size_t in, std::vector<float> w, std::vector<float> b,
                 Activation a = Activation::Identity) {
  return DenseLayer{out, in, std::move(w), std::move(b), a};
}

TEST(Forward, ProjectionMatchesHandComputation) {
  DenseWeights w({layer(4, 3, {0.5f, -1.f, 2.f, 1.5f, 0.25f, -0.75f, 0.f, 3.f, 1.f, -2.f, 0.5f, 0.125f},
                        {0.1f, -0.2f, 0.3f, -0.4f})});
  const std::vector<float> z = {0.3f, -1.2f, 2.5f};
  auto p = project(w, z);
  const std::vector<double> expected = {6.45, -1.925, -0.8, -1.2875};
  ASSERT_EQ(p.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p[i], expected[i], 1e-5) << i;
}

TEST(Forward, ProjectRejectsNonlinearOrDeepStacks) {
  DenseWeights relu({layer(1, 1, {1.f}, {0.f}, Activation::Relu)});
  EXPECT_THROW(project(relu, std::vector<float>{1.f}), Error);
  DenseWeights deep({layer(1, 1, {1.f}, {0.f}), layer(1, 1, {1.f}, {0.f})});
  EXPECT_THROW(project(deep, std::vector<float>{1.f}), Error);
}

TEST(Forward, TwoLayerReluSigmoid) {
  DenseWeights w({layer(3, 2, {0.2f, -0.4f, 0.7f, 0.1f, -0.3f, 0.9f}, {0.05f, -0.1f, 0.f}, Activation::Relu),
                  layer(1, 3, {1.f, -0.5f, 0.25f}, {0.3f}, Activation::Sigmoid)});
  auto y = forward(w, std::vector<float>{1.5f, -0.5f});
  ASSERT_EQ(y.size(), 1u);
  EXPECT_NEAR(y[0], 0.5986876601124521, 1e-6);
}

TEST(Forward, ActivationsAtKnownPoints) {
  auto one = [](Activation a, float x) {
    return forward(DenseWeights({layer(1, 1, {1.f}, {0.f}, a)}), std::vector<float>{x})[0];
  };
  EXPECT_FLOAT_EQ(one(Activation::Identity, -2.5f), -2.5f);
  EXPECT_FLOAT_EQ(one(Activation::Relu, -2.5f), 0.f);
  EXPECT_FLOAT_EQ(one(Activation::Relu, 2.5f), 2.5f);
  EXPECT_FLOAT_EQ(one(Activation::Sigmoid, 0.f), 0.5f);
  EXPECT_FLOAT_EQ(one(Activation::Gelu, 0.f), 0.f);
  EXPECT_NEAR(one(Activation::Gelu, 1.f), 0.8413447460685429, 1e-6);
  EXPECT_NEAR(one(Activation::Gelu, -1.f), -0.15865525393145707, 1e-6);
}

TEST(Forward, InputErrors) {
  DenseWeights w({layer(1, 2, {1.f, 1.f}, {0.f})});
  try {
    forward(w, std::vector<float>{1.f});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
  try {
    forward(w, std::vector<float>{1.f, std::nanf("")});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFiniteInput);
  }
  EXPECT_THROW(forward(DenseWeights(), std::vector<float>{}), Error);
}

TEST(DenseWeightsShape, ValidatesChainingAndBuffers) {
  EXPECT_THROW(DenseWeights(std::vector<DenseLayer>{}), Error);
  EXPECT_THROW(DenseWeights({layer(2, 2, {1.f, 2.f, 3.f}, {0.f, 0.f})}), Error);
  EXPECT_THROW(DenseWeights({layer(2, 2, {1.f, 2.f, 3.f, 4.f}, {0.f})}), Error);
  EXPECT_THROW(DenseWeights({layer(2, 1, {1.f, 2.f}, {0.f, 0.f}), layer(1, 3, {1.f, 1.f, 1.f}, {0.f})}), Error);
  try {
    DenseWeights({layer(1, 1, {INFINITY}, {0.f})});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFiniteInput);
  }
}

TEST(Classify, FixtureHeadOnFirstQuery) {
  auto head = read_kgwt(fixture("head.kgwt"));
  auto queries = read_kgeb(fixture("queries.kgeb"));
  ASSERT_EQ(queries.vectors.front().id, 100u);
  const auto& z = queries.vectors.front().values;

  const std::vector<double> logits = {-2.561795224, -1.166226423, -0.704279285, 2.409974128, -0.508991316,
                                      0.030180466,  -3.277906209, 1.876229300,  -0.156749020, -2.767278217};
  auto raw = forward(head, z);
  ASSERT_EQ(raw.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(raw[i], logits[i], 2e-6) << i;

  const std::vector<double> scores = {0.071638057, 0.237537753, 0.330864139, 0.917584725, 0.375430014,
                                      0.507544544, 0.036336963, 0.867177415, 0.460892785, 0.059118226};
  using C = Certainty;
  const std::vector<C> expected = {C::Negative, C::Negative,  C::Negative, C::Positive, C::Uncertain,
                                   C::Uncertain, C::Negative, C::Positive, C::Uncertain, C::Negative};
  ThresholdConfig cfg;
  auto preds = classify(head, z, cfg);
  ASSERT_EQ(preds.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(preds[i].label, cfg.labels()[i]);
    EXPECT_NEAR(preds[i].score, scores[i], 1e-6) << i;
    EXPECT_EQ(preds[i].certainty, expected[i]) << preds[i].label;
  }
}

TEST(Classify, LabelCountMustMatchHead) {
  auto head = read_kgwt(fixture("head.kgwt"));
  ThresholdConfig three(ThresholdPair{}, {"a", "b", "c"});
  EXPECT_THROW(classify(head, std::vector<float>(16, 0.f), three), Error);
}

TEST(CertaintyMap, BoundariesBelongToTheUpperBand) {
  ThresholdPair t{0.3, 0.7};
  EXPECT_EQ(certainty(0.0, t), Certainty::Negative);
  EXPECT_EQ(certainty(std::nextafter(0.3, 0.0), t), Certainty::Negative);
  EXPECT_EQ(certainty(0.3, t), Certainty::Uncertain);
  EXPECT_EQ(certainty(std::nextafter(0.7, 0.0), t), Certainty::Uncertain);
  EXPECT_EQ(certainty(0.7, t), Certainty::Positive);
  EXPECT_EQ(certainty(1.0, t), Certainty::Positive);
}

TEST(CertaintyMap, DefaultThresholdsAreThirds) {
  ThresholdConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.theta_neg(), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(cfg.theta_pos(), 2.0 / 3.0);
  EXPECT_EQ(cfg.labels().size(), 10u);
  EXPECT_EQ(certainty(0.2, cfg), Certainty::Negative);
  EXPECT_EQ(certainty(0.5, cfg), Certainty::Uncertain);
  EXPECT_EQ(certainty(0.9, cfg), Certainty::Positive);
}

TEST(CertaintyMap, EqualThresholdsLeaveNoUncertainBand) {
  ThresholdPair t{0.5, 0.5};
  for (int i = 0; i <= 1000; ++i) EXPECT_NE(certainty(i / 1000.0, t), Certainty::Uncertain);
}

TEST(CertaintyMap, GridAgainstDirectComparison) {
  const std::vector<ThresholdPair> pairs = {{0.0, 0.0}, {1.0 / 3, 2.0 / 3}, {0.25, 0.75}, {0.1, 0.9}, {1.0, 1.0}};
  for (const auto& t : pairs) {
    for (int i = 0; i <= 1000; ++i) {
      const double s = i / 1000.0;
      const Certainty want = s < t.theta_neg ? Certainty::Negative
                             : s < t.theta_pos ? Certainty::Uncertain
                                               : Certainty::Positive;
      ASSERT_EQ(certainty(s, t), want) << s << " " << t.theta_neg << " " << t.theta_pos;
    }
  }
}

TEST(CertaintyMap, OutOfRangeScores) {
  ThresholdPair t;
  for (double s : {-0.01, 1.01, std::nan(""), static_cast<double>(INFINITY)}) {
    try {
      certainty(s, t);
      FAIL() << s;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::OutOfRangeScore);
    }
  }
}

TEST(ThresholdConfigTest, ValidationAndOverrides) {
  EXPECT_THROW(ThresholdConfig(ThresholdPair{0.7, 0.3}, default_label_vocabulary()), Error);
  EXPECT_THROW(ThresholdConfig(ThresholdPair{-0.1, 0.3}, default_label_vocabulary()), Error);
  EXPECT_THROW(ThresholdConfig(ThresholdPair{0.1, 1.3}, default_label_vocabulary()), Error);
  EXPECT_THROW(ThresholdConfig(ThresholdPair{}, {}), Error);
  EXPECT_THROW(ThresholdConfig(ThresholdPair{}, {"a", "a"}), Error);
  EXPECT_THROW(ThresholdConfig(ThresholdPair{}, {"a"}, {{"b", ThresholdPair{}}}), Error);
  EXPECT_THROW(ThresholdConfig(ThresholdPair{}, {"a"}, {{"a", ThresholdPair{0.9, 0.1}}}), Error);

  ThresholdConfig cfg(ThresholdPair{}, {"Edema", "Pneumonia"}, {{"Edema", ThresholdPair{0.1, 0.2}}});
  EXPECT_EQ(certainty(0.25, cfg, "Edema"), Certainty::Positive);
  EXPECT_EQ(certainty(0.25, cfg, "Pneumonia"), Certainty::Negative);
  EXPECT_TRUE(cfg.has_label("Edema"));
  EXPECT_FALSE(cfg.has_label("Atelectasis"));
}

TEST(CertaintyNames, RoundTrip) {
  for (auto c : {Certainty::Negative, Certainty::Uncertain, Certainty::Positive})
    EXPECT_EQ(parse_certainty(certainty_name(c)), c);
  EXPECT_FALSE(parse_certainty("Positive").has_value());
}

// O(n^2) pair-counting reference.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0;
  std::size_t np = 0, nn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] == 1) ++np; else ++nn;
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / (static_cast<double>(np) * static_cast<double>(nn));
}

TEST(RocAuc, SmallExamples) {
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1, 0}), 0.5);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.8, 0.4, 0.6, 0.2}, std::vector<int>{1, 1, 0, 0}), 0.75);
}

TEST(RocAuc, DegenerateAndBadInput) {
  try {
    roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateLabels);
  }
  EXPECT_THROW(roc_auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), Error);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{2, 0}), Error);
}

TEST(RocAuc, MatchesPairCountingOnRandomSets) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 21) / 20.0;  // coarse grid forces ties
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    const double got = roc_auc(s, y);
    EXPECT_NEAR(got, pairwise_auc(s, y), 1e-12) << trial;

    std::vector<int> flipped(n);
    for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - y[i];
    EXPECT_NEAR(got + roc_auc(s, flipped), 1.0, 1e-12) << trial;
  }
}

TEST(MacroAucTest, SkipsLabelsMissingAClass) {
  std::vector<std::vector<double>> s = {{0.9, 0.2, 0.5}, {0.1, 0.8, 0.4}, {0.7, 0.6, 0.3}};
  std::vector<std::vector<int>> y = {{1, 0, 1}, {0, 1, 1}, {1, 0, 1}};
  auto m = macro_auc(s, y);
  ASSERT_TRUE(m.value.has_value());
  EXPECT_DOUBLE_EQ(*m.value, 1.0);
  ASSERT_EQ(m.skipped.size(), 1u);
  EXPECT_EQ(m.skipped[0], 2u);
  EXPECT_FALSE(m.per_label[2].has_value());

  auto none = macro_auc({{0.1}, {0.2}}, {{1}, {1}});
  EXPECT_FALSE(none.value.has_value());
}

TEST(Kgwt, RoundTripIsByteIdentical) {
  auto bytes = io::read_file(fixture("head.kgwt"));
  auto w = decode_kgwt(bytes);
  ASSERT_EQ(w.layers().size(), 2u);
  EXPECT_EQ(w.in_dim(), 16u);
  EXPECT_EQ(w.out_dim(), 10u);
  EXPECT_EQ(w.layers()[0].activation, Activation::Gelu);
  EXPECT_EQ(encode_kgwt(w), bytes);

  testing::TempDir dir("kgwt");
  write_kgwt(w, dir / "h.kgwt");
  EXPECT_EQ(io::read_file(dir / "h.kgwt"), bytes);
}

TEST(Kgwt, CorruptionIsReported) {
  const auto good = io::read_file(fixture("head.kgwt"));
  auto code_of = [](std::vector<unsigned char> b) -> std::optional<Errc> {
    try {
      decode_kgwt(b);
    } catch (const Error& e) {
      return e.code();
    }
    return std::nullopt;
  };
  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_EQ(code_of(truncated), Errc::CorruptFile);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(code_of(magic), Errc::CorruptFile);
  auto version = good;
  version[4] = 9;
  EXPECT_EQ(code_of(version), Errc::CorruptFile);
  auto layers = good;
  layers[6] = 3;
  EXPECT_EQ(code_of(layers), Errc::CorruptFile);
  auto act = good;
  act[18] = 7;
  EXPECT_EQ(code_of(act), Errc::CorruptFile);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(code_of(trailing), Errc::CorruptFile);
  auto nan = good;
  const float bad = std::nanf("");
  std::memcpy(nan.data() + 19, &bad, 4);
  EXPECT_EQ(code_of(nan), Errc::CorruptFile);
}

}  // namespace
}  // namespace kgrag
