#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_support.hpp"
#include "trace/encoder.hpp"
#include "trace/errors.hpp"
#include "trace/ops.hpp"

using namespace trace;
using trace::testing::check_gradients;
using trace::testing::random_tensor;
using trace::testing::weighted_sum;

namespace {

// Every table random, biases included, so no term is trivially zero.
EncoderParams random_params(std::size_t vocab, std::size_t positions, std::size_t d,
                            std::size_t m, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  EncoderParams p;
  p.token_embedding = random_tensor({vocab, d}, rng, scale);
  p.position_embedding = random_tensor({positions, d}, rng, scale);
  p.decay_in_weight = random_tensor({m, 1}, rng, scale);
  p.decay_in_bias = random_tensor({m}, rng, scale);
  p.decay_out_weight = random_tensor({d, m}, rng, scale);
  p.decay_out_bias = random_tensor({d}, rng, scale);
  p.periodic_weight = random_tensor({d, 2}, rng, scale);
  p.periodic_bias = random_tensor({d}, rng, scale);
  return p;
}

std::vector<std::pair<std::string, Tensor>> all_params(const EncoderParams& p) {
  return {{"token_embedding", p.token_embedding}, {"position_embedding", p.position_embedding},
          {"decay_in_weight", p.decay_in_weight}, {"decay_in_bias", p.decay_in_bias},
          {"decay_out_weight", p.decay_out_weight}, {"decay_out_bias", p.decay_out_bias},
          {"periodic_weight", p.periodic_weight}, {"periodic_bias", p.periodic_bias}};
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

const std::vector<std::int64_t> kIds = {3, 4, 5, 1, 0, 0, 6, 3, 1, 0, 0, 0};
const std::vector<double> kTimes = {0.0, 6.0, 24.0, 30.5, 0.0, 0.0,
                                    1.25, 49.0, 73.0, 0.0, 0.0, 0.0};

}  // namespace

TEST(CodeEmbed, ZeroPositionsGivesLookup) {
  EncoderParams p = random_params(8, 6, 4, 3, 1);
  p.position_embedding = Tensor::zeros({6, 4});
  Tensor out = code_embed(p, kIds, 2, 6);
  ASSERT_EQ(out.shape(), (Shape{2, 6, 4}));
  for (std::size_t i = 0; i < kIds.size(); ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(out.data()[i * 4 + j], p.token_embedding.data()[kIds[i] * 4 + j]);
    }
  }
}

TEST(CodeEmbed, SameTokenDiffersByPositionRows) {
  EncoderParams p = random_params(8, 6, 4, 3, 2);
  const std::vector<std::int64_t> ids = {5, 5};
  Tensor out = code_embed(p, ids, 1, 2);
  const auto P = p.position_embedding.data();
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(out.data()[4 + j] - out.data()[j], P[4 + j] - P[j], 1e-15);
  }
}

TEST(CodeEmbed, GradientMatchesFiniteDifferences) {
  EncoderParams p = random_params(8, 6, 4, 3, 3);
  auto result = check_gradients([&] { return weighted_sum(code_embed(p, kIds, 2, 6)); },
                                {{"token_embedding", p.token_embedding},
                                 {"position_embedding", p.position_embedding}});
  EXPECT_LT(result.max_relative_error, 1e-4) << result.worst;
}

TEST(CodeEmbed, RejectsBadIdsAndLengths) {
  EncoderParams p = random_params(8, 6, 4, 3, 4);
  const std::vector<std::int64_t> bad = {8};
  EXPECT_THROW(code_embed(p, bad, 1, 1), VocabularyError);
  const std::vector<std::int64_t> negative = {-1};
  EXPECT_THROW(code_embed(p, negative, 1, 1), VocabularyError);
  const std::vector<std::int64_t> long_row(7, 3);
  EXPECT_THROW(code_embed(p, long_row, 1, 7), DimensionError);
}

TEST(DecayEmbed, PeakWhereInnerArgumentVanishes) {
  EncoderParams p = random_params(8, 6, 4, 3, 5);
  // Choose b_t so that W_t t* = b_t for every component at t* = 10.
  const double t_star = 10.0;
  auto bt = p.decay_in_bias.mutable_data();
  for (std::size_t i = 0; i < 3; ++i) bt[i] = p.decay_in_weight.data()[i] * t_star;
  const std::vector<double> times = {t_star};
  Tensor out = decay_embed(p, times, 1, 1);
  const auto Wd = p.decay_out_weight.data();
  for (std::size_t j = 0; j < 4; ++j) {
    const double expected = Wd[j * 3] + Wd[j * 3 + 1] + Wd[j * 3 + 2] - p.decay_out_bias.data()[j];
    EXPECT_NEAR(out.data()[j], expected, 1e-14);
  }
}

TEST(DecayEmbed, SaturatesToNegativeBias) {
  EncoderParams p = random_params(8, 6, 4, 3, 6);
  const std::vector<double> times = {1e6};
  Tensor out = decay_embed(p, times, 1, 1);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(out.data()[j], -p.decay_out_bias.data()[j], 1e-12);
  }
}

TEST(DecayEmbed, SymmetricAboutPeakForScalarWidth) {
  EncoderParams p = random_params(8, 6, 4, 1, 7);
  const double t_star = 7.5;
  p.decay_in_bias.mutable_data()[0] = p.decay_in_weight.data()[0] * t_star;
  for (double delta : {0.25, 1.0, 3.0, 11.0}) {
    const std::vector<double> times = {t_star - delta, t_star + delta};
    Tensor out = decay_embed(p, times, 1, 2);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.data()[j], out.data()[4 + j], 1e-12);
  }
}

TEST(DecayEmbed, GradientMatchesFiniteDifferences) {
  // Small weights keep tanh away from saturation at t = 24.
  EncoderParams p = random_params(8, 6, 4, 3, 8, 0.1);
  const std::vector<double> times = {0.0, 6.0, 24.0};
  auto result = check_gradients([&] { return weighted_sum(decay_embed(p, times, 1, 3)); },
                                {{"decay_in_weight", p.decay_in_weight},
                                 {"decay_in_bias", p.decay_in_bias},
                                 {"decay_out_weight", p.decay_out_weight},
                                 {"decay_out_bias", p.decay_out_bias}});
  EXPECT_LT(result.max_relative_error, 1e-4) << result.worst;
}

TEST(PeriodicEmbed, ExactlyPeriodic) {
  EncoderParams p = random_params(8, 6, 4, 3, 9);
  std::vector<double> times, shifted;
  for (double t = 0.0; t < 200.0; t += 3.7) {
    times.push_back(t);
    shifted.push_back(t + p.period_hours);
  }
  Tensor a = periodic_embed(p, times, 1, times.size());
  Tensor b = periodic_embed(p, shifted, 1, shifted.size());
  EXPECT_LT(max_abs_diff(a, b), 1e-9);
}

TEST(PeriodicEmbed, ZeroTimeUsesCosineColumn) {
  EncoderParams p = random_params(8, 6, 4, 3, 10);
  const std::vector<double> times = {0.0};
  Tensor out = periodic_embed(p, times, 1, 1);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_DOUBLE_EQ(out.data()[j], p.periodic_weight.data()[j * 2 + 1] + p.periodic_bias.data()[j]);
  }
}

TEST(PeriodicEmbed, QuarterPeriodUsesSineColumn) {
  EncoderParams p = random_params(8, 6, 4, 3, 11);
  const std::vector<double> times = {6.0};
  Tensor out = periodic_embed(p, times, 1, 1);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(out.data()[j], p.periodic_weight.data()[j * 2] + p.periodic_bias.data()[j], 1e-15);
  }
}

TEST(PeriodicEmbed, DefaultPeriodIsOneDay) {
  std::mt19937_64 rng(1);
  EncoderParams p = EncoderParams::init(5, 4, 8, 2, kDefaultPeriodHours, 0.02, rng);
  EXPECT_EQ(p.period_hours, 24.0);
  EXPECT_THROW(EncoderParams::init(5, 4, 8, 2, 0.0, 0.02, rng), ConfigError);
  EXPECT_THROW(EncoderParams::init(5, 4, 8, 0, 24.0, 0.02, rng), ConfigError);
}

TEST(EncodeEvents, WithoutDecayAndPeriodicIsCodeEmbed) {
  EncoderParams p = random_params(8, 6, 4, 3, 12);
  Tensor out = encode_events(p, kIds, kTimes, 2, 6, {true, true, false});
  Tensor ref = code_embed(p, kIds, 2, 6);
  EXPECT_EQ(max_abs_diff(out, ref), 0.0);
}

TEST(EncodeEvents, WithoutDecayIsPeriodicInTime) {
  EncoderParams p = random_params(8, 6, 4, 3, 13);
  std::vector<double> shifted = kTimes;
  for (auto& t : shifted) t += 24.0;
  Tensor a = encode_events(p, kIds, kTimes, 2, 6, {true, false, false});
  Tensor b = encode_events(p, kIds, shifted, 2, 6, {true, false, false});
  EXPECT_LT(max_abs_diff(a, b), 1e-9);
  // The decay term breaks the invariance.
  Tensor c = encode_events(p, kIds, kTimes, 2, 6);
  Tensor d = encode_events(p, kIds, shifted, 2, 6);
  EXPECT_GT(max_abs_diff(c, d), 1e-3);
}

TEST(EncodeEvents, FullIsSumOfIndependentTerms) {
  EncoderParams p = random_params(8, 6, 4, 3, 14);
  Tensor out = encode_events(p, kIds, kTimes, 2, 6);
  Tensor c = code_embed(p, kIds, 2, 6);
  Tensor dec = decay_embed(p, kTimes, 2, 6);
  Tensor per = periodic_embed(p, kTimes, 2, 6);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    EXPECT_EQ(out.data()[i], c.data()[i] + dec.data()[i] + per.data()[i]);
  }
}

TEST(EncodeEvents, AblationsCompose) {
  EncoderParams p = random_params(8, 6, 4, 3, 15);
  Tensor full = encode_events(p, kIds, kTimes, 2, 6);
  Tensor no_d = encode_events(p, kIds, kTimes, 2, 6, {true, false, false});
  Tensor no_p = encode_events(p, kIds, kTimes, 2, 6, {false, true, false});
  Tensor no_dp = encode_events(p, kIds, kTimes, 2, 6, {true, true, false});
  Tensor dec = decay_embed(p, kTimes, 2, 6);
  Tensor per = periodic_embed(p, kTimes, 2, 6);
  for (std::size_t i = 0; i < full.numel(); ++i) {
    // Removing D then P, or P then D, lands on the same tensor.
    EXPECT_NEAR(no_d.data()[i] - per.data()[i], no_dp.data()[i], 1e-12);
    EXPECT_NEAR(no_p.data()[i] - dec.data()[i], no_dp.data()[i], 1e-12);
    EXPECT_NEAR(full.data()[i] - dec.data()[i] - per.data()[i], no_dp.data()[i], 1e-12);
  }
}

TEST(EncodeEvents, ShapeMismatchIsDimensionError) {
  EncoderParams p = random_params(8, 6, 4, 3, 16);
  const std::vector<double> short_times = {1.0, 2.0};
  EXPECT_THROW(encode_events(p, kIds, short_times, 2, 6), DimensionError);
  EXPECT_THROW(encode_events(p, kIds, kTimes, 3, 6), DimensionError);
}

TEST(EncodeEvents, GradientMatchesFiniteDifferences) {
  EncoderParams p = random_params(8, 6, 4, 3, 17, 0.1);
  auto result =
      check_gradients([&] { return weighted_sum(encode_events(p, kIds, kTimes, 2, 6)); },
                      all_params(p));
  EXPECT_LT(result.max_relative_error, 1e-4) << result.worst;
}

TEST(EncodeEvents, EveryParameterReceivesGradient) {
  EncoderParams p = random_params(8, 6, 4, 3, 18, 0.1);
  for (auto& [name, t] : all_params(p)) t.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(weighted_sum(encode_events(p, kIds, kTimes, 2, 6)));
  }
  for (auto& [name, t] : all_params(p)) {
    double norm = 0.0;
    for (double g : t.grad()) norm += g * g;
    EXPECT_GT(norm, 0.0) << name;
  }
}
