#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cpdkit/detection.hpp"
#include "test_util.hpp"

using namespace cpdkit;

namespace {

ClassicalSpec scalar_spec(ClassicalKind kind, double pre, double post, double scale) {
    return {kind, {Vector::Constant(1, pre), scale}, {Vector::Constant(1, post), scale}};
}

Sequence step_sequence(Index length, Index theta, double pre, double post) {
    Matrix x(length, 1);
    for (Index t = 0; t < length; ++t) x(t, 0) = t < theta ? pre : post;
    return Sequence("step", x);
}

Sequence random_sequence(std::mt19937_64 &rng, Index length, Index dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix x(length, dim);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    return Sequence("rand", x);
}

} // namespace

TEST(Detect, FirstStrictCrossing) {
    EXPECT_EQ(detect({0.2, 0.6, 0.1}, 0.5), StoppingOutcome::alarm(1));
    EXPECT_EQ(detect({0.2, 0.3, 0.1}, 0.5), StoppingOutcome::silent(3));
    EXPECT_EQ(detect({0.2, 0.5, 0.1}, 0.5), StoppingOutcome::silent(3));
    EXPECT_THROW(detect({0.2}, 0.0), std::invalid_argument);
    EXPECT_THROW(detect({0.2}, 1.0), std::invalid_argument);
}

TEST(Detect, MonotoneInThreshold) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.001, 0.999);
    for (int trial = 0; trial < 2000; ++trial) {
        const auto p = test::random_probs(rng, 1 + Index(rng() % 20));
        double s1 = u(rng), s2 = u(rng);
        if (s1 > s2) std::swap(s1, s2);
        const auto low = detect(p, s1), high = detect(p, s2);
        ASSERT_LE(low.alarm_time, high.alarm_time);
        if (high.alarm_raised) ASSERT_TRUE(low.alarm_raised);
    }
}

TEST(StreamDetector, MatchesBatchInference) {
    std::mt19937_64 rng(2);
    ModelConfig c;
    c.input_dim = 3;
    c.hidden_dim = 6;
    const auto model = DetectorModel::initialize(c, 2);
    for (int trial = 0; trial < 20; ++trial) {
        const auto seq = random_sequence(rng, 30, 3);
        const auto p = forward(model, seq);
        const double s = p[Index(rng() % 30)];
        auto stream = StreamDetector::for_model(model, std::clamp(s, 0.01, 0.99));
        for (Index t = 0; t < seq.length(); ++t) {
            const auto step = stream.step(seq.row(t).transpose());
            ASSERT_EQ(step.probability, p[t]);
        }
        EXPECT_EQ(stream.outcome(), detect(p, stream.threshold()));
    }
}

TEST(StreamDetector, ResetReplaysIdentically) {
    std::mt19937_64 rng(3);
    ModelConfig c;
    c.input_dim = 2;
    c.hidden_dim = 4;
    c.cell = CellKind::gru;
    auto stream = StreamDetector::for_model(DetectorModel::initialize(c, 3), 0.5, 12);
    const auto seq = random_sequence(rng, 12, 2);
    std::vector<double> first;
    for (Index t = 0; t < 12; ++t) first.push_back(stream.step(seq.row(t).transpose()).probability);
    EXPECT_THROW(stream.step(seq.row(0).transpose()), std::length_error);
    stream.reset();
    EXPECT_EQ(stream.time(), 0);
    EXPECT_FALSE(stream.alarmed());
    for (Index t = 0; t < 12; ++t) ASSERT_EQ(stream.step(seq.row(t).transpose()).probability, first[std::size_t(t)]);
}

TEST(StreamDetector, AlarmLatches) {
    auto stream = StreamDetector::for_probabilities(0.5);
    EXPECT_FALSE(stream.step_probability(0.1).alarmed);
    EXPECT_TRUE(stream.step_probability(0.9).alarmed);
    EXPECT_TRUE(stream.step_probability(0.0).alarmed);
    EXPECT_TRUE(stream.step_probability(0.2).alarmed);
    EXPECT_EQ(stream.alarm_time(), 1);
    EXPECT_THROW(stream.step(Vector::Zero(1)), std::logic_error);
    stream.reset();
    EXPECT_FALSE(stream.step_probability(0.1).alarmed);
}

TEST(Cusum, SilentOnPreChangeData) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1e-3);
    Matrix x(64, 1);
    for (Index t = 0; t < 64; ++t) x(t, 0) = n(rng);
    const auto result = cusum_probe(Sequence("pre", x), scalar_spec(ClassicalKind::cusum, 0.0, 1.0, 0.1), 5.0);
    EXPECT_FALSE(result.outcome.alarm_raised);
    for (double s : result.statistic) EXPECT_EQ(s, 0.0);
}

TEST(Cusum, DeterministicRampBound) {
    const auto spec = scalar_spec(ClassicalKind::cusum, 0.0, 1.0, 1.0);
    const double per_step = 0.5; // |mu_post - mu_pre|^2 / (2 sigma^2)
    for (double h : {0.3, 1.0, 3.0, 7.25}) {
        const auto result = cusum_probe(step_sequence(64, 20, 0.0, 1.0), spec, h);
        ASSERT_TRUE(result.outcome.alarm_raised);
        const Index delay = result.outcome.alarm_time - 20;
        EXPECT_GE(delay, 0);
        EXPECT_LE(delay, Index(std::ceil(h / per_step)));
        EXPECT_EQ(delay, Index(std::floor(h / per_step)));
    }
}

TEST(Cusum, ZeroThresholdAlarmsOnFirstPositiveRatio) {
    const auto spec = scalar_spec(ClassicalKind::cusum, 0.0, 1.0, 1.0);
    Matrix x(5, 1);
    x << -1.0, 0.2, 0.5, 0.6, 2.0;
    EXPECT_EQ(cusum_probe(Sequence("x", x), spec, 0.0).outcome, StoppingOutcome::alarm(3));
}

TEST(Cusum, StatisticIsNonNegative) {
    std::mt19937_64 rng(5);
    const ClassicalSpec spec{ClassicalKind::cusum, {Vector::Zero(3), 1.0}, {Vector::Ones(3), 2.0}};
    for (int trial = 0; trial < 50; ++trial) {
        for (double s : cusum_probe(random_sequence(rng, 40, 3), spec, 4.0).statistic) ASSERT_GE(s, 0.0);
    }
}

TEST(ShiryaevRoberts, UnitLikelihoodRatioCountsSteps) {
    const auto spec = scalar_spec(ClassicalKind::shiryaev_roberts, 0.0, 2.0, 1.0);
    const auto midpoint = step_sequence(20, 20, 1.0, 1.0);
    const auto result = shiryaev_roberts_probe(midpoint, spec, 5.5);
    for (Index t = 0; t < 20; ++t) EXPECT_NEAR(std::exp(result.statistic[std::size_t(t)]), double(t + 1), 1e-9);
    EXPECT_EQ(result.outcome, StoppingOutcome::alarm(5));
}

TEST(ShiryaevRoberts, ZeroThresholdAlarmsImmediately) {
    const auto spec = scalar_spec(ClassicalKind::shiryaev_roberts, 0.0, 1.0, 1.0);
    EXPECT_EQ(shiryaev_roberts_probe(step_sequence(10, 10, -5.0, 0.0), spec, 0.0).outcome,
              StoppingOutcome::alarm(0));
}

TEST(ShiryaevRoberts, DeterministicRampBound) {
    const double scale = 0.5;
    const auto spec = scalar_spec(ClassicalKind::shiryaev_roberts, 0.0, 1.0, scale);
    const double per_step = 1.0 / (2.0 * scale * scale);
    for (double a : {10.0, 1e3, 1e8}) {
        const auto result = shiryaev_roberts_probe(step_sequence(64, 30, 0.0, 1.0), spec, a);
        ASSERT_TRUE(result.outcome.alarm_raised);
        const Index delay = result.outcome.alarm_time - 30;
        EXPECT_GE(delay, 0);
        EXPECT_LE(delay, Index(std::floor(std::log(a) / per_step)));
    }
}

TEST(ShiryaevRoberts, LogStatisticFiniteOnExtremeInputs) {
    const auto spec = scalar_spec(ClassicalKind::shiryaev_roberts, 0.0, 1.0, 1e-3);
    const auto result = shiryaev_roberts_probe(step_sequence(64, 2, -50.0, 50.0), spec, 1e300);
    for (double s : result.statistic) EXPECT_TRUE(std::isfinite(s));
}

TEST(Classical, SpecValidation) {
    const auto same = scalar_spec(ClassicalKind::cusum, 1.0, 1.0, 1.0);
    EXPECT_THROW(cusum_probe(step_sequence(4, 2, 0, 1), same, 1.0), std::invalid_argument);
    const auto spec = scalar_spec(ClassicalKind::cusum, 0.0, 1.0, 1.0);
    EXPECT_THROW(cusum_probe(Sequence("x", Matrix::Zero(4, 2)), spec, 1.0), std::invalid_argument);
    EXPECT_THROW(cusum_probe(step_sequence(4, 2, 0, 1), spec, -1.0), std::invalid_argument);
}
