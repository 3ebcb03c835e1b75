#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "cpdkit/evaluation.hpp"
#include "test_util.hpp"

using namespace cpdkit;

namespace {

// Covering computed on explicit index sets.
double set_covering(Index theta, Index tau, Index length) {
    auto partition = [length](Index cut) {
        std::vector<std::set<Index>> parts(1);
        for (Index t = 0; t < length; ++t) {
            if (t == cut && t > 0) parts.emplace_back();
            parts.back().insert(t);
        }
        return parts;
    };
    const auto truth = partition(theta), predicted = partition(tau);
    double total = 0.0;
    for (const auto &a : truth) {
        double best = 0.0;
        for (const auto &b : predicted) {
            std::set<Index> inter, uni;
            std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(inter, inter.end()));
            std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::inserter(uni, uni.end()));
            best = std::max(best, double(inter.size()) / double(uni.size()));
        }
        total += double(a.size()) * best;
    }
    return total / double(length);
}

MetricBundle bundle(double s, double fa, double delay) {
    MetricBundle b;
    b.threshold = s;
    b.mean_time_to_fa = fa;
    b.mean_delay = delay;
    return b;
}

LabelledSequence labelled(Index length, Index theta) {
    return {Sequence("s", Matrix::Zero(length, 1)),
            theta < length ? ChangeAnnotation(theta, length, 1) : ChangeAnnotation::normal(length)};
}

} // namespace

TEST(Classify, Categories) {
    const auto normal = ChangeAnnotation::normal(64);
    const ChangeAnnotation abnormal(20, 64, 1);
    EXPECT_EQ(classify_sequence(normal, StoppingOutcome::silent(64)).category, Verdict::tn);
    EXPECT_EQ(classify_sequence(normal, StoppingOutcome::alarm(63)).category, Verdict::fp);
    EXPECT_EQ(classify_sequence(abnormal, StoppingOutcome::alarm(25)).category, Verdict::tp);
    EXPECT_EQ(classify_sequence(abnormal, StoppingOutcome::alarm(20)).category, Verdict::tp);
    EXPECT_EQ(classify_sequence(abnormal, StoppingOutcome::alarm(5)).category, Verdict::fp);
    EXPECT_EQ(classify_sequence(abnormal, StoppingOutcome::silent(64)).category, Verdict::fn);
}

TEST(Covering, WorkedExamples) {
    EXPECT_EQ(sequence_covering(5, 5, 10), 1.0);
    EXPECT_NEAR(sequence_covering(5, 6, 10), (5.0 * 5.0 / 6.0 + 5.0 * 4.0 / 5.0) / 10.0, 1e-15);
    EXPECT_NEAR(sequence_covering(5, 6, 10), 0.8167, 1e-4);
    EXPECT_EQ(sequence_covering(10, 10, 10), 1.0);
}

TEST(Covering, MatchesSetEnumeration) {
    for (Index length : {1, 2, 7, 16}) {
        for (Index theta = 0; theta <= length; ++theta) {
            for (Index tau = 0; tau <= length; ++tau) {
                const double c = sequence_covering(theta, tau, length);
                ASSERT_NEAR(c, set_covering(theta, tau, length), 1e-12);
                ASSERT_GT(c, 0.0);
                ASSERT_LE(c, 1.0);
                const bool same_split = (theta % length == 0 ? 0 : theta) == (tau % length == 0 ? 0 : tau);
                ASSERT_EQ(c == 1.0, same_split) << theta << " " << tau << " " << length;
            }
        }
    }
}

TEST(Covering, DatasetMean) {
    const std::vector<Index> thetas{5, 10}, taus{6, 10}, lengths{10, 10};
    EXPECT_NEAR(covering(thetas, taus, lengths), (0.816666666666 + 1.0) / 2.0, 1e-9);
    EXPECT_THROW(covering(std::vector<Index>{}, std::vector<Index>{}, std::vector<Index>{}), std::invalid_argument);
}

TEST(DelayAndFa, Examples) {
    const std::vector<ChangeAnnotation> truth{ChangeAnnotation(30, 64, 1), ChangeAnnotation(10, 64, 1),
                                              ChangeAnnotation::normal(64), ChangeAnnotation::normal(64)};
    const std::vector<StoppingOutcome> perfect{StoppingOutcome::alarm(30), StoppingOutcome::alarm(10),
                                               StoppingOutcome::silent(64), StoppingOutcome::silent(64)};
    auto r = delay_and_fa(truth, perfect);
    EXPECT_EQ(r.mean_delay, 0.0);
    EXPECT_EQ(r.mean_time_to_fa, 64.0);

    const std::vector<StoppingOutcome> eager(4, StoppingOutcome::alarm(0));
    r = delay_and_fa(truth, eager);
    EXPECT_EQ(r.mean_delay, 0.0);
    EXPECT_EQ(r.mean_time_to_fa, 0.0);

    const std::vector<StoppingOutcome> censored{StoppingOutcome::silent(64), StoppingOutcome::alarm(12),
                                                StoppingOutcome::alarm(40), StoppingOutcome::silent(64)};
    r = delay_and_fa(truth, censored);
    EXPECT_EQ(r.mean_delay, (34.0 + 2.0) / 2.0);
    EXPECT_EQ(r.mean_time_to_fa, (40.0 + 64.0) / 2.0);

    const std::vector<ChangeAnnotation> only_normal{ChangeAnnotation::normal(8)};
    r = delay_and_fa(only_normal, std::vector<StoppingOutcome>{StoppingOutcome::silent(8)});
    EXPECT_FALSE(r.mean_delay);
    EXPECT_EQ(r.mean_time_to_fa, 8.0);
}

TEST(Sweep, BundlesPartitionDatasetAndAreMonotone) {
    std::mt19937_64 rng(1);
    Dataset data;
    std::vector<ProbabilitySeries> probs;
    for (int i = 0; i < 200; ++i) {
        const Index theta = i % 2 ? 16 + Index(rng() % 30) : 64;
        data.push_back(labelled(64, theta));
        probs.push_back(test::random_probs(rng, 64));
        std::vector<double> v(probs.back().values().begin(), probs.back().values().end());
        for (auto &x : v) x = x * x * x * x * x * x * x * x;
        probs.back() = ProbabilitySeries(v);
    }
    const auto thresholds = default_thresholds();
    const auto bundles = sweep(data, probs, thresholds);
    ASSERT_EQ(bundles.size(), thresholds.size());
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        EXPECT_EQ(bundles[i].counts.total(), data.size());
        EXPECT_GE(bundles[i].accuracy, 0.0);
        EXPECT_LE(bundles[i].f1, 1.0);
        if (i > 0) {
            EXPECT_GE(bundles[i].counts.fn, bundles[i - 1].counts.fn);
            EXPECT_GE(*bundles[i].mean_time_to_fa, *bundles[i - 1].mean_time_to_fa);
        }
    }
}

TEST(Sweep, ThresholdGridValidation) {
    const Dataset data{labelled(4, 4)};
    const std::vector<ProbabilitySeries> probs{ProbabilitySeries{0.1, 0.2, 0.3, 0.4}};
    EXPECT_THROW(sweep(data, probs, std::vector<double>{}), std::invalid_argument);
    EXPECT_THROW(sweep(data, probs, std::vector<double>{0.5, 0.2}), std::invalid_argument);
    EXPECT_THROW(sweep(data, probs, std::vector<double>{0.5, 1.0}), std::invalid_argument);
    EXPECT_EQ(default_thresholds().front(), 0.001);
    EXPECT_EQ(default_thresholds().back(), 0.9999);
}

TEST(Sweep, F1UsesZeroOverZeroConvention) {
    const Dataset data{labelled(4, 4), labelled(4, 4)};
    const std::vector<ProbabilitySeries> probs{ProbabilitySeries{0.1, 0.1, 0.1, 0.1},
                                               ProbabilitySeries{0.1, 0.1, 0.1, 0.1}};
    const auto m = evaluate_threshold(data, probs, 0.5);
    EXPECT_EQ(m.f1, 0.0);
    EXPECT_EQ(m.accuracy, 1.0);
    EXPECT_FALSE(m.mean_delay);
}

TEST(DetectionAuc, Examples) {
    const std::vector<MetricBundle> two{bundle(0.1, 0.0, 64.0), bundle(0.9, 64.0, 0.0)};
    EXPECT_EQ(detection_auc(two).auc, 2048.0);
    const std::vector<MetricBundle> flat{bundle(0.1, 10.0, 3.0), bundle(0.5, 30.0, 3.0), bundle(0.9, 50.0, 3.0)};
    EXPECT_DOUBLE_EQ(detection_auc(flat).auc, 3.0 * 40.0);
}

TEST(DetectionAuc, OrderInvariantAndCollapsesTies) {
    std::vector<MetricBundle> b{bundle(0.1, 5.0, 10.0), bundle(0.2, 20.0, 4.0), bundle(0.3, 20.0, 2.0),
                                bundle(0.4, 40.0, 1.0)};
    const double expected = 0.5 * 15.0 * (10.0 + 3.0) + 0.5 * 20.0 * (3.0 + 1.0);
    EXPECT_DOUBLE_EQ(detection_auc(b).auc, expected);
    std::reverse(b.begin(), b.end());
    EXPECT_DOUBLE_EQ(detection_auc(b).auc, expected);
    EXPECT_EQ(detection_auc(b).points.front().time_to_fa, 5.0);
}

TEST(DetectionAuc, DegenerateAndErrors) {
    const std::vector<MetricBundle> same_x{bundle(0.1, 64.0, 1.0), bundle(0.5, 64.0, 3.0)};
    const auto curve = detection_auc(same_x);
    EXPECT_EQ(curve.auc, 0.0);
    EXPECT_TRUE(curve.degenerate);
    EXPECT_THROW(detection_auc(std::vector<MetricBundle>{bundle(0.1, 1.0, 1.0)}), std::invalid_argument);
    MetricBundle missing = bundle(0.2, 2.0, 2.0);
    missing.mean_delay.reset();
    EXPECT_THROW(detection_auc(std::vector<MetricBundle>{bundle(0.1, 1.0, 1.0), missing}), std::invalid_argument);
}
