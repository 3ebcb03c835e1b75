#pragma once

// Change-point quality metrics: per-sequence confusion categories, covering,
// censored delay / time-to-false-alarm means, threshold sweeps and the area
// under the (time-to-FA, delay) detection curve.

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cpdkit/core.hpp"
#include "cpdkit/detection.hpp"
#include "cpdkit/model.hpp"
#include "cpdkit/training.hpp"

namespace cpdkit {

enum class Verdict { tp, fp, tn, fn };

inline const char *to_string(Verdict v) {
    switch (v) {
    case Verdict::tp: return "TP";
    case Verdict::fp: return "FP";
    case Verdict::tn: return "TN";
    case Verdict::fn: return "FN";
    }
    return "?";
}

struct SequenceVerdict {
    Verdict category;
    Index alarm_time;
    Index change_point;
};

/// An alarm before the change (or on a normal sequence) is FP only; an
/// abnormal sequence is FN only when it stays silent.
inline SequenceVerdict classify_sequence(const ChangeAnnotation &truth, const StoppingOutcome &outcome) {
    const Index theta = truth.change_point();
    Verdict v;
    if (!truth.has_change()) {
        v = outcome.alarm_raised ? Verdict::fp : Verdict::tn;
    } else if (!outcome.alarm_raised) {
        v = Verdict::fn;
    } else {
        v = outcome.alarm_time >= theta ? Verdict::tp : Verdict::fp;
    }
    return {v, outcome.alarm_time, theta};
}

namespace detail {

struct Segment {
    Index begin, end;
};

inline std::vector<Segment> split_at(Index cut, Index length) {
    if (cut <= 0 || cut >= length) return {{0, length}};
    return {{0, cut}, {cut, length}};
}

inline double jaccard(Segment a, Segment b) {
    const Index inter = std::max<Index>(0, std::min(a.end, b.end) - std::max(a.begin, b.begin));
    const Index uni = (a.end - a.begin) + (b.end - b.begin) - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace detail

/// Covering of the true split at theta by the predicted split at tau for one sequence.
inline double sequence_covering(Index change_point, Index alarm_time, Index length) {
    const auto truth = detail::split_at(change_point, length);
    const auto predicted = detail::split_at(alarm_time, length);
    double total = 0.0;
    for (const auto &a : truth) {
        double best = 0.0;
        for (const auto &b : predicted) best = std::max(best, detail::jaccard(a, b));
        total += static_cast<double>(a.end - a.begin) * best;
    }
    return total / static_cast<double>(length);
}

/// Dataset-mean covering.
inline double covering(std::span<const Index> change_points, std::span<const Index> alarm_times,
                       std::span<const Index> lengths) {
    if (change_points.size() != alarm_times.size() || change_points.size() != lengths.size()) {
        throw std::invalid_argument("covering inputs must have equal lengths");
    }
    if (change_points.empty()) throw std::invalid_argument("covering needs at least one sequence");
    double total = 0.0;
    for (std::size_t i = 0; i < change_points.size(); ++i) {
        total += sequence_covering(change_points[i], alarm_times[i], lengths[i]);
    }
    return total / static_cast<double>(change_points.size());
}

struct DelayAndFalseAlarm {
    std::optional<double> mean_delay;      ///< absent without abnormal sequences
    std::optional<double> mean_time_to_fa; ///< absent without normal sequences
};

/// Censored means: a silent sequence counts with tau = T.
inline DelayAndFalseAlarm delay_and_fa(std::span<const ChangeAnnotation> truth,
                                       std::span<const StoppingOutcome> outcomes) {
    if (truth.size() != outcomes.size()) throw std::invalid_argument("truth/outcome size mismatch");
    if (truth.empty()) throw std::invalid_argument("delay_and_fa needs at least one sequence");
    double delay = 0.0, fa = 0.0;
    std::size_t abnormal = 0, normal = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const Index tau = outcomes[i].alarm_raised ? outcomes[i].alarm_time : truth[i].length();
        if (truth[i].has_change()) {
            delay += static_cast<double>(std::max<Index>(0, tau - truth[i].change_point()));
            ++abnormal;
        } else {
            fa += static_cast<double>(tau);
            ++normal;
        }
    }
    DelayAndFalseAlarm out;
    if (abnormal) out.mean_delay = delay / static_cast<double>(abnormal);
    if (normal) out.mean_time_to_fa = fa / static_cast<double>(normal);
    return out;
}

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t total() const noexcept { return tp + fp + tn + fn; }
};

struct MetricBundle {
    double threshold = 0.5;
    ConfusionCounts counts;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::optional<double> mean_delay;
    std::optional<double> mean_time_to_fa;
    double covering = 1.0;
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

/// All metrics of one threshold over a dataset and its inferred probabilities.
inline MetricBundle evaluate_threshold(const Dataset &data, std::span<const ProbabilitySeries> probs, double s) {
    if (data.size() != probs.size()) throw std::invalid_argument("dataset/probability count mismatch");
    if (data.empty()) throw std::invalid_argument("cannot evaluate an empty dataset");
    MetricBundle m;
    m.threshold = s;
    std::vector<ChangeAnnotation> truth;
    std::vector<StoppingOutcome> outcomes;
    truth.reserve(data.size());
    outcomes.reserve(data.size());
    double cover = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto &annotation = data[i].annotation;
        if (probs[i].length() != annotation.length()) {
            throw std::invalid_argument("probability series length differs from sequence '" +
                                        data[i].sequence.id() + "'");
        }
        const auto outcome = detect(probs[i], s);
        switch (classify_sequence(annotation, outcome).category) {
        case Verdict::tp: ++m.counts.tp; break;
        case Verdict::fp: ++m.counts.fp; break;
        case Verdict::tn: ++m.counts.tn; break;
        case Verdict::fn: ++m.counts.fn; break;
        }
        cover += sequence_covering(annotation.change_point(), outcome.alarm_time, annotation.length());
        truth.push_back(annotation);
        outcomes.push_back(outcome);
    }
    const auto n = static_cast<double>(data.size());
    const auto &c = m.counts;
    m.accuracy = static_cast<double>(c.tp + c.tn) / n;
    m.precision = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    m.recall = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
    m.f1 = safe_ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    const auto means = delay_and_fa(truth, outcomes);
    m.mean_delay = means.mean_delay;
    m.mean_time_to_fa = means.mean_time_to_fa;
    m.covering = cover / n;
    return m;
}

/// Threshold grid of the reference comparison table.
inline std::vector<double> default_thresholds() {
    return {0.001, 0.01, 0.1, 0.2, 0.5, 0.7, 0.9, 0.99, 0.999, 0.9999};
}

inline void check_thresholds(std::span<const double> thresholds) {
    if (thresholds.empty()) throw std::invalid_argument("threshold list is empty");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        check_threshold(thresholds[i]);
        if (i > 0 && !(thresholds[i] > thresholds[i - 1])) {
            throw std::invalid_argument("thresholds must be strictly increasing");
        }
    }
}

/// One bundle per threshold over precomputed probabilities.
inline std::vector<MetricBundle> sweep(const Dataset &data, std::span<const ProbabilitySeries> probs,
                                       std::span<const double> thresholds) {
    check_thresholds(thresholds);
    std::vector<MetricBundle> out;
    out.reserve(thresholds.size());
    for (double s : thresholds) out.push_back(evaluate_threshold(data, probs, s));
    return out;
}

/// Runs inference once per sequence.
inline std::vector<ProbabilitySeries> infer(const DetectorModel &model, const Dataset &data, int threads = 1) {
    std::vector<ProbabilitySeries> probs(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) { probs[i] = forward(model, data[i].sequence); });
    return probs;
}

inline std::vector<MetricBundle> sweep(const Dataset &data, const DetectorModel &model,
                                       std::span<const double> thresholds, int threads = 1) {
    check_thresholds(thresholds);
    const auto probs = infer(model, data, threads);
    return sweep(data, probs, thresholds);
}

struct CurvePoint {
    double time_to_fa;
    double delay;
    double threshold;
};

struct DetectionCurve {
    std::vector<CurvePoint> points; ///< sorted by time_to_fa
    double auc = 0.0;
    bool degenerate = false; ///< every point shares one x
};

/// Trapezoidal area under the x-sorted (time-to-FA, delay) points; points
/// sharing an x are collapsed to their mean delay first.
inline DetectionCurve detection_auc(std::span<const MetricBundle> bundles) {
    if (bundles.size() < 2) throw std::invalid_argument("a detection curve needs at least two thresholds");
    DetectionCurve curve;
    for (const auto &b : bundles) {
        if (!b.mean_delay || !b.mean_time_to_fa) {
            throw std::invalid_argument("detection curve needs both normal and abnormal sequences");
        }
        curve.points.push_back({*b.mean_time_to_fa, *b.mean_delay, b.threshold});
    }
    std::sort(curve.points.begin(), curve.points.end(), [](const CurvePoint &a, const CurvePoint &b) {
        return a.time_to_fa != b.time_to_fa ? a.time_to_fa < b.time_to_fa : a.threshold < b.threshold;
    });
    std::vector<std::pair<double, double>> collapsed;
    for (std::size_t i = 0; i < curve.points.size();) {
        std::size_t j = i;
        double sum = 0.0;
        while (j < curve.points.size() && curve.points[j].time_to_fa == curve.points[i].time_to_fa) {
            sum += curve.points[j].delay;
            ++j;
        }
        collapsed.emplace_back(curve.points[i].time_to_fa, sum / static_cast<double>(j - i));
        i = j;
    }
    curve.degenerate = collapsed.size() < 2;
    for (std::size_t i = 1; i < collapsed.size(); ++i) {
        const auto [x0, y0] = collapsed[i - 1];
        const auto [x1, y1] = collapsed[i];
        curve.auc += 0.5 * (x1 - x0) * (y0 + y1);
    }
    return curve;
}

/// Bundle with the highest value of `metric`; ties go to the lower threshold.
template <class Metric>
const MetricBundle &best_bundle(std::span<const MetricBundle> bundles, Metric metric) {
    if (bundles.empty()) throw std::invalid_argument("no bundles");
    const MetricBundle *best = &bundles.front();
    for (const auto &b : bundles) {
        if (metric(b) > metric(*best)) best = &b;
    }
    return *best;
}

} // namespace cpdkit
