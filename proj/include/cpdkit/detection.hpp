#pragma once

// Alarm rules: a threshold over emitted probabilities (batch and streaming),
// and the classical CUSUM / Shiryaev-Roberts statistics for known Gaussians.

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpdkit/core.hpp"
#include "cpdkit/datagen.hpp"
#include "cpdkit/model.hpp"

namespace cpdkit {

inline void check_threshold(double s) {
    if (!(s > 0.0 && s < 1.0)) {
        throw std::invalid_argument("alarm threshold must lie strictly inside (0, 1), got " + std::to_string(s));
    }
}

/// First t with p_t > s (strictly); silent outcome at T otherwise.
inline StoppingOutcome detect(const ProbabilitySeries &p, double s) {
    check_threshold(s);
    for (Index t = 0; t < p.length(); ++t) {
        if (p[t] > s) return StoppingOutcome::alarm(t);
    }
    return StoppingOutcome::silent(p.length());
}

struct StreamStep {
    double probability = 0.0;
    bool alarmed = false;
};

/// Online alarm handle. Wraps either a model (fed observations) or a raw
/// probability feed. The alarm latches until reset().
class StreamDetector {
public:
    static StreamDetector for_model(DetectorModel model, double s, std::optional<Index> max_length = std::nullopt) {
        check_threshold(s);
        StreamDetector out(s, max_length);
        out.state_ = RecurrentState::zeros(model.config());
        out.model_ = std::move(model);
        return out;
    }

    static StreamDetector for_probabilities(double s, std::optional<Index> max_length = std::nullopt) {
        check_threshold(s);
        return StreamDetector(s, max_length);
    }

    StreamStep step(const Eigen::Ref<const Vector> &observation) {
        if (!model_) throw std::logic_error("this stream detector consumes probabilities, not observations");
        advance_check();
        return record(cpdkit::step(*model_, observation, state_));
    }

    StreamStep step_probability(double p) {
        if (model_) throw std::logic_error("this stream detector consumes observations, not probabilities");
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probability outside [0, 1]");
        advance_check();
        return record(p);
    }

    void reset() {
        time_ = 0;
        alarm_time_.reset();
        if (model_) state_ = RecurrentState::zeros(model_->config());
    }

    bool alarmed() const noexcept { return alarm_time_.has_value(); }
    std::optional<Index> alarm_time() const noexcept { return alarm_time_; }
    Index time() const noexcept { return time_; }
    double threshold() const noexcept { return threshold_; }

    /// The stopping outcome so far, treating the steps seen as the horizon.
    StoppingOutcome outcome() const {
        return alarm_time_ ? StoppingOutcome::alarm(*alarm_time_) : StoppingOutcome::silent(time_);
    }

private:
    StreamDetector(double s, std::optional<Index> max_length) : threshold_(s), max_length_(max_length) {}

    void advance_check() const {
        if (max_length_ && time_ >= *max_length_) {
            throw std::length_error("stream exceeded its context of " + std::to_string(*max_length_) +
                                    " steps; call reset()");
        }
    }

    StreamStep record(double p) {
        if (!alarm_time_ && p > threshold_) alarm_time_ = time_;
        ++time_;
        return {p, alarm_time_.has_value()};
    }

    double threshold_;
    std::optional<Index> max_length_;
    std::optional<DetectorModel> model_;
    RecurrentState state_;
    Index time_ = 0;
    std::optional<Index> alarm_time_;
};

// --- classical statistics -------------------------------------------------

enum class ClassicalKind { cusum, shiryaev_roberts };

struct ClassicalSpec {
    ClassicalKind kind = ClassicalKind::cusum;
    Gaussian pre;
    Gaussian post;

    void validate() const {
        if (!(pre.scale > 0.0 && post.scale > 0.0)) throw std::invalid_argument("classical spec needs scale > 0");
        if (pre.mean.size() != post.mean.size()) throw std::invalid_argument("pre/post dimensions differ");
        if (pre == post) throw std::invalid_argument("pre and post regimes must differ");
    }
};

/// Classical alarm together with the statistic at every step.
struct ProbeResult {
    StoppingOutcome outcome;
    std::vector<double> statistic;
};

/// log f_post(x) - log f_pre(x), coordinates independent.
inline double log_likelihood_ratio(const ClassicalSpec &spec, const Eigen::Ref<const Vector> &x) {
    double llr = 0.0;
    const double inv_pre = 1.0 / spec.pre.scale, inv_post = 1.0 / spec.post.scale;
    const double log_scale_ratio = std::log(spec.pre.scale / spec.post.scale);
    for (Index j = 0; j < x.size(); ++j) {
        const double zp = (x[j] - spec.pre.mean[j]) * inv_pre;
        const double zq = (x[j] - spec.post.mean[j]) * inv_post;
        llr += 0.5 * (zp * zp - zq * zq) + log_scale_ratio;
    }
    return llr;
}

namespace detail {

inline void check_probe_inputs(const Sequence &seq, const ClassicalSpec &spec, double threshold) {
    spec.validate();
    if (seq.dim() != spec.pre.mean.size()) throw std::invalid_argument("sequence/spec dimension mismatch");
    if (!(threshold >= 0.0)) throw std::invalid_argument("statistic threshold must be >= 0");
}

} // namespace detail

/// S_t = max(0, S_{t-1} + llr(x_t)), S_{-1} = 0; alarm at first S_t > h.
inline ProbeResult cusum_probe(const Sequence &seq, const ClassicalSpec &spec, double h) {
    detail::check_probe_inputs(seq, spec, h);
    ProbeResult out{StoppingOutcome::silent(seq.length()), {}};
    out.statistic.reserve(static_cast<std::size_t>(seq.length()));
    double s = 0.0;
    for (Index t = 0; t < seq.length(); ++t) {
        s = std::max(0.0, s + log_likelihood_ratio(spec, seq.row(t).transpose()));
        out.statistic.push_back(s);
        if (!out.outcome.alarm_raised && s > h) out.outcome = StoppingOutcome::alarm(t);
    }
    return out;
}

/// R_t = (1 + R_{t-1}) * LR(x_t), R_{-1} = 0, tracked as log R_t; alarm at
/// first R_t > A. The statistic trace holds log R_t.
inline ProbeResult shiryaev_roberts_probe(const Sequence &seq, const ClassicalSpec &spec, double a) {
    detail::check_probe_inputs(seq, spec, a);
    const double log_a = a > 0.0 ? std::log(a) : -std::numeric_limits<double>::infinity();
    ProbeResult out{StoppingOutcome::silent(seq.length()), {}};
    out.statistic.reserve(static_cast<std::size_t>(seq.length()));
    double log_r = -std::numeric_limits<double>::infinity();
    for (Index t = 0; t < seq.length(); ++t) {
        // log(1 + R) = softplus(log R)
        const double log_one_plus =
            std::isinf(log_r) ? 0.0 : std::max(log_r, 0.0) + std::log1p(std::exp(-std::abs(log_r)));
        log_r = log_one_plus + log_likelihood_ratio(spec, seq.row(t).transpose());
        out.statistic.push_back(log_r);
        if (!out.outcome.alarm_raised && log_r > log_a) out.outcome = StoppingOutcome::alarm(t);
    }
    return out;
}

inline ProbeResult classical_probe(const Sequence &seq, const ClassicalSpec &spec, double threshold) {
    return spec.kind == ClassicalKind::cusum ? cusum_probe(seq, spec, threshold)
                                             : shiryaev_roberts_probe(seq, spec, threshold);
}

} // namespace cpdkit
