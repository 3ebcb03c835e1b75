#pragma once

// Domain types shared by every cpdkit module, plus brute-force enumeration
// of the independent-Bernoulli stopping model. The enumeration routines are
// deliberately literal: they are the reference the closed-form losses are
// checked against.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace cpdkit {

using Index = std::ptrdiff_t;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Raised when an input file does not follow its declared format.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A T x d observation matrix, one observation per row.
class Sequence {
public:
    Sequence() = default;

    Sequence(std::string id, Matrix features) : id_(std::move(id)), features_(std::move(features)) {
        if (features_.rows() < 1 || features_.cols() < 1) {
            throw std::invalid_argument("sequence '" + id_ + "' must have at least one row and one column");
        }
        if (!features_.allFinite()) {
            throw std::invalid_argument("sequence '" + id_ + "' contains non-finite values");
        }
    }

    const std::string &id() const noexcept { return id_; }
    const Matrix &features() const noexcept { return features_; }
    Index length() const noexcept { return features_.rows(); }
    Index dim() const noexcept { return features_.cols(); }

    auto row(Index t) const { return features_.row(t); }

private:
    std::string id_;
    Matrix features_;
};

/// Ground truth for one sequence. `change_point == length` means no change.
class ChangeAnnotation {
public:
    ChangeAnnotation() = default;

    ChangeAnnotation(Index change_point, Index length, std::optional<int> change_type)
        : change_point_(change_point), length_(length), change_type_(change_type) {
        if (length < 1 || change_point < 0 || change_point > length) {
            throw std::out_of_range("change point " + std::to_string(change_point) +
                                    " outside [0, " + std::to_string(length) + "]");
        }
        if (has_change() != change_type.has_value()) {
            throw std::invalid_argument("change type must be present exactly when a change occurs");
        }
        if (change_type && *change_type < 1) {
            throw std::invalid_argument("change type labels start at 1");
        }
    }

    static ChangeAnnotation normal(Index length) { return {length, length, std::nullopt}; }

    Index change_point() const noexcept { return change_point_; }
    Index length() const noexcept { return length_; }
    std::optional<int> change_type() const noexcept { return change_type_; }
    bool has_change() const noexcept { return change_point_ < length_; }

    friend bool operator==(const ChangeAnnotation &, const ChangeAnnotation &) = default;

private:
    Index change_point_ = 1;
    Index length_ = 1;
    std::optional<int> change_type_;
};

/// Per-timestep change probabilities emitted by a detector.
class ProbabilitySeries {
public:
    ProbabilitySeries() = default;

    explicit ProbabilitySeries(std::vector<double> probs) : probs_(std::move(probs)) {
        for (double p : probs_) {
            if (!(p >= 0.0 && p <= 1.0)) {
                throw std::invalid_argument("probability outside [0, 1]: " + std::to_string(p));
            }
        }
    }

    ProbabilitySeries(std::initializer_list<double> probs) : ProbabilitySeries(std::vector<double>(probs)) {}

    Index length() const noexcept { return static_cast<Index>(probs_.size()); }
    double operator[](Index t) const { return probs_[static_cast<std::size_t>(t)]; }
    std::span<const double> values() const noexcept { return probs_; }

private:
    std::vector<double> probs_;
};

/// First-alarm time. `alarm_time == horizon` iff no alarm fired.
struct StoppingOutcome {
    Index alarm_time = 0;
    bool alarm_raised = false;

    static StoppingOutcome alarm(Index t) { return {t, true}; }
    static StoppingOutcome silent(Index horizon) { return {horizon, false}; }

    friend bool operator==(const StoppingOutcome &, const StoppingOutcome &) = default;
};

struct LabelledSequence {
    Sequence sequence;
    ChangeAnnotation annotation;
};

using Dataset = std::vector<LabelledSequence>;

/// P(tau = t) for t < T and the no-alarm mass at index T.
inline std::vector<double> stopping_distribution(const ProbabilitySeries &p) {
    const Index n = p.length();
    std::vector<double> q(static_cast<std::size_t>(n) + 1);
    double survive = 1.0;
    for (Index t = 0; t < n; ++t) {
        q[static_cast<std::size_t>(t)] = p[t] * survive;
        survive *= 1.0 - p[t];
    }
    q.back() = survive;
    return q;
}

namespace detail {

// Enumerates every alarm outcome in [begin, end): each t contributes
// cost(t) * p_t * prod_{begin <= k < t}(1 - p_k); the no-alarm outcome
// contributes censor * prod_{begin <= k < end}(1 - p_k).
template <class Cost>
double enumerate_outcomes(const ProbabilitySeries &p, Index begin, Index end, Cost cost, double censor) {
    double total = 0.0;
    for (Index t = begin; t < end; ++t) {
        double mass = p[t];
        for (Index k = begin; k < t; ++k) {
            mass *= 1.0 - p[k];
        }
        total += cost(t) * mass;
    }
    double survive = 1.0;
    for (Index k = begin; k < end; ++k) {
        survive *= 1.0 - p[k];
    }
    return total + censor * survive;
}

} // namespace detail

/// Expected censored detection delay, with survival products starting at the change point.
inline double oracle_expected_delay(const ProbabilitySeries &p, Index change_point) {
    const Index n = p.length();
    if (change_point < 0 || change_point > n) {
        throw std::out_of_range("change point outside [0, T]");
    }
    return detail::enumerate_outcomes(
        p, change_point, n, [&](Index t) { return static_cast<double>(t - change_point); },
        static_cast<double>(n - change_point));
}

/// E[min(tau, horizon)] under the Bernoulli alarm model.
inline double oracle_expected_alarm_time(const ProbabilitySeries &p, Index horizon) {
    if (horizon < 0 || horizon > p.length()) {
        throw std::out_of_range("horizon outside [0, T]");
    }
    return detail::enumerate_outcomes(
        p, 0, horizon, [](Index t) { return static_cast<double>(t); }, static_cast<double>(horizon));
}

} // namespace cpdkit
