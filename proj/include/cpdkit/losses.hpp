#pragma once

// Differentiable change-point losses over a probability series.
//
// Under the Bernoulli alarm model the expected cost of a stopping rule
// restricted to [begin, end) satisfies the backward recursion
//
//   V_end = censor,   V_t = cost(t) * p_t + (1 - p_t) * V_{t+1},
//
// and dV_begin/dp_t = S_t * (cost(t) - V_{t+1}) with S_t the survival
// product over [begin, t). Both terms of the CPD loss are instances.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cpdkit/core.hpp"

namespace cpdkit {

struct LossConfig {
    double fa_weight = 1.0;
    std::optional<Index> horizon_cap;

    void validate() const {
        if (!(fa_weight >= 0.0) || !std::isfinite(fa_weight)) {
            throw std::invalid_argument("fa_weight must be a finite non-negative number");
        }
        if (horizon_cap && *horizon_cap < 1) {
            throw std::invalid_argument("horizon_cap must be >= 1");
        }
    }
};

struct LossValue {
    double total = 0.0;
    double delay_term = 0.0;
    double fa_term = 0.0;
};

/// A scalar loss together with its gradient with respect to every p_t.
struct LossWithGrad {
    double value = 0.0;
    std::vector<double> grad;
};

enum class LossKind { cpd, bce };

inline const char *to_string(LossKind kind) { return kind == LossKind::cpd ? "cpd" : "bce"; }

inline LossKind parse_loss_kind(const std::string &name) {
    if (name == "cpd") return LossKind::cpd;
    if (name == "bce") return LossKind::bce;
    throw std::invalid_argument("unknown loss kind '" + name + "' (expected cpd or bce)");
}

namespace detail {

template <class Cost>
LossWithGrad stopping_cost(std::span<const double> p, Index begin, Index end, Cost cost, double censor) {
    LossWithGrad out{0.0, std::vector<double>(p.size(), 0.0)};
    if (begin >= end) {
        out.value = censor;
        return out;
    }
    const auto n = static_cast<std::size_t>(end - begin);
    // continuation[i] holds V_{begin+i}; continuation[n] is the censor value.
    std::vector<double> continuation(n + 1);
    continuation[n] = censor;
    for (Index t = end - 1; t >= begin; --t) {
        const auto i = static_cast<std::size_t>(t - begin);
        const double pt = p[static_cast<std::size_t>(t)];
        continuation[i] = cost(t) * pt + (1.0 - pt) * continuation[i + 1];
    }
    out.value = continuation[0];
    double survive = 1.0;
    for (Index t = begin; t < end; ++t) {
        const auto i = static_cast<std::size_t>(t - begin);
        out.grad[static_cast<std::size_t>(t)] = survive * (cost(t) - continuation[i + 1]);
        survive *= 1.0 - p[static_cast<std::size_t>(t)];
    }
    return out;
}

inline Index effective_horizon(Index length, std::optional<Index> cap) {
    return cap ? std::min(length, *cap) : length;
}

inline void check_change_point(Index change_point, Index length) {
    if (change_point < 0 || change_point > length) {
        throw std::out_of_range("change point " + std::to_string(change_point) + " outside [0, " +
                                std::to_string(length) + "]");
    }
}

} // namespace detail

/// Expected detection delay, censored at the horizon with penalty (horizon - theta).
/// A change point at or beyond the horizon contributes nothing.
inline LossWithGrad delay_loss(const ProbabilitySeries &p, Index change_point,
                               std::optional<Index> horizon_cap = std::nullopt) {
    detail::check_change_point(change_point, p.length());
    const Index horizon = detail::effective_horizon(p.length(), horizon_cap);
    if (change_point >= horizon) {
        return {0.0, std::vector<double>(static_cast<std::size_t>(p.length()), 0.0)};
    }
    return detail::stopping_cost(
        p.values(), change_point, horizon, [&](Index t) { return static_cast<double>(t - change_point); },
        static_cast<double>(horizon - change_point));
}

/// Negated expected alarm time censored at min(theta, horizon).
///
/// The printed form of this term subtracts the censoring mass inside the
/// bracket, which rewards alarming on normal data. The sign here follows
/// the stated intent: silence up to the horizon is the best outcome.
inline LossWithGrad fa_loss(const ProbabilitySeries &p, Index change_point,
                            std::optional<Index> horizon_cap = std::nullopt) {
    detail::check_change_point(change_point, p.length());
    const Index horizon = std::min(change_point, detail::effective_horizon(p.length(), horizon_cap));
    auto out = detail::stopping_cost(
        p.values(), 0, horizon, [](Index t) { return static_cast<double>(t); }, static_cast<double>(horizon));
    out.value = -out.value;
    for (double &g : out.grad) g = -g;
    return out;
}

/// One element of a loss batch.
struct LabelledProbs {
    const ProbabilitySeries *probs;
    Index change_point;
};

struct BatchLoss {
    LossValue value;
    std::vector<std::vector<double>> grads;
};

/// Mean delay term plus fa_weight times the mean false-alarm term.
/// Gradients are per sequence and already include the 1/N factor.
inline BatchLoss cpd_loss(std::span<const LabelledProbs> batch, const LossConfig &config) {
    config.validate();
    if (batch.empty()) {
        throw std::invalid_argument("cpd_loss needs a non-empty batch");
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    BatchLoss out;
    out.grads.reserve(batch.size());
    for (const auto &item : batch) {
        auto delay = delay_loss(*item.probs, item.change_point, config.horizon_cap);
        auto fa = fa_loss(*item.probs, item.change_point, config.horizon_cap);
        out.value.delay_term += delay.value;
        out.value.fa_term += fa.value;
        std::vector<double> g(delay.grad.size());
        for (std::size_t t = 0; t < g.size(); ++t) {
            g[t] = inv_n * (delay.grad[t] + config.fa_weight * fa.grad[t]);
        }
        out.grads.push_back(std::move(g));
    }
    out.value.delay_term *= inv_n;
    out.value.fa_term *= inv_n;
    out.value.total = out.value.delay_term + config.fa_weight * out.value.fa_term;
    return out;
}

inline constexpr double kBceEpsilon = 1e-7;

/// Per-timestep mean binary cross-entropy against targets y_t = [t >= theta].
inline LossWithGrad bce_loss(const ProbabilitySeries &p, Index change_point) {
    detail::check_change_point(change_point, p.length());
    const Index n = p.length();
    const double inv_n = 1.0 / static_cast<double>(n);
    LossWithGrad out{0.0, std::vector<double>(static_cast<std::size_t>(n), 0.0)};
    for (Index t = 0; t < n; ++t) {
        const double raw = p[t];
        const double q = std::clamp(raw, kBceEpsilon, 1.0 - kBceEpsilon);
        const bool clamped = q != raw;
        if (t >= change_point) {
            out.value -= std::log(q);
            if (!clamped) out.grad[static_cast<std::size_t>(t)] = -inv_n / q;
        } else {
            out.value -= std::log1p(-q);
            if (!clamped) out.grad[static_cast<std::size_t>(t)] = inv_n / (1.0 - q);
        }
    }
    out.value *= inv_n;
    return out;
}

/// Batch-mean BCE with per-sequence gradients including the 1/N factor.
inline BatchLoss bce_batch_loss(std::span<const LabelledProbs> batch) {
    if (batch.empty()) {
        throw std::invalid_argument("bce loss needs a non-empty batch");
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    BatchLoss out;
    for (const auto &item : batch) {
        auto l = bce_loss(*item.probs, item.change_point);
        out.value.total += inv_n * l.value;
        for (double &g : l.grad) g *= inv_n;
        out.grads.push_back(std::move(l.grad));
    }
    return out;
}

} // namespace cpdkit
