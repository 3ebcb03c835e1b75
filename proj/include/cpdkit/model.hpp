#pragma once

// Recurrent change-probability detector: a gated recurrent cell followed by
// two ReLU layers and a sigmoid output, applied at every timestep.
//
// Parameter layout (one flat vector, row-major blocks, in this order):
//   cell input weights   G*H x d
//   cell recurrent weights G*H x H
//   cell bias            G*H
//   hidden layer 1       F1 x H, bias F1
//   hidden layer 2       F2 x F1, bias F2
//   output layer         F2, bias 1
// G = 4 for the memory cell (gate blocks: input, forget, candidate, output)
// and G = 3 for the simple gated cell (update, reset, candidate).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "cpdkit/core.hpp"

namespace cpdkit {

enum class CellKind { lstm, gru };

inline const char *to_string(CellKind kind) { return kind == CellKind::lstm ? "lstm" : "gru"; }

inline CellKind parse_cell_kind(const std::string &name) {
    if (name == "lstm") return CellKind::lstm;
    if (name == "gru") return CellKind::gru;
    throw std::invalid_argument("unknown cell kind '" + name + "' (expected lstm or gru)");
}

struct ModelConfig {
    Index input_dim = 1;
    Index hidden_dim = 32;
    std::array<Index, 2> fc_dims{16, 16};
    CellKind cell = CellKind::lstm;

    void validate() const {
        if (input_dim < 1 || hidden_dim < 1 || fc_dims[0] < 1 || fc_dims[1] < 1) {
            throw std::invalid_argument("model dimensions must all be >= 1");
        }
    }

    Index gate_count() const noexcept { return cell == CellKind::lstm ? 4 : 3; }

    friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

/// Offsets of each parameter block inside the flat vector.
struct ParamLayout {
    Index gates, hidden, input, fc1, fc2;
    Index wx, wh, b, w1, b1, w2, b2, w3, b3, total;

    explicit ParamLayout(const ModelConfig &c)
        : gates(c.gate_count() * c.hidden_dim), hidden(c.hidden_dim), input(c.input_dim), fc1(c.fc_dims[0]),
          fc2(c.fc_dims[1]) {
        wx = 0;
        wh = wx + gates * input;
        b = wh + gates * hidden;
        w1 = b + gates;
        b1 = w1 + fc1 * hidden;
        w2 = b1 + fc1;
        b2 = w2 + fc2 * fc1;
        w3 = b2 + fc2;
        b3 = w3 + fc2;
        total = b3 + 1;
    }
};

namespace detail {

template <class T>
using MatrixMapOf = Eigen::Map<std::conditional_t<std::is_const_v<T>, const Matrix, Matrix>>;
template <class T>
using VectorMapOf = Eigen::Map<std::conditional_t<std::is_const_v<T>, const Vector, Vector>>;

// Typed views into a flat parameter (or gradient) buffer.
template <class T>
struct ParamViews {
    MatrixMapOf<T> wx, wh;
    VectorMapOf<T> b;
    MatrixMapOf<T> w1;
    VectorMapOf<T> b1;
    MatrixMapOf<T> w2;
    VectorMapOf<T> b2;
    VectorMapOf<T> w3;
    T &b3;

    ParamViews(T *base, const ParamLayout &l)
        : wx(base + l.wx, l.gates, l.input), wh(base + l.wh, l.gates, l.hidden), b(base + l.b, l.gates),
          w1(base + l.w1, l.fc1, l.hidden), b1(base + l.b1, l.fc1), w2(base + l.w2, l.fc2, l.fc1),
          b2(base + l.b2, l.fc2), w3(base + l.w3, l.fc2), b3(base[l.b3]) {}
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Logits are clipped so emitted probabilities stay strictly inside (0, 1).
inline constexpr double kLogitLimit = 30.0;

} // namespace detail

/// Network configuration plus its flat parameter vector.
class DetectorModel {
public:
    DetectorModel() = default;

    DetectorModel(ModelConfig config, Vector params) : config_(config), params_(std::move(params)) {
        config_.validate();
        if (params_.size() != ParamLayout(config_).total) {
            throw std::invalid_argument("parameter vector has " + std::to_string(params_.size()) +
                                        " entries, config requires " +
                                        std::to_string(ParamLayout(config_).total));
        }
        if (!params_.allFinite()) {
            throw std::invalid_argument("model parameters must be finite");
        }
    }

    static DetectorModel zeros(const ModelConfig &config) {
        config.validate();
        return {config, Vector::Zero(ParamLayout(config).total)};
    }

    /// Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases, forget-gate bias 1.
    static DetectorModel initialize(const ModelConfig &config, std::uint64_t seed) {
        config.validate();
        const ParamLayout layout(config);
        Vector params = Vector::Zero(layout.total);
        std::mt19937_64 rng(seed);
        const double bound = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
        std::uniform_real_distribution<double> uniform(-bound, bound);
        auto fill = [&](Index begin, Index count) {
            for (Index i = begin; i < begin + count; ++i) params[i] = uniform(rng);
        };
        fill(layout.wx, layout.gates * layout.input);
        fill(layout.wh, layout.gates * layout.hidden);
        fill(layout.w1, layout.fc1 * layout.hidden);
        fill(layout.w2, layout.fc2 * layout.fc1);
        fill(layout.w3, layout.fc2);
        if (config.cell == CellKind::lstm) {
            params.segment(layout.b + layout.hidden, layout.hidden).setOnes();
        }
        return {config, std::move(params)};
    }

    const ModelConfig &config() const noexcept { return config_; }
    const Vector &params() const noexcept { return params_; }
    Vector &mutable_params() noexcept { return params_; }
    Index parameter_count() const noexcept { return params_.size(); }

private:
    ModelConfig config_;
    Vector params_;
};

/// Recurrent carry between timesteps.
struct RecurrentState {
    Vector hidden;
    Vector cell; // unused by the simple gated cell

    static RecurrentState zeros(const ModelConfig &c) {
        return {Vector::Zero(c.hidden_dim), Vector::Zero(c.hidden_dim)};
    }
};

/// Intermediate values of one timestep, kept for the backward pass.
struct StepCache {
    Vector input;
    RecurrentState prev;
    Vector gates;     // post-activation gate values
    Vector projected; // recurrent candidate projection (simple gated cell)
    Vector cell_tanh;
    RecurrentState next;
    Vector pre1, act1, pre2, act2;
    double logit = 0.0;
    double prob = 0.0;
};

namespace detail {

inline double step_kernel(const DetectorModel &model, const Eigen::Ref<const Vector> &x, RecurrentState &state,
                          StepCache *cache) {
    const auto &cfg = model.config();
    const ParamLayout layout(cfg);
    const ParamViews<const double> w(model.params().data(), layout);
    const Index h = cfg.hidden_dim;

    if (cache) {
        cache->input = x;
        cache->prev = state;
    }
    Vector gates = w.wx * x + w.b;
    if (cfg.cell == CellKind::lstm) {
        gates.noalias() += w.wh * state.hidden;
        for (Index j = 0; j < h; ++j) {
            gates[j] = sigmoid(gates[j]);
            gates[h + j] = sigmoid(gates[h + j]);
            gates[2 * h + j] = std::tanh(gates[2 * h + j]);
            gates[3 * h + j] = sigmoid(gates[3 * h + j]);
        }
        state.cell = gates.segment(h, h).cwiseProduct(state.cell) +
                     gates.segment(0, h).cwiseProduct(gates.segment(2 * h, h));
        Vector cell_tanh = state.cell.array().tanh();
        state.hidden = gates.segment(3 * h, h).cwiseProduct(cell_tanh);
        if (cache) cache->cell_tanh = std::move(cell_tanh);
    } else {
        Vector projected = w.wh * state.hidden;
        for (Index j = 0; j < h; ++j) {
            gates[j] = sigmoid(gates[j] + projected[j]);
            gates[h + j] = sigmoid(gates[h + j] + projected[h + j]);
            gates[2 * h + j] = std::tanh(gates[2 * h + j] + gates[h + j] * projected[2 * h + j]);
        }
        const auto update = gates.segment(0, h).array();
        state.hidden = ((1.0 - update) * gates.segment(2 * h, h).array() + update * state.hidden.array()).matrix();
        if (cache) cache->projected = std::move(projected);
    }

    Vector pre1 = w.w1 * state.hidden + w.b1;
    Vector act1 = pre1.cwiseMax(0.0);
    Vector pre2 = w.w2 * act1 + w.b2;
    Vector act2 = pre2.cwiseMax(0.0);
    const double logit = w.w3.dot(act2) + w.b3;
    const double prob = sigmoid(std::clamp(logit, -kLogitLimit, kLogitLimit));

    if (cache) {
        cache->gates = std::move(gates);
        cache->next = state;
        cache->pre1 = std::move(pre1);
        cache->act1 = std::move(act1);
        cache->pre2 = std::move(pre2);
        cache->act2 = std::move(act2);
        cache->logit = logit;
        cache->prob = prob;
    }
    return prob;
}

inline void check_input_dim(const DetectorModel &model, Index dim) {
    if (dim != model.config().input_dim) {
        throw std::invalid_argument("input dimension " + std::to_string(dim) + " does not match model input_dim " +
                                    std::to_string(model.config().input_dim));
    }
}

} // namespace detail

/// Advances the network by one observation and returns p_t.
inline double step(const DetectorModel &model, const Eigen::Ref<const Vector> &x, RecurrentState &state) {
    detail::check_input_dim(model, x.size());
    return detail::step_kernel(model, x, state, nullptr);
}

/// Cached forward pass over a whole sequence.
struct ForwardTrace {
    std::vector<StepCache> steps;

    ProbabilitySeries probabilities() const {
        std::vector<double> p;
        p.reserve(steps.size());
        for (const auto &s : steps) p.push_back(s.prob);
        return ProbabilitySeries(std::move(p));
    }
};

inline ForwardTrace forward_trace(const DetectorModel &model, const Sequence &seq) {
    detail::check_input_dim(model, seq.dim());
    ForwardTrace trace;
    trace.steps.resize(static_cast<std::size_t>(seq.length()));
    auto state = RecurrentState::zeros(model.config());
    for (Index t = 0; t < seq.length(); ++t) {
        const Vector x = seq.row(t).transpose();
        detail::step_kernel(model, x, state, &trace.steps[static_cast<std::size_t>(t)]);
    }
    return trace;
}

inline ProbabilitySeries forward(const DetectorModel &model, const Sequence &seq) {
    detail::check_input_dim(model, seq.dim());
    std::vector<double> p;
    p.reserve(static_cast<std::size_t>(seq.length()));
    auto state = RecurrentState::zeros(model.config());
    for (Index t = 0; t < seq.length(); ++t) {
        const Vector x = seq.row(t).transpose();
        p.push_back(detail::step_kernel(model, x, state, nullptr));
    }
    return ProbabilitySeries(std::move(p));
}

/// dLoss/dparams given dLoss/dp_t for every timestep of a cached forward pass.
inline Vector backward(const DetectorModel &model, const ForwardTrace &trace, std::span<const double> upstream) {
    const auto &cfg = model.config();
    if (upstream.size() != trace.steps.size()) {
        throw std::invalid_argument("upstream gradient length " + std::to_string(upstream.size()) +
                                    " does not match sequence length " + std::to_string(trace.steps.size()));
    }
    const ParamLayout layout(cfg);
    const detail::ParamViews<const double> w(model.params().data(), layout);
    Vector grad = Vector::Zero(layout.total);
    detail::ParamViews<double> g(grad.data(), layout);
    const Index h = cfg.hidden_dim;

    Vector d_hidden_next = Vector::Zero(h);
    Vector d_cell_next = Vector::Zero(h);
    Vector d_gates(layout.gates);

    for (auto t = static_cast<Index>(trace.steps.size()) - 1; t >= 0; --t) {
        const StepCache &s = trace.steps[static_cast<std::size_t>(t)];
        Vector d_hidden = d_hidden_next;

        const double dp = upstream[static_cast<std::size_t>(t)];
        if (dp != 0.0 && std::abs(s.logit) < detail::kLogitLimit) {
            const double d_logit = dp * s.prob * (1.0 - s.prob);
            g.w3.noalias() += d_logit * s.act2;
            g.b3 += d_logit;
            const Vector d_pre2 = (d_logit * w.w3).cwiseProduct((s.pre2.array() > 0.0).cast<double>().matrix());
            g.w2.noalias() += d_pre2 * s.act1.transpose();
            g.b2 += d_pre2;
            const Vector d_pre1 =
                (w.w2.transpose() * d_pre2).cwiseProduct((s.pre1.array() > 0.0).cast<double>().matrix());
            g.w1.noalias() += d_pre1 * s.next.hidden.transpose();
            g.b1 += d_pre1;
            d_hidden.noalias() += w.w1.transpose() * d_pre1;
        }

        if (cfg.cell == CellKind::lstm) {
            const auto in = s.gates.segment(0, h).array();
            const auto forget = s.gates.segment(h, h).array();
            const auto cand = s.gates.segment(2 * h, h).array();
            const auto out = s.gates.segment(3 * h, h).array();
            const auto ct = s.cell_tanh.array();
            const Eigen::ArrayXd d_cell = d_hidden.array() * out * (1.0 - ct * ct) + d_cell_next.array();
            d_gates.segment(0, h) = (d_cell * cand * in * (1.0 - in)).matrix();
            d_gates.segment(h, h) = (d_cell * s.prev.cell.array() * forget * (1.0 - forget)).matrix();
            d_gates.segment(2 * h, h) = (d_cell * in * (1.0 - cand * cand)).matrix();
            d_gates.segment(3 * h, h) = (d_hidden.array() * ct * out * (1.0 - out)).matrix();
            d_cell_next = (d_cell * forget).matrix();
            g.wx.noalias() += d_gates * s.input.transpose();
            g.wh.noalias() += d_gates * s.prev.hidden.transpose();
            g.b += d_gates;
            d_hidden_next.noalias() = w.wh.transpose() * d_gates;
        } else {
            const auto update = s.gates.segment(0, h).array();
            const auto reset = s.gates.segment(h, h).array();
            const auto cand = s.gates.segment(2 * h, h).array();
            const auto proj_cand = s.projected.segment(2 * h, h).array();
            const Eigen::ArrayXd dh = d_hidden.array();
            const Eigen::ArrayXd d_cand_pre = dh * (1.0 - update) * (1.0 - cand * cand);
            d_gates.segment(0, h) = (dh * (s.prev.hidden.array() - cand) * update * (1.0 - update)).matrix();
            d_gates.segment(h, h) = (d_cand_pre * proj_cand * reset * (1.0 - reset)).matrix();
            d_gates.segment(2 * h, h) = d_cand_pre.matrix();
            g.wx.noalias() += d_gates * s.input.transpose();
            g.b += d_gates;
            Vector d_projected = d_gates;
            d_projected.segment(2 * h, h) = (d_cand_pre * reset).matrix();
            g.wh.noalias() += d_projected * s.prev.hidden.transpose();
            d_hidden_next = (dh * update).matrix();
            d_hidden_next.noalias() += w.wh.transpose() * d_projected;
        }
    }
    return grad;
}

inline Vector backward(const DetectorModel &model, const Sequence &seq, std::span<const double> upstream) {
    return backward(model, forward_trace(model, seq), upstream);
}

} // namespace cpdkit
