#pragma once

// Mini-batch training of a DetectorModel against the CPD or BCE loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cpdkit/core.hpp"
#include "cpdkit/losses.hpp"
#include "cpdkit/model.hpp"

namespace cpdkit {

enum class OptimizerKind { sgd, momentum, adam };

inline const char *to_string(OptimizerKind kind) {
    switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::momentum: return "momentum";
    case OptimizerKind::adam: return "adam";
    }
    return "sgd";
}

inline OptimizerKind parse_optimizer_kind(const std::string &name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "momentum") return OptimizerKind::momentum;
    if (name == "adam") return OptimizerKind::adam;
    throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd, momentum or adam)");
}

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 10;
    int batch_size = 16;
    OptimizerKind optimizer = OptimizerKind::sgd;
    std::uint64_t seed = 0;
    std::optional<double> grad_clip = 5.0;
    double momentum = 0.9;
    /// 0 means: use CPDKIT_THREADS if set, otherwise one thread.
    int threads = 0;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
            throw std::invalid_argument("learning_rate must be finite and non-negative");
        }
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (grad_clip && !(*grad_clip > 0.0)) throw std::invalid_argument("grad_clip must be positive");
        if (threads < 0) throw std::invalid_argument("threads must be >= 0");
    }
};

/// Thread count from CPDKIT_THREADS, defaulting to one.
inline int threads_from_environment() {
    if (const char *env = std::getenv("CPDKIT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

/// Runs fn(i) for i in [0, count) over up to `threads` workers. Each index is
/// handled exactly once, so results written by index are order-independent.
template <class Fn>
void parallel_for(std::size_t count, int threads, Fn fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t used = std::min(workers, count);
    pool.reserve(used);
    for (std::size_t w = 0; w < used; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < count; i += used) fn(i);
        });
    }
    for (auto &t : pool) t.join();
}

class Optimizer {
public:
    Optimizer(const TrainConfig &config, Index size) : config_(config) {
        if (config.optimizer != OptimizerKind::sgd) first_ = Vector::Zero(size);
        if (config.optimizer == OptimizerKind::adam) second_ = Vector::Zero(size);
    }

    void apply(Vector &params, const Vector &grad) {
        const double lr = config_.learning_rate;
        switch (config_.optimizer) {
        case OptimizerKind::sgd:
            params.noalias() -= lr * grad;
            break;
        case OptimizerKind::momentum:
            first_ = config_.momentum * first_ + grad;
            params.noalias() -= lr * first_;
            break;
        case OptimizerKind::adam: {
            constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
            ++steps_;
            first_ = beta1 * first_ + (1.0 - beta1) * grad;
            second_ = beta2 * second_ + (1.0 - beta2) * grad.cwiseProduct(grad);
            const double c1 = 1.0 - std::pow(beta1, steps_);
            const double c2 = 1.0 - std::pow(beta2, steps_);
            params.array() -= lr * (first_.array() / c1) / ((second_.array() / c2).sqrt() + eps);
            break;
        }
        }
    }

private:
    TrainConfig config_;
    Vector first_, second_;
    int steps_ = 0;
};

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double delay_term = 0.0;
    double fa_term = 0.0;
    double grad_norm = 0.0;
};

struct TrainResult {
    DetectorModel model;
    std::vector<EpochLog> log;
    /// fa_weight actually used (differs from the request under auto-balance).
    double fa_weight = 1.0;
};

struct TrainOptions {
    LossKind loss = LossKind::cpd;
    LossConfig loss_config;
    /// Rescale fa_weight so both CPD terms have equal magnitude on the first batch.
    bool auto_balance = false;
};

/// Loss and parameter gradient of one batch under the current parameters.
struct BatchEvaluation {
    LossValue loss;
    Vector grad;
};

inline BatchEvaluation evaluate_batch(const DetectorModel &model, const Dataset &data,
                                      std::span<const std::size_t> indices, LossKind kind,
                                      const LossConfig &loss_config, int threads) {
    std::vector<ForwardTrace> traces(indices.size());
    std::vector<ProbabilitySeries> probs(indices.size());
    parallel_for(indices.size(), threads, [&](std::size_t i) {
        traces[i] = forward_trace(model, data[indices[i]].sequence);
        probs[i] = traces[i].probabilities();
    });
    std::vector<LabelledProbs> batch;
    batch.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        batch.push_back({&probs[i], data[indices[i]].annotation.change_point()});
    }
    BatchLoss loss = kind == LossKind::cpd ? cpd_loss(batch, loss_config) : bce_batch_loss(batch);

    std::vector<Vector> grads(indices.size());
    parallel_for(indices.size(), threads,
                 [&](std::size_t i) { grads[i] = backward(model, traces[i], loss.grads[i]); });
    Vector total = Vector::Zero(model.parameter_count());
    for (const auto &g : grads) total += g;
    return {loss.value, std::move(total)};
}

/// Trains from a seeded initialization. Deterministic for a fixed config,
/// independent of the thread count.
inline TrainResult train(const Dataset &data, const ModelConfig &model_config, const TrainConfig &train_config,
                         const TrainOptions &options) {
    train_config.validate();
    options.loss_config.validate();
    model_config.validate();
    if (data.empty()) {
        throw std::invalid_argument("cannot train on an empty dataset");
    }
    for (const auto &item : data) {
        detail::check_input_dim(DetectorModel::zeros(model_config), item.sequence.dim());
    }
    const int threads = train_config.threads > 0 ? train_config.threads : threads_from_environment();

    TrainResult result{DetectorModel::initialize(model_config, train_config.seed), {}, options.loss_config.fa_weight};
    LossConfig loss_config = options.loss_config;
    Optimizer optimizer(train_config, result.model.parameter_count());
    std::mt19937_64 shuffle_rng(train_config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    bool balanced = !options.auto_balance || options.loss != LossKind::cpd;
    const auto batch_size = static_cast<std::size_t>(train_config.batch_size);

    for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        EpochLog entry{epoch, 0.0, 0.0, 0.0, 0.0};
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::span<const std::size_t> indices(order.data() + start,
                                                       std::min(batch_size, order.size() - start));
            if (!balanced) {
                LossConfig probe = loss_config;
                probe.fa_weight = 1.0;
                const auto first = evaluate_batch(result.model, data, indices, LossKind::cpd, probe, threads);
                if (first.loss.fa_term != 0.0) {
                    loss_config.fa_weight = std::abs(first.loss.delay_term) / std::abs(first.loss.fa_term);
                }
                result.fa_weight = loss_config.fa_weight;
                balanced = true;
            }
            auto non_finite = [&] {
                return std::runtime_error("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                                          std::to_string(batches) + " (first sequence '" +
                                          data[indices[0]].sequence.id() + "')");
            };
            // Diverged parameters would otherwise surface as NaN probabilities.
            if (!result.model.params().allFinite()) throw non_finite();
            BatchEvaluation eval;
            try {
                eval = evaluate_batch(result.model, data, indices, options.loss, loss_config, threads);
            } catch (const std::invalid_argument &) {
                // NaN probabilities are rejected while building the batch.
                throw non_finite();
            }
            if (!std::isfinite(eval.loss.total) || !eval.grad.allFinite()) throw non_finite();
            const double norm = eval.grad.norm();
            if (train_config.grad_clip && norm > *train_config.grad_clip) {
                eval.grad *= *train_config.grad_clip / norm;
            }
            optimizer.apply(result.model.mutable_params(), eval.grad);
            entry.loss += eval.loss.total;
            entry.delay_term += eval.loss.delay_term;
            entry.fa_term += eval.loss.fa_term;
            entry.grad_norm += norm;
            ++batches;
        }
        const double inv = 1.0 / static_cast<double>(batches);
        entry.loss *= inv;
        entry.delay_term *= inv;
        entry.fa_term *= inv;
        entry.grad_norm *= inv;
        result.log.push_back(entry);
    }
    return result;
}

} // namespace cpdkit
