#pragma once

// Synthetic regime-switching sequences: a pre-change segment, a short linear
// morph, and a post-change segment, each row an isotropic Gaussian draw.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpdkit/core.hpp"

namespace cpdkit {

struct Gaussian {
    Vector mean;
    double scale = 1.0;

    friend bool operator==(const Gaussian &a, const Gaussian &b) {
        return a.scale == b.scale && a.mean.size() == b.mean.size() && a.mean == b.mean;
    }
};

struct ChangeType {
    std::string label;
    Gaussian pre;
    Gaussian post;
};

struct RegimeSpec {
    std::vector<ChangeType> change_types;
    Index length = 64;
    Index min_transition = 1;
    Index max_transition = 10;

    Index dim() const { return change_types.empty() ? 0 : change_types.front().pre.mean.size(); }
    int type_count() const { return static_cast<int>(change_types.size()); }

    void validate() const {
        if (change_types.empty()) throw std::invalid_argument("regime needs at least one change type");
        const Index d = dim();
        if (d < 1) throw std::invalid_argument("regime dimension must be >= 1");
        for (const auto &type : change_types) {
            for (const Gaussian *g : {&type.pre, &type.post}) {
                if (g->mean.size() != d) throw std::invalid_argument("change type '" + type.label + "' has mixed dims");
                if (!(g->scale > 0.0)) throw std::invalid_argument("change type '" + type.label + "' needs scale > 0");
                if (!g->mean.allFinite()) throw std::invalid_argument("non-finite mean in '" + type.label + "'");
            }
            if (type.pre == type.post) {
                throw std::invalid_argument("change type '" + type.label + "' has identical pre and post regimes");
            }
        }
        if (length < 3) throw std::invalid_argument("sequence length must be >= 3");
        if (min_transition < 1 || max_transition < min_transition || max_transition > length - 2) {
            throw std::invalid_argument("transition length range must lie within [1, T-2]");
        }
    }
};

struct DatasetSpec {
    RegimeSpec regime;
    int sequences_per_type = 500;
    std::uint64_t seed = 0;
};

/// Digit pairs of the MNIST morph experiments, in the order types are added.
inline constexpr std::array<std::array<int, 2>, 10> kDigitChanges{
    {{4, 7}, {7, 4}, {1, 9}, {9, 1}, {2, 5}, {5, 2}, {0, 8}, {8, 0}, {3, 6}, {6, 3}}};

/// Regime whose change types follow the digit catalog. Each digit is a
/// prototype mean on its own axis of R^10, scaled so every pair of digits is
/// `separation` apart.
inline RegimeSpec digit_regime(int types, double separation = 2.0, double scale = 1.0, Index length = 64) {
    if (types < 1 || types > static_cast<int>(kDigitChanges.size())) {
        throw std::invalid_argument("digit catalog supports 1 to 10 change types");
    }
    auto prototype = [&](int digit) {
        Vector mean = Vector::Zero(10);
        mean[digit] = separation / std::sqrt(2.0);
        return Gaussian{mean, scale};
    };
    RegimeSpec spec;
    spec.length = length;
    for (int k = 0; k < types; ++k) {
        const auto [from, to] = kDigitChanges[static_cast<std::size_t>(k)];
        spec.change_types.push_back(
            {std::to_string(from) + "→" + std::to_string(to), prototype(from), prototype(to)});
    }
    return spec;
}

/// splitmix64 finalizer; decorrelates per-sequence seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// One sequence of change type `type` (1-based). Normal sequences stay in
/// the type's pre-change regime throughout.
inline LabelledSequence generate_sequence(const RegimeSpec &regime, int type, bool abnormal, std::uint64_t seed,
                                          std::string id = {}) {
    regime.validate();
    if (type < 1 || type > regime.type_count()) {
        throw std::invalid_argument("change type " + std::to_string(type) + " outside [1, " +
                                    std::to_string(regime.type_count()) + "]");
    }
    const auto &ct = regime.change_types[static_cast<std::size_t>(type - 1)];
    const Index n = regime.length;
    const Index d = regime.dim();
    if (id.empty()) id = "k" + std::to_string(type) + (abnormal ? "-abnormal-" : "-normal-") + std::to_string(seed);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Matrix features(n, d);
    auto draw = [&](Index row, const Vector &mean, double scale) {
        for (Index j = 0; j < d; ++j) features(row, j) = mean[j] + scale * noise(rng);
    };

    if (!abnormal) {
        for (Index t = 0; t < n; ++t) draw(t, ct.pre.mean, ct.pre.scale);
        return {Sequence(std::move(id), std::move(features)), ChangeAnnotation::normal(n)};
    }

    const Index transition =
        std::uniform_int_distribution<Index>(regime.min_transition, regime.max_transition)(rng);
    const Index earliest = n / 4;
    const Index latest = 3 * n / 4 - transition;
    if (latest < earliest) {
        throw std::invalid_argument("no room for a transition of length " + std::to_string(transition) +
                                    " in a sequence of length " + std::to_string(n));
    }
    const Index change_point = std::uniform_int_distribution<Index>(earliest, latest)(rng);

    for (Index t = 0; t < change_point; ++t) draw(t, ct.pre.mean, ct.pre.scale);
    for (Index j = 1; j <= transition; ++j) {
        const double alpha = static_cast<double>(j) / static_cast<double>(transition + 1);
        const Vector mean = (1.0 - alpha) * ct.pre.mean + alpha * ct.post.mean;
        const double scale = (1.0 - alpha) * ct.pre.scale + alpha * ct.post.scale;
        draw(change_point + j - 1, mean, scale);
    }
    for (Index t = change_point + transition; t < n; ++t) draw(t, ct.post.mean, ct.post.scale);
    return {Sequence(std::move(id), std::move(features)), ChangeAnnotation(change_point, n, type)};
}

/// Balanced dataset: for every type, `sequences_per_type` abnormal and as
/// many normal sequences, shuffled under the dataset seed.
inline Dataset generate_dataset(const DatasetSpec &spec) {
    spec.regime.validate();
    if (spec.sequences_per_type < 1) throw std::invalid_argument("sequences_per_type must be >= 1");
    Dataset out;
    const auto per_type = static_cast<std::uint64_t>(spec.sequences_per_type);
    out.reserve(static_cast<std::size_t>(2 * per_type) * spec.regime.change_types.size());
    std::uint64_t index = 0;
    for (int k = 1; k <= spec.regime.type_count(); ++k) {
        for (int abnormal = 1; abnormal >= 0; --abnormal) {
            for (std::uint64_t i = 0; i < per_type; ++i, ++index) {
                char id[32];
                std::snprintf(id, sizeof id, "seq-%06llu", static_cast<unsigned long long>(index));
                out.push_back(generate_sequence(spec.regime, k, abnormal == 1, mix_seed(spec.seed, index), id));
            }
        }
    }
    std::mt19937_64 rng(mix_seed(spec.seed, ~std::uint64_t{0}));
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

// --- dataset files: UTF-8 JSON lines, one record per sequence -------------

inline nlohmann::json to_json(const LabelledSequence &item) {
    const auto &seq = item.sequence;
    nlohmann::json j;
    j["id"] = seq.id();
    j["dim"] = seq.dim();
    j["length"] = seq.length();
    j["change_point"] = item.annotation.change_point();
    if (auto type = item.annotation.change_type()) j["change_type"] = *type;
    j["features"] = std::vector<double>(seq.features().data(), seq.features().data() + seq.features().size());
    return j;
}

inline LabelledSequence labelled_sequence_from_json(const nlohmann::json &j) {
    const auto dim = j.at("dim").get<Index>();
    const auto length = j.at("length").get<Index>();
    if (dim < 1 || length < 1) throw std::invalid_argument("dim and length must be >= 1");
    const auto values = j.at("features").get<std::vector<double>>();
    if (static_cast<Index>(values.size()) != dim * length) {
        throw std::invalid_argument("features has " + std::to_string(values.size()) + " values, expected " +
                                    std::to_string(dim * length));
    }
    Matrix features = Eigen::Map<const Matrix>(values.data(), length, dim);
    std::optional<int> type;
    if (j.contains("change_type") && !j.at("change_type").is_null()) type = j.at("change_type").get<int>();
    const auto change_point = j.at("change_point").get<Index>();
    return {Sequence(j.at("id").get<std::string>(), std::move(features)),
            ChangeAnnotation(change_point, length, type)};
}

inline void write_dataset(const Dataset &data, std::ostream &out) {
    for (const auto &item : data) out << to_json(item).dump() << '\n';
}

inline void write_dataset(const Dataset &data, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    write_dataset(data, out);
    if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

/// Reads every record or throws; blank lines are skipped.
inline Dataset read_dataset(std::istream &in, const std::string &source = "<stream>") {
    Dataset out;
    std::string line;
    std::size_t line_no = 0;
    Index dim = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        LabelledSequence item;
        try {
            item = labelled_sequence_from_json(nlohmann::json::parse(line));
        } catch (const std::exception &e) {
            throw ParseError(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (dim >= 0 && item.sequence.dim() != dim) {
            throw ParseError(source + ":" + std::to_string(line_no) + ": dimension " +
                             std::to_string(item.sequence.dim()) + " differs from earlier records (" +
                             std::to_string(dim) + ")");
        }
        dim = item.sequence.dim();
        out.push_back(std::move(item));
    }
    return out;
}

inline Dataset read_dataset(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset '" + path.string() + "'");
    return read_dataset(in, path.string());
}

} // namespace cpdkit
