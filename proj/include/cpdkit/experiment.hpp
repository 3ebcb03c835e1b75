#pragma once

// Experiment plumbing shared by the command-line tool: configs, seeded
// pipelines, metric tables and reports, and crash-safe file output.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpdkit/datagen.hpp"
#include "cpdkit/detection.hpp"
#include "cpdkit/evaluation.hpp"
#include "cpdkit/model_io.hpp"
#include "cpdkit/training.hpp"

namespace cpdkit {

struct DataConfig {
    int types = 1;
    int per_type = 200;
    int test_per_type = 200;
    double separation = 6.0;
    double scale = 1.0;
    Index length = 64;
    Index min_transition = 1;
    Index max_transition = 10;
    /// Optional JSONL file used instead of generating training data.
    std::optional<std::string> path;

    RegimeSpec regime() const {
        RegimeSpec r = digit_regime(types, separation, scale, length);
        r.min_transition = min_transition;
        r.max_transition = max_transition;
        r.validate();
        return r;
    }

    void validate() const {
        if (per_type < 1 || test_per_type < 1) throw std::invalid_argument("per_type must be >= 1");
        regime();
    }
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    LossKind loss = LossKind::cpd;
    LossConfig loss_config;
    bool auto_balance = false;
    std::vector<double> thresholds = default_thresholds();
    std::string out = "runs";

    ExperimentConfig() {
        model.input_dim = 10;
        train.optimizer = OptimizerKind::adam;
        train.learning_rate = 1e-3;
        train.epochs = 30;
        train.batch_size = 16;
    }

    void validate() const {
        data.validate();
        model.validate();
        train.validate();
        loss_config.validate();
        check_thresholds(thresholds);
    }

    /// Independent seed streams derived from the experiment seed.
    std::uint64_t train_data_seed() const { return mix_seed(seed, 1); }
    std::uint64_t test_data_seed() const { return mix_seed(seed, 2); }
    std::uint64_t init_seed() const { return mix_seed(seed, 3); }
};

namespace detail {

template <class T>
void read_field(const nlohmann::json &j, const char *key, T &value) {
    if (j.contains(key) && !j.at(key).is_null()) value = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json &j, std::initializer_list<const char *> known, const std::string &where) {
    if (!j.is_object()) throw ParseError(where + ": expected an object");
    for (const auto &[key, _] : j.items()) {
        bool found = false;
        for (const char *k : known) found = found || key == k;
        if (!found) throw ParseError(where + ": unknown key '" + key + "'");
    }
}

} // namespace detail

inline nlohmann::json to_json(const ExperimentConfig &c) {
    nlohmann::json data{{"types", c.data.types},
                        {"per_type", c.data.per_type},
                        {"test_per_type", c.data.test_per_type},
                        {"separation", c.data.separation},
                        {"scale", c.data.scale},
                        {"length", c.data.length},
                        {"min_transition", c.data.min_transition},
                        {"max_transition", c.data.max_transition},
                        {"path", c.data.path ? nlohmann::json(*c.data.path) : nlohmann::json()}};
    nlohmann::json train{{"optimizer", to_string(c.train.optimizer)},
                         {"learning_rate", c.train.learning_rate},
                         {"epochs", c.train.epochs},
                         {"batch_size", c.train.batch_size},
                         {"grad_clip", c.train.grad_clip ? nlohmann::json(*c.train.grad_clip) : nlohmann::json()},
                         {"momentum", c.train.momentum}};
    nlohmann::json loss{{"kind", to_string(c.loss)},
                        {"fa_weight", c.loss_config.fa_weight},
                        {"horizon_cap", c.loss_config.horizon_cap ? nlohmann::json(*c.loss_config.horizon_cap)
                                                                  : nlohmann::json()},
                        {"auto_balance", c.auto_balance}};
    return {{"seed", c.seed}, {"data", data},          {"model", to_json(c.model)}, {"train", train},
            {"loss", loss},   {"thresholds", c.thresholds}, {"out", c.out}};
}

/// Overlays the keys present in `j` onto `base`; absent keys keep their value.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json &j, ExperimentConfig base = {}) {
    try {
        detail::reject_unknown(j, {"seed", "data", "model", "train", "loss", "thresholds", "out"}, "config");
        detail::read_field(j, "seed", base.seed);
        detail::read_field(j, "thresholds", base.thresholds);
        detail::read_field(j, "out", base.out);
        if (j.contains("data")) {
            const auto &d = j.at("data");
            detail::reject_unknown(d,
                                   {"types", "per_type", "test_per_type", "separation", "scale", "length",
                                    "min_transition", "max_transition", "path"},
                                   "config.data");
            detail::read_field(d, "types", base.data.types);
            detail::read_field(d, "per_type", base.data.per_type);
            detail::read_field(d, "test_per_type", base.data.test_per_type);
            detail::read_field(d, "separation", base.data.separation);
            detail::read_field(d, "scale", base.data.scale);
            detail::read_field(d, "length", base.data.length);
            detail::read_field(d, "min_transition", base.data.min_transition);
            detail::read_field(d, "max_transition", base.data.max_transition);
            if (d.contains("path")) {
                base.data.path = d.at("path").is_null() ? std::nullopt
                                                        : std::optional<std::string>(d.at("path").get<std::string>());
            }
        }
        if (j.contains("model")) {
            nlohmann::json merged = to_json(base.model);
            detail::reject_unknown(j.at("model"), {"input_dim", "hidden_dim", "fc_dims", "cell"}, "config.model");
            merged.update(j.at("model"));
            base.model = model_config_from_json(merged);
        }
        if (j.contains("train")) {
            const auto &t = j.at("train");
            detail::reject_unknown(t, {"optimizer", "learning_rate", "epochs", "batch_size", "grad_clip", "momentum"},
                                   "config.train");
            if (t.contains("optimizer")) base.train.optimizer = parse_optimizer_kind(t.at("optimizer").get<std::string>());
            detail::read_field(t, "learning_rate", base.train.learning_rate);
            detail::read_field(t, "epochs", base.train.epochs);
            detail::read_field(t, "batch_size", base.train.batch_size);
            detail::read_field(t, "momentum", base.train.momentum);
            if (t.contains("grad_clip")) {
                base.train.grad_clip = t.at("grad_clip").is_null() ? std::nullopt
                                                                   : std::optional<double>(t.at("grad_clip").get<double>());
            }
        }
        if (j.contains("loss")) {
            const auto &l = j.at("loss");
            detail::reject_unknown(l, {"kind", "fa_weight", "horizon_cap", "auto_balance"}, "config.loss");
            if (l.contains("kind")) base.loss = parse_loss_kind(l.at("kind").get<std::string>());
            detail::read_field(l, "fa_weight", base.loss_config.fa_weight);
            detail::read_field(l, "auto_balance", base.auto_balance);
            if (l.contains("horizon_cap")) {
                base.loss_config.horizon_cap = l.at("horizon_cap").is_null()
                                                   ? std::nullopt
                                                   : std::optional<Index>(l.at("horizon_cap").get<Index>());
            }
        }
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    return base;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Output files

class OutputExistsError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Fails unless every target is absent or `force` is set.
inline void check_writable(std::initializer_list<std::filesystem::path> targets, bool force) {
    if (force) return;
    for (const auto &p : targets) {
        if (std::filesystem::exists(p)) {
            throw OutputExistsError(p.string() + " already exists (use --force to overwrite)");
        }
    }
}

/// Writes through "<path>.partial" and renames, so a crash never leaves a
/// truncated file under the final name.
inline void write_file_atomic(const std::filesystem::path &path, const std::string &content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path partial = path;
    partial += ".partial";
    {
        std::ofstream out(partial, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + partial.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed for " + partial.string());
    }
    std::filesystem::rename(partial, path);
}

inline std::string config_text(const ExperimentConfig &c) { return to_json(c).dump(2) + "\n"; }

inline std::string dataset_text(const Dataset &data) {
    std::ostringstream out;
    write_dataset(data, out);
    return out.str();
}

// ---------------------------------------------------------------------------
// Pipelines

inline Dataset training_data(const ExperimentConfig &c) {
    if (c.data.path) return read_dataset(std::filesystem::path(*c.data.path));
    return generate_dataset({c.data.regime(), c.data.per_type, c.train_data_seed()});
}

inline Dataset test_data(const ExperimentConfig &c) {
    return generate_dataset({c.data.regime(), c.data.test_per_type, c.test_data_seed()});
}

/// Model config with the input dimension taken from the data.
inline ModelConfig resolved_model(const ExperimentConfig &c, const Dataset &data) {
    if (data.empty()) throw std::invalid_argument("dataset is empty");
    ModelConfig m = c.model;
    m.input_dim = data.front().sequence.dim();
    return m;
}

inline TrainResult train_experiment(const ExperimentConfig &c, const Dataset &data, int threads = 0) {
    TrainConfig t = c.train;
    t.seed = c.init_seed();
    t.threads = threads;
    TrainOptions options;
    options.loss = c.loss;
    options.loss_config = c.loss_config;
    options.auto_balance = c.auto_balance;
    return train(data, resolved_model(c, data), t, options);
}

inline std::string training_log_csv(const TrainResult &r) {
    std::string out = "epoch,loss,delay_term,fa_term,grad_norm,fa_weight\n";
    char line[256];
    for (const auto &e : r.log) {
        std::snprintf(line, sizeof line, "%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", e.epoch, e.loss, e.delay_term,
                      e.fa_term, e.grad_norm, r.fa_weight);
        out += line;
    }
    return out;
}

struct ProbabilityTrace {
    std::string id;
    Index change_point = 0;
    std::vector<double> probabilities;
};

struct ModelReport {
    std::string label;
    std::vector<MetricBundle> bundles;
    std::optional<DetectionCurve> curve;
    std::vector<ProbabilityTrace> traces;

    double auc() const { return curve ? curve->auc : 0.0; }
    double best_f1() const {
        return best_bundle(std::span<const MetricBundle>(bundles), [](const MetricBundle &b) { return b.f1; }).f1;
    }
    double best_covering() const {
        return best_bundle(std::span<const MetricBundle>(bundles), [](const MetricBundle &b) { return b.covering; })
            .covering;
    }
};

/// Sweeps the thresholds on `data` and keeps a few probability traces
/// (abnormal sequences first) for plotting.
inline ModelReport evaluate_model(const std::string &label, const DetectorModel &model, const Dataset &data,
                                  const std::vector<double> &thresholds, int threads = 1,
                                  std::size_t trace_count = 4) {
    if (data.empty()) throw std::invalid_argument("evaluation dataset is empty");
    detail::check_input_dim(model, data.front().sequence.dim());
    check_thresholds(thresholds);
    const auto probs = infer(model, data, threads);
    ModelReport report{label, sweep(data, probs, thresholds), std::nullopt, {}};
    if (report.bundles.size() >= 2 && report.bundles.front().mean_delay && report.bundles.front().mean_time_to_fa) {
        report.curve = detection_auc(report.bundles);
    }
    for (bool abnormal : {true, false}) {
        std::size_t taken = 0;
        for (std::size_t i = 0; i < data.size() && taken < (trace_count + abnormal) / 2; ++i) {
            if (data[i].annotation.has_change() != abnormal) continue;
            const auto v = probs[i].values();
            report.traces.push_back({data[i].sequence.id(), data[i].annotation.change_point(), {v.begin(), v.end()}});
            ++taken;
        }
    }
    return report;
}

namespace detail {

inline std::string csv_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string csv_number(const std::optional<double> &v) { return v ? csv_number(*v) : std::string(); }

inline nlohmann::json json_number(const std::optional<double> &v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

} // namespace detail

inline const char *kMetricsHeader =
    "loss_kind,threshold,time_to_fa,detection_delay,f1,covering,auc,accuracy,precision,recall,tp,fp,tn,fn";

/// One row per (model, threshold). A non-empty `prefix` adds leading columns,
/// `prefix_header` naming them.
inline std::string metrics_csv(const std::vector<ModelReport> &reports, const std::string &prefix_header = {},
                               const std::vector<std::string> &prefixes = {}) {
    std::string out = prefix_header.empty() ? std::string(kMetricsHeader) + "\n"
                                            : prefix_header + "," + kMetricsHeader + "\n";
    for (std::size_t r = 0; r < reports.size(); ++r) {
        const auto &rep = reports[r];
        for (const auto &b : rep.bundles) {
            if (!prefix_header.empty()) out += prefixes.at(r) + ",";
            out += rep.label + "," + detail::csv_number(b.threshold) + "," + detail::csv_number(b.mean_time_to_fa) +
                   "," + detail::csv_number(b.mean_delay) + "," + detail::csv_number(b.f1) + "," +
                   detail::csv_number(b.covering) + "," + (rep.curve ? detail::csv_number(rep.curve->auc) : "") +
                   "," + detail::csv_number(b.accuracy) + "," + detail::csv_number(b.precision) + "," +
                   detail::csv_number(b.recall) + "," + std::to_string(b.counts.tp) + "," +
                   std::to_string(b.counts.fp) + "," + std::to_string(b.counts.tn) + "," +
                   std::to_string(b.counts.fn) + "\n";
        }
    }
    return out;
}

inline nlohmann::json to_json(const ModelReport &r) {
    nlohmann::json bundles = nlohmann::json::array();
    for (const auto &b : r.bundles) {
        bundles.push_back({{"threshold", b.threshold},
                           {"time_to_fa", detail::json_number(b.mean_time_to_fa)},
                           {"detection_delay", detail::json_number(b.mean_delay)},
                           {"f1", b.f1},
                           {"covering", b.covering},
                           {"accuracy", b.accuracy},
                           {"precision", b.precision},
                           {"recall", b.recall},
                           {"tp", b.counts.tp},
                           {"fp", b.counts.fp},
                           {"tn", b.counts.tn},
                           {"fn", b.counts.fn}});
    }
    nlohmann::json traces = nlohmann::json::array();
    for (const auto &t : r.traces) {
        traces.push_back({{"id", t.id}, {"change_point", t.change_point}, {"probabilities", t.probabilities}});
    }
    return {{"loss_kind", r.label},
            {"auc", r.curve ? nlohmann::json(r.curve->auc) : nlohmann::json()},
            {"degenerate_curve", r.curve ? r.curve->degenerate : true},
            {"best_f1", r.best_f1()},
            {"best_covering", r.best_covering()},
            {"bundles", bundles},
            {"traces", traces}};
}

inline ModelReport model_report_from_json(const nlohmann::json &j) {
    ModelReport r;
    r.label = j.at("loss_kind").get<std::string>();
    for (const auto &b : j.at("bundles")) {
        MetricBundle m;
        m.threshold = b.at("threshold").get<double>();
        if (!b.at("time_to_fa").is_null()) m.mean_time_to_fa = b.at("time_to_fa").get<double>();
        if (!b.at("detection_delay").is_null()) m.mean_delay = b.at("detection_delay").get<double>();
        m.f1 = b.at("f1").get<double>();
        m.covering = b.at("covering").get<double>();
        m.accuracy = b.at("accuracy").get<double>();
        m.precision = b.at("precision").get<double>();
        m.recall = b.at("recall").get<double>();
        m.counts = {b.at("tp").get<std::size_t>(), b.at("fp").get<std::size_t>(), b.at("tn").get<std::size_t>(),
                    b.at("fn").get<std::size_t>()};
        r.bundles.push_back(m);
    }
    if (!j.at("auc").is_null()) r.curve = detection_auc(r.bundles);
    for (const auto &t : j.at("traces")) {
        r.traces.push_back({t.at("id").get<std::string>(), t.at("change_point").get<Index>(),
                            t.at("probabilities").get<std::vector<double>>()});
    }
    return r;
}

/// Machine-readable report: the resolved config and one entry per model.
struct Report {
    nlohmann::json config;
    int types = 1;
    std::vector<ModelReport> models;
};

inline std::string report_text(const Report &r) {
    nlohmann::json models = nlohmann::json::array();
    for (const auto &m : r.models) models.push_back(to_json(m));
    return nlohmann::json{{"config", r.config}, {"types", r.types}, {"models", models}}.dump(2) + "\n";
}

inline Report load_report(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open report " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        Report r{j.at("config"), j.at("types").get<int>(), {}};
        for (const auto &m : j.at("models")) r.models.push_back(model_report_from_json(m));
        return r;
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

} // namespace cpdkit
