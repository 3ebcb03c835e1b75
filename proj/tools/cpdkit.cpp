// cpdkit command-line front end: generate, train, evaluate, plot, reproduce.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpdkit/experiment.hpp"
#include "cpdkit/plot.hpp"

namespace fs = std::filesystem;
using namespace cpdkit;

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> types, per_type, test_per_type, epochs, batch_size, hidden;
    std::optional<double> separation, learning_rate, fa_weight;
    std::optional<Index> length;
    std::optional<std::string> loss, optimizer, cell;
    std::optional<std::vector<double>> thresholds;
    bool auto_balance = false;

    void add_data(CLI::App *cmd) {
        cmd->add_option("--types", types, "number of change types K (1-10)");
        cmd->add_option("--per-type", per_type, "training sequences per side and change type");
        cmd->add_option("--test-per-type", test_per_type, "held-out sequences per side and change type");
        cmd->add_option("--separation", separation, "distance between digit prototypes, in noise units");
        cmd->add_option("--length", length, "sequence length T");
    }
    void add_training(CLI::App *cmd) {
        cmd->add_option("--loss", loss, "loss kind")->check(CLI::IsMember({"cpd", "bce"}));
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--batch-size", batch_size, "mini-batch size");
        cmd->add_option("--lr", learning_rate, "learning rate");
        cmd->add_option("--optimizer", optimizer, "optimizer")->check(CLI::IsMember({"sgd", "momentum", "adam"}));
        cmd->add_option("--fa-weight", fa_weight, "false-alarm weight c of the CPD loss");
        cmd->add_flag("--auto-balance", auto_balance, "set c from the first batch");
        cmd->add_option("--hidden", hidden, "recurrent hidden size");
        cmd->add_option("--cell", cell, "recurrent cell")->check(CLI::IsMember({"lstm", "gru"}));
    }
    void add_thresholds(CLI::App *cmd) {
        cmd->add_option("--thresholds", thresholds, "alarm thresholds, strictly increasing in (0,1)")
            ->delimiter(',');
    }

    ExperimentConfig resolve(ExperimentConfig base) const {
        if (!config_path.empty()) base = experiment_config_from_json(load_json(config_path), base);
        if (seed) base.seed = *seed;
        if (out) base.out = *out;
        if (types) base.data.types = *types;
        if (per_type) base.data.per_type = *per_type;
        if (test_per_type) base.data.test_per_type = *test_per_type;
        if (separation) base.data.separation = *separation;
        if (length) base.data.length = *length;
        if (epochs) base.train.epochs = *epochs;
        if (batch_size) base.train.batch_size = *batch_size;
        if (learning_rate) base.train.learning_rate = *learning_rate;
        if (optimizer) base.train.optimizer = parse_optimizer_kind(*optimizer);
        if (loss) base.loss = parse_loss_kind(*loss);
        if (fa_weight) base.loss_config.fa_weight = *fa_weight;
        if (auto_balance) base.auto_balance = true;
        if (hidden) base.model.hidden_dim = *hidden;
        if (cell) base.model.cell = parse_cell_kind(*cell);
        if (thresholds) base.thresholds = *thresholds;
        base.validate();
        return base;
    }

    static nlohmann::json load_json(const std::string &path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config " + path);
        try {
            return nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception &e) {
            throw ParseError(path + ": " + e.what());
        }
    }
};

void add_common(CLI::App *cmd, Overrides &o, bool &force) {
    cmd->add_option("--config", o.config_path, "JSON experiment config; flags override its values")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "experiment seed");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_flag("--force", force, "overwrite existing outputs");
}

void run_generate(const ExperimentConfig &c, const std::string &split, bool force) {
    const fs::path out(c.out);
    const fs::path data_file = out / (split + ".jsonl"), config_file = out / "config.json";
    check_writable({data_file, config_file}, force);
    const Dataset data = split == "train" ? generate_dataset({c.data.regime(), c.data.per_type, c.train_data_seed()})
                                          : test_data(c);
    write_file_atomic(data_file, dataset_text(data));
    write_file_atomic(config_file, config_text(c));
    std::printf("wrote %zu sequences to %s\n", data.size(), data_file.string().c_str());
}

void run_train(ExperimentConfig c, const std::optional<std::string> &data_path, bool force) {
    if (data_path) c.data.path = *data_path;
    const std::string kind = to_string(c.loss);
    const fs::path out(c.out);
    const fs::path model_file = out / ("model-" + kind + ".bin"), log_file = out / ("train-log-" + kind + ".csv"),
                   config_file = out / ("config-" + kind + ".json");
    check_writable({model_file, log_file, config_file}, force);
    const Dataset data = training_data(c);
    c.model = resolved_model(c, data);
    const auto result = train_experiment(c, data);
    write_file_atomic(model_file, serialize_model(result.model));
    write_file_atomic(log_file, training_log_csv(result));
    write_file_atomic(config_file, config_text(c));
    std::printf("trained %s model on %zu sequences, final loss %.6g -> %s\n", kind.c_str(), data.size(),
                result.log.back().loss, model_file.string().c_str());
}

std::string label_for(const fs::path &model_path) {
    const std::string stem = model_path.stem().string();
    for (const char *kind : {"cpd", "bce"}) {
        if (stem.find(kind) != std::string::npos) return kind;
    }
    return stem;
}

void run_evaluate(const ExperimentConfig &c, const std::vector<std::string> &model_paths,
                  std::vector<std::string> labels, const std::optional<std::string> &data_path, bool force) {
    if (!labels.empty() && labels.size() != model_paths.size()) {
        throw std::invalid_argument("--labels needs one label per model");
    }
    const fs::path out(c.out);
    const fs::path metrics_file = out / "metrics.csv", report_file = out / "report.json",
                   config_file = out / "config.json";
    check_writable({metrics_file, report_file, config_file}, force);
    std::vector<DetectorModel> models;
    for (const auto &p : model_paths) models.push_back(load_model(p));
    const Dataset data = data_path ? read_dataset(fs::path(*data_path)) : test_data(c);
    if (data.empty()) throw std::invalid_argument("evaluation dataset is empty");
    for (std::size_t i = 0; i < models.size(); ++i) {
        if (models[i].config().input_dim != data.front().sequence.dim()) {
            throw std::invalid_argument("model " + model_paths[i] + " expects input dim " +
                                        std::to_string(models[i].config().input_dim) + " but the data has dim " +
                                        std::to_string(data.front().sequence.dim()));
        }
    }
    Report report{to_json(c), c.data.types, {}};
    for (std::size_t i = 0; i < models.size(); ++i) {
        const std::string label = labels.empty() ? label_for(model_paths[i]) : labels[i];
        report.models.push_back(evaluate_model(label, models[i], data, c.thresholds, threads_from_environment()));
    }
    write_file_atomic(metrics_file, metrics_csv(report.models));
    write_file_atomic(report_file, report_text(report));
    write_file_atomic(config_file, config_text(c));
    for (const auto &m : report.models) {
        std::printf("%s: AUC %.4g, best F1 %.4f, best covering %.4f\n", m.label.c_str(), m.auc(), m.best_f1(),
                    m.best_covering());
    }
}

void write_plots(const std::vector<Report> &reports, const fs::path &out, double threshold, bool force) {
    const fs::path curves = out / "detection_curves.svg", traces = out / "traces.svg", summary = out / "k_summary.svg";
    std::set<int> ks;
    for (const auto &r : reports) ks.insert(r.types);
    check_writable({curves, traces}, force);
    if (ks.size() > 1) check_writable({summary}, force);
    write_file_atomic(curves, plot::detection_curves(reports));
    write_file_atomic(traces, plot::probability_traces(reports.front(), threshold));
    if (ks.size() > 1) write_file_atomic(summary, plot::k_summary(reports));
}

void run_reproduce(const ExperimentConfig &base, const std::vector<int> &ks, bool force) {
    const fs::path out(base.out);
    check_writable({out / "metrics.csv", out / "config.json"}, force);
    std::vector<Report> reports;
    std::vector<ModelReport> rows;
    std::vector<std::string> prefixes;
    for (int k : ks) {
        ExperimentConfig cell = base;
        cell.data.types = k;
        cell.out = (out / ("K" + std::to_string(k))).string();
        cell.validate();
        const fs::path dir(cell.out);
        check_writable({dir / "metrics.csv", dir / "report.json"}, force);
        const Dataset train_set = training_data(cell), test_set = test_data(cell);
        cell.model = resolved_model(cell, train_set);
        Report report{to_json(cell), k, {}};
        for (LossKind kind : {LossKind::cpd, LossKind::bce}) {
            cell.loss = kind;
            const std::string name = to_string(kind);
            const auto result = train_experiment(cell, train_set);
            write_file_atomic(dir / ("model-" + name + ".bin"), serialize_model(result.model));
            write_file_atomic(dir / ("train-log-" + name + ".csv"), training_log_csv(result));
            write_file_atomic(dir / ("config-" + name + ".json"), config_text(cell));
            report.models.push_back(
                evaluate_model(name, result.model, test_set, cell.thresholds, threads_from_environment()));
            const auto &m = report.models.back();
            std::printf("K=%d %s: AUC %.4g, best F1 %.4f, best covering %.4f\n", k, name.c_str(), m.auc(),
                        m.best_f1(), m.best_covering());
            std::fflush(stdout);
        }
        write_file_atomic(dir / "metrics.csv", metrics_csv(report.models));
        write_file_atomic(dir / "report.json", report_text(report));
        for (const auto &m : report.models) {
            rows.push_back(m);
            prefixes.push_back(std::to_string(k));
        }
        reports.push_back(std::move(report));
    }
    write_file_atomic(out / "metrics.csv", metrics_csv(rows, "types", prefixes));
    write_file_atomic(out / "config.json", config_text(base));
    write_plots(reports, out, 0.5, force);
    std::printf("wrote %s\n", (out / "metrics.csv").string().c_str());
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"cpdkit: change point detection with a principled detection-delay / false-alarm loss"};
    app.require_subcommand(1);
    bool force = false;

    Overrides gen_o;
    std::string split = "train";
    auto *gen = app.add_subcommand("generate", "write a synthetic labelled dataset (JSONL)");
    add_common(gen, gen_o, force);
    gen_o.add_data(gen);
    gen->add_option("--split", split, "which seeded split to write")->check(CLI::IsMember({"train", "test"}));

    Overrides train_o;
    std::optional<std::string> train_data;
    auto *tr = app.add_subcommand("train", "train a detector and write model file and loss log");
    add_common(tr, train_o, force);
    train_o.add_data(tr);
    train_o.add_training(tr);
    tr->add_option("--data", train_data, "training JSONL file (default: generated from the config)")
        ->check(CLI::ExistingFile);

    Overrides eval_o;
    std::vector<std::string> model_paths, labels;
    std::optional<std::string> eval_data;
    auto *ev = app.add_subcommand("evaluate", "sweep thresholds and write metrics CSV and report");
    add_common(ev, eval_o, force);
    eval_o.add_data(ev);
    eval_o.add_thresholds(ev);
    ev->add_option("--models", model_paths, "model files to compare")->required()->check(CLI::ExistingFile);
    ev->add_option("--labels", labels, "row labels, one per model (default: cpd/bce from the file name)");
    ev->add_option("--data", eval_data, "evaluation JSONL file (default: held-out split from the config)")
        ->check(CLI::ExistingFile);

    std::vector<std::string> report_paths;
    std::string plot_out = "plots";
    double trace_threshold = 0.5;
    auto *pl = app.add_subcommand("plot", "render SVG figures from report files");
    pl->add_option("--reports", report_paths, "report.json files")->required()->check(CLI::ExistingFile);
    pl->add_option("--out", plot_out, "output directory");
    pl->add_option("--threshold", trace_threshold, "alarm threshold marked on probability traces")
        ->check(CLI::Range(0.0, 1.0));
    pl->add_flag("--force", force, "overwrite existing outputs");

    Overrides rep_o;
    std::vector<int> ks{1, 2, 4, 6, 8, 10};
    auto *rep = app.add_subcommand("reproduce", "run the K x {cpd, bce} grid at reduced size");
    add_common(rep, rep_o, force);
    rep_o.add_data(rep);
    rep_o.add_training(rep);
    rep_o.add_thresholds(rep);
    rep->add_option("--ks", ks, "numbers of change types to run")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e);
    }

    try {
        if (*gen) {
            run_generate(gen_o.resolve({}), split, force);
        } else if (*tr) {
            run_train(train_o.resolve({}), train_data, force);
        } else if (*ev) {
            run_evaluate(eval_o.resolve({}), model_paths, labels, eval_data, force);
        } else if (*pl) {
            std::vector<Report> reports;
            for (const auto &p : report_paths) reports.push_back(load_report(p));
            write_plots(reports, plot_out, trace_threshold, force);
        } else if (*rep) {
            ExperimentConfig base;
            base.out = "reproduce";
            base.data.per_type = 25;
            base.data.test_per_type = 25;
            base.train.epochs = 10;
            run_reproduce(rep_o.resolve(base), ks, force);
        }
    } catch (const std::exception &e) {
        std::fprintf(stderr, "cpdkit: error: %s\n", e.what());
        return 1;
    }
    return 0;
}
