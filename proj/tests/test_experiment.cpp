#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cpdkit/experiment.hpp"
#include "cpdkit/plot.hpp"

namespace fs = std::filesystem;
using namespace cpdkit;

namespace {

class CliTest : public ::testing::Test {
  protected:
    void SetUp() override {
        const auto *info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / ("cpdkit-cli-" + std::string(info->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    int run(const std::string &args) {
        const std::string cmd = std::string(CPDKIT_CLI_PATH) + " " + args + " >" + (dir_ / "stdout.txt").string() +
                                " 2>" + (dir_ / "stderr.txt").string();
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string stderr_text() const { return read(dir_ / "stderr.txt"); }

    static std::string read(const fs::path &p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        return s.str();
    }

    std::string path(const std::string &rel) const { return (dir_ / rel).string(); }

    fs::path dir_;
};

const std::string kData = " --per-type 6 --test-per-type 6 --length 24";
const std::string kSmall = kData + " --epochs 2 --hidden 6";

std::size_t count_lines(const std::string &text) { return std::size_t(std::count(text.begin(), text.end(), '\n')); }

} // namespace

TEST_F(CliTest, GenerateIsByteReproducibleAndCreatesDirectories) {
    ASSERT_EQ(run("generate --seed 3 --types 4 --per-type 5 --out " + path("a/b")), 0) << stderr_text();
    ASSERT_EQ(run("generate --seed 3 --types 4 --per-type 5 --out " + path("c")), 0) << stderr_text();
    const auto first = read(path("a/b/train.jsonl"));
    EXPECT_EQ(count_lines(first), 40u);
    EXPECT_EQ(first, read(path("c/train.jsonl")));
    ASSERT_EQ(run("generate --seed 3 --types 4 --per-type 5 --force --out " + path("a/b")), 0);
    EXPECT_EQ(read(path("a/b/train.jsonl")), first);
    EXPECT_EQ(read_dataset(fs::path(path("c/train.jsonl"))).size(), 40u);
}

TEST_F(CliTest, RefusesToOverwriteWithoutForce) {
    ASSERT_EQ(run("generate --seed 1 --per-type 3 --out " + path("d")), 0);
    const auto before = read(path("d/train.jsonl"));
    EXPECT_NE(run("generate --seed 2 --per-type 3 --out " + path("d")), 0);
    EXPECT_NE(stderr_text().find("--force"), std::string::npos) << stderr_text();
    EXPECT_EQ(count_lines(stderr_text()), 1u);
    EXPECT_EQ(read(path("d/train.jsonl")), before);
    EXPECT_EQ(run("generate --seed 2 --per-type 3 --force --out " + path("d")), 0);
    EXPECT_NE(read(path("d/train.jsonl")), before);
    for (const auto &entry : fs::recursive_directory_iterator(dir_)) {
        EXPECT_EQ(entry.path().string().find(".partial"), std::string::npos) << entry.path();
    }
}

TEST_F(CliTest, ConfigFileValuesAreOverriddenByFlags) {
    std::ofstream(path("cfg.json")) << R"({"seed": 11, "data": {"types": 2, "per_type": 4}})";
    ASSERT_EQ(run("generate --config " + path("cfg.json") + " --per-type 3 --out " + path("g")), 0) << stderr_text();
    const auto resolved = load_experiment_config(path("g/config.json"));
    EXPECT_EQ(resolved.seed, 11u);
    EXPECT_EQ(resolved.data.types, 2);
    EXPECT_EQ(resolved.data.per_type, 3);
    EXPECT_EQ(count_lines(read(path("g/train.jsonl"))), 12u);
}

TEST_F(CliTest, TrainBothLossesAndEvaluateSideBySide) {
    ASSERT_EQ(run("generate --seed 4 --types 2" + kData + " --out " + path("data")), 0) << stderr_text();
    for (const char *loss : {"cpd", "bce"}) {
        ASSERT_EQ(run(std::string("train --seed 4 --types 2 --loss ") + loss + kSmall + " --data " +
                      path("data/train.jsonl") + " --out " + path("models")),
                  0)
            << stderr_text();
    }
    const auto cpd = load_model(path("models/model-cpd.bin"));
    const auto bce = load_model(path("models/model-bce.bin"));
    EXPECT_EQ(cpd.config(), bce.config());
    EXPECT_NE(cpd.params(), bce.params());
    EXPECT_EQ(count_lines(read(path("models/train-log-cpd.csv"))), 3u);

    ASSERT_EQ(run("train --seed 4 --types 2 --loss cpd" + kSmall + " --data " + path("data/train.jsonl") + " --out " +
                  path("again")),
              0);
    EXPECT_EQ(read(path("again/model-cpd.bin")), read(path("models/model-cpd.bin")));

    ASSERT_EQ(run("evaluate --seed 4 --types 2" + kData + " --models " + path("models/model-cpd.bin") + " " +
                  path("models/model-bce.bin") + " --out " + path("eval")),
              0)
        << stderr_text();
    const auto csv = read(path("eval/metrics.csv"));
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
    EXPECT_EQ(count_lines(csv), 1u + 2u * default_thresholds().size());
    EXPECT_NE(csv.find("\ncpd,0.001,"), std::string::npos);
    EXPECT_NE(csv.find("\nbce,0.9999,"), std::string::npos);
    const auto report = load_report(path("eval/report.json"));
    ASSERT_EQ(report.models.size(), 2u);
    EXPECT_EQ(report.models[0].bundles.size(), default_thresholds().size());

    ASSERT_EQ(run("plot --reports " + path("eval/report.json") + " --out " + path("plots")), 0) << stderr_text();
    const auto svg = read(path("plots/detection_curves.svg"));
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find(">cpd<"), std::string::npos);
    EXPECT_NE(svg.find(">bce<"), std::string::npos);
    EXPECT_TRUE(fs::exists(path("plots/traces.svg")));
    EXPECT_FALSE(fs::exists(path("plots/k_summary.svg")));
}

TEST_F(CliTest, InvalidLossNameIsAUsageError) {
    EXPECT_NE(run("train --loss mse --out " + path("x")), 0);
    EXPECT_FALSE(fs::exists(path("x")));
    EXPECT_NE(run("frobnicate"), 0);
}

TEST_F(CliTest, DimensionMismatchFailsBeforeEvaluating) {
    ASSERT_EQ(run("train --seed 1 --loss bce" + kSmall + " --out " + path("m")), 0) << stderr_text();
    std::ofstream(path("scalar.jsonl")) << R"({"id":"a","dim":1,"length":3,"change_point":3,"features":[0,0,0]})"
                                        << "\n";
    EXPECT_NE(run("evaluate --models " + path("m/model-bce.bin") + " --data " + path("scalar.jsonl") + " --out " +
                  path("e")),
              0);
    EXPECT_NE(stderr_text().find("dim"), std::string::npos) << stderr_text();
    EXPECT_FALSE(fs::exists(path("e/metrics.csv")));
}

TEST_F(CliTest, CorruptDatasetReportsLine) {
    std::ofstream(path("bad.jsonl")) << R"({"id":"a","dim":1,"length":3,"change_point":3,"features":[0,0,0]})"
                                     << "\n{oops\n";
    EXPECT_NE(run("train --data " + path("bad.jsonl") + " --out " + path("t")), 0);
    EXPECT_NE(stderr_text().find("bad.jsonl:2"), std::string::npos) << stderr_text();
}

TEST_F(CliTest, ReproduceIsDeterministic) {
    const std::string args = "reproduce --seed 7 --ks 1,2 --per-type 4 --test-per-type 4 --length 24 --epochs 1 "
                             "--hidden 4 --out ";
    ASSERT_EQ(run(args + path("r1")), 0) << stderr_text();
    ASSERT_EQ(run(args + path("r2")), 0) << stderr_text();
    const auto csv = read(path("r1/metrics.csv"));
    EXPECT_EQ(csv, read(path("r2/metrics.csv")));
    EXPECT_EQ(csv.substr(0, csv.find(',')), "types");
    EXPECT_EQ(count_lines(csv), 1u + 2u * 2u * default_thresholds().size());
    EXPECT_EQ(read(path("r1/k_summary.svg")), read(path("r2/k_summary.svg")));
    EXPECT_TRUE(fs::exists(path("r1/K2/model-bce.bin")));
}

TEST(ExperimentConfig, JsonRoundTrip) {
    ExperimentConfig c;
    c.seed = 99;
    c.data.types = 3;
    c.loss = LossKind::bce;
    c.loss_config.horizon_cap = 20;
    c.train.grad_clip.reset();
    c.thresholds = {0.2, 0.4};
    const auto back = experiment_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(back.loss_config.horizon_cap, 20);
    EXPECT_FALSE(back.train.grad_clip);
}

TEST(ExperimentConfig, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(experiment_config_from_json(nlohmann::json{{"sede", 1}}), ParseError);
    EXPECT_THROW(experiment_config_from_json(nlohmann::json{{"data", {{"types", "four"}}}}), ParseError);
    ExperimentConfig c;
    c.thresholds = {0.5, 0.1};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = ExperimentConfig{};
    c.data.types = 11;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ExperimentConfig, SeedStreamsAreDistinct) {
    ExperimentConfig c;
    EXPECT_NE(c.train_data_seed(), c.test_data_seed());
    EXPECT_NE(c.train_data_seed(), c.init_seed());
}

TEST(MetricsCsv, MissingMeansAreEmptyCells) {
    ModelReport r;
    r.label = "cpd";
    MetricBundle b;
    b.threshold = 0.5;
    b.mean_time_to_fa = 12.5;
    r.bundles.push_back(b);
    const auto csv = metrics_csv({r});
    EXPECT_EQ(csv.substr(csv.find('\n') + 1), "cpd,0.5,12.5,,0,1,,0,0,0,0,0,0,0\n");
}

TEST(Plot, CurveHasOnePointPerThreshold) {
    ModelReport m;
    m.label = "cpd";
    for (double s : {0.1, 0.5, 0.9}) {
        MetricBundle b;
        b.threshold = s;
        b.mean_time_to_fa = 60.0 * s;
        b.mean_delay = 10.0 * s;
        m.bundles.push_back(b);
    }
    m.curve = detection_auc(m.bundles);
    const auto svg = plot::detection_curves({Report{{}, 1, {m}}});
    std::size_t circles = 0;
    for (auto pos = svg.find("<circle"); pos != std::string::npos; pos = svg.find("<circle", pos + 1)) ++circles;
    EXPECT_EQ(circles, 3u);
    EXPECT_EQ(svg, plot::detection_curves({Report{{}, 1, {m}}}));
}
