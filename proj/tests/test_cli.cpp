#include <gtest/gtest.h>

#include <chrono>
#include <csignal>
#include <fcntl.h>
#include <filesystem>
#include <json.hpp>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

#include "test_util.hpp"

using nlohmann::json;
using evoad::testing::TempDir;
using evoad::testing::read_file;
using evoad::testing::write_file;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

Result run_cli(const TempDir& dir, const std::string& args) {
    const std::string out = dir.file("stdout.txt");
    const std::string err = dir.file("stderr.txt");
    const std::string cmd = std::string(EVOAD_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
}

json tiny_config(const std::string& output_dir) {
    return json{
        {"schema_version", 1},
        {"seed", 7},
        {"output_dir", output_dir},
        {"data",
         {{"source", "synth"},
          {"synth",
           {{"n_train", 500},
            {"n_test", 200},
            {"n_features", 6},
            {"n_clusters", 2},
            {"intra_cluster_corr", 0.8},
            {"anomaly_segments", {{{"start", 80}, {"end", 120}, {"cluster", 1}, {"magnitude", 3.0}}}}}}}},
        {"preprocess", {{"downsample", 1}, {"val_fraction", 0.2}}},
        {"model", {{"family", "cnn1d"}, {"cnn", {{"filters", {4, 4, 4}}}}}},
        {"evolution", {{"k", 2}, {"generations", 2}, {"population", 4}, {"parents", 2}, {"fitness_epochs", 1}}},
        {"ensemble", {{"final_epochs", 2}, {"voting", "majority"}}}};
}

std::string write_config(const TempDir& dir, const std::string& name, const json& cfg) {
    const std::string path = dir.file(name);
    write_file(path, cfg.dump(2));
    return path;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
    TempDir dir("cli");
    EXPECT_EQ(run_cli(dir, "--help").code, 0);
    EXPECT_EQ(run_cli(dir, "").code, 1);
    EXPECT_EQ(run_cli(dir, "frobnicate").code, 1);
    EXPECT_EQ(run_cli(dir, "synth").code, 1);
    EXPECT_EQ(run_cli(dir, "synth --config x.json --jobs 0").code, 1);
}

TEST(Cli, ValidationErrorsExitOneWithStructuredMessage) {
    TempDir dir("cli");
    auto cfg = tiny_config(dir.file("run"));
    cfg["data"]["synth"]["n_features"] = 1;
    const auto path = write_config(dir, "bad.json", cfg);
    const auto r = run_cli(dir, "synth --config " + path);
    EXPECT_EQ(r.code, 1);
    const auto err = json::parse(r.err);
    EXPECT_EQ(err["error"], "validation");
    EXPECT_EQ(err["exit_code"], 1);
    EXPECT_NE(err["message"].get<std::string>().find("n_features"), std::string::npos);
    EXPECT_FALSE(std::filesystem::exists(dir.file("run")));

    EXPECT_EQ(run_cli(dir, "evolve --config " + dir.file("missing.json")).code, 1);
}

TEST(Cli, RuntimeFailureExitsTwo) {
    TempDir dir("cli");
    write_file(dir.file("blocker"), "a file where a directory should be");
    const auto path = write_config(dir, "c.json", tiny_config(dir.file("blocker/run")));
    const auto r = run_cli(dir, "synth --config " + path);
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(json::parse(r.err)["error"], "runtime");
}

TEST(Cli, SynthIsDeterministic) {
    TempDir dir("cli");
    const auto path = write_config(dir, "c.json", tiny_config(dir.file("a")));
    ASSERT_EQ(run_cli(dir, "synth --config " + path).code, 0);
    ASSERT_EQ(run_cli(dir, "synth --config " + path + " --output-dir " + dir.file("b")).code, 0);
    for (const char* f : {"train.csv", "test.csv", "manifest.json"}) {
        EXPECT_EQ(read_file(dir.file(std::string("a/") + f)), read_file(dir.file(std::string("b/") + f))) << f;
    }
    const auto manifest = json::parse(read_file(dir.file("a/manifest.json")));
    EXPECT_EQ(manifest["seed"], 7);
    ASSERT_EQ(run_cli(dir, "synth --config " + path + " --seed 8 --output-dir " + dir.file("c")).code, 0);
    EXPECT_NE(read_file(dir.file("a/train.csv")), read_file(dir.file("c/train.csv")));
}

TEST(Cli, EvolveTrainEvalEvaluateAreDeterministic) {
    TempDir dir("cli");
    const auto path = write_config(dir, "c.json", tiny_config(dir.file("a")));
    ASSERT_EQ(run_cli(dir, "evolve --config " + path).code, 0);
    ASSERT_EQ(run_cli(dir, "evolve --config " + path + " --jobs 2 --output-dir " + dir.file("b")).code, 0);
    EXPECT_EQ(read_file(dir.file("a/best_partition.txt")), read_file(dir.file("b/best_partition.txt")));
    EXPECT_EQ(read_file(dir.file("a/fitness.csv")), read_file(dir.file("b/fitness.csv")));

    const auto log = json::parse(read_file(dir.file("a/generation_log.json")));
    EXPECT_TRUE(log["complete"].get<bool>());
    ASSERT_EQ(log["generations"].size(), 2u);
    double prev = -INFINITY;
    for (const auto& g : log["generations"]) {
        EXPECT_GE(g["best_so_far"].get<double>(), prev);
        prev = g["best_so_far"].get<double>();
    }

    ASSERT_EQ(run_cli(dir, "train-eval --baseline --point-adjust --config " + path).code, 0);
    ASSERT_EQ(run_cli(dir, "train-eval --baseline --point-adjust --jobs 2 --config " + path + " --output-dir " +
                               dir.file("b"))
                  .code,
              0);
    EXPECT_EQ(read_file(dir.file("a/report.json")), read_file(dir.file("b/report.json")));
    EXPECT_EQ(read_file(dir.file("a/scores.csv")), read_file(dir.file("b/scores.csv")));

    const auto report = json::parse(read_file(dir.file("a/report.json")));
    for (const char* section : {"ensemble", "baseline"}) {
        const auto& m = report[section]["metrics"];
        for (const char* key : {"precision", "recall", "f1", "tp", "fp", "fn", "tn"}) {
            EXPECT_TRUE(m.contains(key)) << section << "." << key;
        }
        EXPECT_TRUE(report[section].contains("point_adjusted_metrics"));
        EXPECT_EQ(m["tp"].get<int>() + m["fp"].get<int>() + m["fn"].get<int>() + m["tn"].get<int>(),
                  report["test_points"].get<int>());
    }
    EXPECT_EQ(report["test_anomalies"], 40);
    EXPECT_EQ(report["config_hash"].get<std::string>().size(), 16u);
    EXPECT_TRUE(std::filesystem::exists(dir.file("a/models/submodel_0.ckpt")));
    EXPECT_TRUE(std::filesystem::exists(dir.file("a/models/baseline_0.ckpt")));

    ASSERT_EQ(run_cli(dir, "evaluate --config " + path).code, 0);
    const auto evaluation = json::parse(read_file(dir.file("a/evaluation.json")));
    EXPECT_EQ(evaluation["metrics"], report["ensemble"]["metrics"]);
}

TEST(Cli, SingleGroupPartitionEqualsBaseline) {
    TempDir dir("cli");
    const auto path = write_config(dir, "c.json", tiny_config(dir.file("a")));
    write_file(dir.file("all.txt"), "evoad-partition 1\nk 1\ng 0 1 2 3 4 5\n");
    ASSERT_EQ(run_cli(dir, "train-eval --baseline --config " + path + " --partition " + dir.file("all.txt")).code, 0);
    const auto report = json::parse(read_file(dir.file("a/report.json")));
    EXPECT_EQ(report["ensemble"]["metrics"], report["baseline"]["metrics"]);
    EXPECT_EQ(report["ensemble"]["submodels"], report["baseline"]["submodels"]);
    EXPECT_EQ(read_file(dir.file("a/scores.csv")), read_file(dir.file("a/baseline_scores.csv")));
}

TEST(Cli, TrainEvalRejectsForeignPartition) {
    TempDir dir("cli");
    const auto path = write_config(dir, "c.json", tiny_config(dir.file("a")));
    write_file(dir.file("p.txt"), "evoad-partition 1\nk 2\ng 0 1\ng 9\n");
    const auto r = run_cli(dir, "train-eval --config " + path + " --partition " + dir.file("p.txt"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("feature 9"), std::string::npos) << r.err;
    EXPECT_EQ(run_cli(dir, "train-eval --config " + path).code, 1);  // no best_partition.txt yet
}

TEST(Cli, InterruptedEvolveLeavesValidPartialLog) {
    TempDir dir("cli");
    auto cfg = tiny_config(dir.file("a"));
    cfg["evolution"]["generations"] = 200;
    const auto path = write_config(dir, "c.json", cfg);
    const std::string log_path = dir.file("a/generation_log.json");

    const pid_t pid = fork();
    ASSERT_GE(pid, 0);
    if (pid == 0) {
        const int devnull = ::open("/dev/null", O_WRONLY);
        dup2(devnull, 1);
        dup2(devnull, 2);
        execl(EVOAD_CLI_PATH, EVOAD_CLI_PATH, "evolve", "--config", path.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(120);
    while (!std::filesystem::exists(log_path) && std::chrono::steady_clock::now() < deadline) {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    kill(pid, SIGKILL);
    int status = 0;
    waitpid(pid, &status, 0);

    ASSERT_TRUE(std::filesystem::exists(log_path));
    const auto log = json::parse(read_file(log_path));
    EXPECT_FALSE(log["complete"].get<bool>());
    ASSERT_GE(log["generations"].size(), 1u);
    EXPECT_TRUE(log.contains("best_partition"));
    double prev = -INFINITY;
    for (const auto& g : log["generations"]) {
        EXPECT_GE(g["best_so_far"].get<double>(), prev);
        prev = g["best_so_far"].get<double>();
    }
}
