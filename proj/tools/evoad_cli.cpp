#include <CLI11.hpp>
#include <iostream>
#include <json.hpp>

#include "evoad/error.hpp"
#include "evoad/pipeline.hpp"

namespace {

int report_error(const char* kind, const std::string& message, int code) {
    std::cerr << nlohmann::json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Evolved feature-group autoencoder ensembles for time-series anomaly detection"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    evoad::RunOptions options;
    options.log = &std::cerr;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Run configuration (JSON)")->required();
        cmd->add_option("--seed", seed, "Override the master seed");
        cmd->add_option("--output-dir", output_dir, "Override the output directory");
        cmd->add_option("--jobs", options.jobs, "Worker threads")->check(CLI::PositiveNumber);
    };

    auto* synth = app.add_subcommand("synth", "Write a synthetic train/test pair and manifest");
    add_common(synth);
    auto* evolve = app.add_subcommand("evolve", "Evolve a feature partition");
    add_common(evolve);
    auto* train_eval = app.add_subcommand("train-eval", "Train, calibrate and evaluate the ensemble");
    add_common(train_eval);
    train_eval->add_flag("--baseline", options.baseline, "Also train the single-model baseline");
    train_eval->add_flag("--point-adjust", options.point_adjust, "Also report point-adjusted metrics");
    train_eval->add_option("--partition", options.partition_path, "Partition file (default: <output>/best_partition.txt)");
    auto* evaluate = app.add_subcommand("evaluate", "Recompute metrics from a score dump");
    add_common(evaluate);
    evaluate->add_flag("--point-adjust", options.point_adjust, "Also report point-adjusted metrics");
    evaluate->add_option("--scores", options.scores_path, "Score dump (default: <output>/scores.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        auto cfg = evoad::load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (output_dir) cfg.output_dir = *output_dir;
        cfg.validate();

        nlohmann::json result;
        if (synth->parsed()) {
            result = evoad::cmd_synth(cfg, options);
        } else if (evolve->parsed()) {
            result = evoad::cmd_evolve(cfg, options);
            result = {{"best_partition", result["best_partition"]}, {"best_fitness", result["best_fitness"]}};
        } else if (train_eval->parsed()) {
            result = evoad::cmd_train_eval(cfg, options);
            nlohmann::json brief{{"ensemble", result["ensemble"]["metrics"]}};
            if (result.contains("baseline")) brief["baseline"] = result["baseline"]["metrics"];
            result = brief;
        } else {
            result = evoad::cmd_evaluate(cfg, options);
        }
        std::cout << result.dump(2) << std::endl;
        return 0;
    } catch (const evoad::ValidationError& e) {
        return report_error("validation", e.what(), 1);
    } catch (const evoad::RuntimeFailure& e) {
        return report_error("runtime", e.what(), 2);
    } catch (const std::exception& e) {
        return report_error("runtime", e.what(), 2);
    }
}
