#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "evoad/config.hpp"

namespace evoad {

// Seeds fanned out from the master seed.
std::uint64_t synth_seed(std::uint64_t master);
std::uint64_t evolution_seed(std::uint64_t master);
std::uint64_t ensemble_seed(std::uint64_t master);

struct PreparedData {
    TimeSeries train_raw;  // fitting split, downsampled
    TimeSeries val_raw;    // held-out normal split, downsampled
    TimeSeries test_raw;   // labeled, downsampled
    NormStats stats;       // fitted on train_raw (identity when disabled)
    TimeSeries train;      // normalized
    TimeSeries val;        // normalized
};

// Raw train and test series from the configured source.
std::pair<TimeSeries, TimeSeries> load_dataset(const RunConfig& cfg);

// load -> downsample -> chronological train/val split -> fit normalization on
// the train split -> apply.
PreparedData prepare_data(const RunConfig& cfg);

struct RunOptions {
    std::size_t jobs = 1;
    bool baseline = false;
    bool point_adjust = false;  // ORed with the config flag
    std::optional<std::string> partition_path;
    std::optional<std::string> scores_path;
    std::ostream* log = nullptr;
};

// Each command writes into cfg.output_dir and returns its main JSON result.
nlohmann::json cmd_synth(const RunConfig& cfg, const RunOptions& options);
nlohmann::json cmd_evolve(const RunConfig& cfg, const RunOptions& options);
nlohmann::json cmd_train_eval(const RunConfig& cfg, const RunOptions& options);
nlohmann::json cmd_evaluate(const RunConfig& cfg, const RunOptions& options);

nlohmann::json partition_to_json(const Partition& p);
nlohmann::json metrics_to_json(const Metrics& m);

// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace evoad
