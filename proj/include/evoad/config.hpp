#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "evoad/autoencoders.hpp"
#include "evoad/dataset.hpp"
#include "evoad/ensemble.hpp"
#include "evoad/evolution.hpp"

namespace evoad {

inline constexpr int kConfigSchemaVersion = 1;

struct DataSource {
    enum class Kind { csv, synth } kind = Kind::synth;
    std::string train_csv;
    std::string test_csv;
    std::string label_column = "attack";
    SynthConfig synth;  // synth.seed is derived from the master seed
};

struct PreprocessConfig {
    Index downsample = 5;
    double val_fraction = 0.2;
    bool normalize = true;
};

struct EnsembleOptions {
    Index final_epochs = 70;
    double percentile = 99.0;
    VotingRule voting;
    bool point_adjust = false;
    bool dump_scores = true;
};

struct RunConfig {
    int schema_version = kConfigSchemaVersion;
    std::uint64_t seed = 0;
    std::string output_dir = "run";
    DataSource data;
    PreprocessConfig preprocess;
    ModelConfig model;
    EvolutionConfig evolution;  // model, seed and jobs are filled in from the fields above
    EnsembleOptions ensemble;

    // Throws ValidationError on the first violated invariant. Relative paths
    // must already be resolved.
    void validate() const;
};

// Missing keys keep their defaults; unknown keys are rejected. Relative paths
// are resolved against base_dir.
RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const RunConfig& cfg);

RunConfig load_config(const std::filesystem::path& path);

// FNV-1a 64 over the canonical (sorted-key, compact) JSON without output_dir,
// as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace evoad
