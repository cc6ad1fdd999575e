#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evoad/autoencoders.hpp"
#include "evoad/dataset.hpp"
#include "evoad/feature_group.hpp"

namespace evoad {

enum class VoteKind { majority, any, quorum };

struct VotingRule {
    VoteKind kind = VoteKind::majority;
    std::size_t quorum = 1;  // used by VoteKind::quorum

    // Votes needed to flag a point when v submodels vote.
    std::size_t required(std::size_t voters) const;
    std::string to_string() const;
    // "majority", "any" or "quorum:<q>".
    static VotingRule parse(std::string_view text);
};

struct EnsembleModel {
    std::vector<TrainedSubmodel> submodels;
    VotingRule rule;
    std::string provenance;
    std::vector<std::string> log;

    bool calibrated() const;
};

// One submodel per non-empty group, trained for `epochs` epochs on the
// normalized train series. Submodel seeds are derive_seed(seed, "ensemble", {i})
// where i is the group's position in the partition.
EnsembleModel train_ensemble(const Partition& partition, const TimeSeries& train_normalized, const NormStats& stats,
                             const ModelConfig& model, Index epochs, std::uint64_t seed, std::size_t jobs = 1);

std::uint64_t ensemble_submodel_seed(std::uint64_t seed, std::size_t group_position);

// Linear interpolation between closest ranks: rank = p / 100 * (n - 1).
double percentile_linear(std::vector<double> values, double p);

// Threshold of each submodel = percentile of its scores on the raw validation series.
void calibrate_thresholds(EnsembleModel& ensemble, const TimeSeries& val_raw, double percentile, std::size_t jobs = 1);

// Per-submodel per-point scores on a raw series.
std::vector<std::vector<double>> ensemble_scores(const EnsembleModel& ensemble, const TimeSeries& raw,
                                                 std::size_t jobs = 1);

Label vote_decision(std::span<const bool> votes, const VotingRule& rule);

std::vector<Label> vote_scores(const std::vector<std::vector<double>>& scores, const std::vector<double>& thresholds,
                               const VotingRule& rule);

std::vector<Label> vote(const EnsembleModel& ensemble, const TimeSeries& raw, std::size_t jobs = 1);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;
};

Metrics evaluate(std::span<const Label> pred, std::span<const Label> truth);

// Every true anomaly segment with at least one predicted point becomes fully predicted.
std::vector<Label> point_adjust(std::span<const Label> pred, std::span<const Label> truth);

}  // namespace evoad
