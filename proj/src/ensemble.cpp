#include "evoad/ensemble.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <memory>

#include "evoad/error.hpp"
#include "evoad/parallel.hpp"
#include "evoad/random.hpp"

namespace evoad {

std::size_t VotingRule::required(std::size_t voters) const {
    switch (kind) {
        case VoteKind::majority: return (voters + 1) / 2;
        case VoteKind::any: return 1;
        case VoteKind::quorum: return quorum;
    }
    return 1;
}

std::string VotingRule::to_string() const {
    switch (kind) {
        case VoteKind::majority: return "majority";
        case VoteKind::any: return "any";
        case VoteKind::quorum: return "quorum:" + std::to_string(quorum);
    }
    return "majority";
}

VotingRule VotingRule::parse(std::string_view text) {
    if (text == "majority") return {VoteKind::majority, 1};
    if (text == "any") return {VoteKind::any, 1};
    if (text.starts_with("quorum:")) {
        const auto digits = text.substr(7);
        std::size_t q = 0;
        const auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), q);
        if (ec == std::errc() && end == digits.data() + digits.size() && q >= 1) return {VoteKind::quorum, q};
    }
    throw ValidationError("unknown voting rule '" + std::string(text) + "' (expected majority, any or quorum:<q>)");
}

bool EnsembleModel::calibrated() const {
    return !submodels.empty() &&
           std::all_of(submodels.begin(), submodels.end(), [](const auto& s) { return s.threshold.has_value(); });
}

std::uint64_t ensemble_submodel_seed(std::uint64_t seed, std::size_t group_position) {
    return derive_seed(seed, "ensemble", {static_cast<std::uint64_t>(group_position)});
}

EnsembleModel train_ensemble(const Partition& partition, const TimeSeries& train_normalized, const NormStats& stats,
                             const ModelConfig& model, Index epochs, std::uint64_t seed, std::size_t jobs) {
    partition.validate(partition.k(), static_cast<std::size_t>(train_normalized.n_features()));
    if (partition.non_empty_groups() == 0) throw ValidationError("every group of the partition is empty");

    EnsembleModel ensemble;
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < partition.k(); ++i) {
        if (partition.groups[i].empty()) {
            ensemble.log.push_back("group " + std::to_string(i) + " is empty, skipped");
        } else {
            positions.push_back(i);
        }
    }
    std::vector<std::optional<TrainedSubmodel>> trained(positions.size());
    parallel_for(positions.size(), jobs, [&](std::size_t j) {
        const std::size_t i = positions[j];
        trained[j] = fit_submodel(partition.groups[i], train_normalized, stats, model, epochs,
                                  ensemble_submodel_seed(seed, i));
    });
    for (auto& t : trained) ensemble.submodels.push_back(std::move(*t));
    return ensemble;
}

double percentile_linear(std::vector<double> values, double p) {
    if (values.empty()) throw ValidationError("percentile of an empty sample");
    if (!(p >= 0.0 && p <= 100.0)) throw ValidationError("percentile must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<std::vector<double>> ensemble_scores(const EnsembleModel& ensemble, const TimeSeries& raw,
                                                 std::size_t jobs) {
    std::vector<std::vector<double>> scores(ensemble.submodels.size());
    parallel_for(scores.size(), jobs, [&](std::size_t i) { scores[i] = score(ensemble.submodels[i], raw); });
    return scores;
}

void calibrate_thresholds(EnsembleModel& ensemble, const TimeSeries& val_raw, double percentile, std::size_t jobs) {
    if (!(percentile > 50.0 && percentile <= 100.0)) throw ValidationError("percentile must lie in (50, 100]");
    if (val_raw.has_anomalies()) throw ValidationError("calibration data must be anomaly-free");
    for (const auto& s : ensemble.submodels) {
        if (val_raw.n_points() < s.config.window()) {
            throw ValidationError("validation series (" + std::to_string(val_raw.n_points()) +
                                  " points) is shorter than one window (" + std::to_string(s.config.window()) + ")");
        }
    }
    const auto scores = ensemble_scores(ensemble, val_raw, jobs);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        ensemble.submodels[i].threshold = percentile_linear(scores[i], percentile);
    }
}

Label vote_decision(std::span<const bool> votes, const VotingRule& rule) {
    const auto yes = static_cast<std::size_t>(std::count(votes.begin(), votes.end(), true));
    return yes >= rule.required(votes.size()) ? Label::anomaly : Label::normal;
}

std::vector<Label> vote_scores(const std::vector<std::vector<double>>& scores, const std::vector<double>& thresholds,
                               const VotingRule& rule) {
    if (scores.empty() || scores.size() != thresholds.size()) {
        throw ValidationError("need one threshold per submodel and at least one submodel");
    }
    const std::size_t n = scores.front().size();
    for (const auto& s : scores) {
        if (s.size() != n) throw ValidationError("submodel score series differ in length");
    }
    std::vector<Label> out(n);
    const std::size_t v = scores.size();
    auto votes = std::make_unique<bool[]>(v);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t i = 0; i < v; ++i) votes[i] = scores[i][t] > thresholds[i];
        out[t] = vote_decision(std::span<const bool>(votes.get(), v), rule);
    }
    return out;
}

std::vector<Label> vote(const EnsembleModel& ensemble, const TimeSeries& raw, std::size_t jobs) {
    if (!ensemble.calibrated()) throw ValidationError("ensemble is not calibrated");
    std::vector<double> thresholds;
    for (const auto& s : ensemble.submodels) thresholds.push_back(*s.threshold);
    return vote_scores(ensemble_scores(ensemble, raw, jobs), thresholds, ensemble.rule);
}

Metrics evaluate(std::span<const Label> pred, std::span<const Label> truth) {
    if (pred.size() != truth.size()) {
        throw ValidationError("prediction has " + std::to_string(pred.size()) + " points, truth has " +
                              std::to_string(truth.size()));
    }
    Metrics m;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == Label::anomaly;
        const bool t = truth[i] == Label::anomaly;
        if (p && t) ++m.tp;
        else if (p) ++m.fp;
        else if (t) ++m.fn;
        else ++m.tn;
    }
    m.precision = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
    m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

std::vector<Label> point_adjust(std::span<const Label> pred, std::span<const Label> truth) {
    if (pred.size() != truth.size()) throw ValidationError("prediction and truth differ in length");
    std::vector<Label> out(pred.begin(), pred.end());
    std::size_t i = 0;
    while (i < truth.size()) {
        if (truth[i] != Label::anomaly) {
            ++i;
            continue;
        }
        std::size_t end = i;
        bool hit = false;
        while (end < truth.size() && truth[end] == Label::anomaly) hit |= pred[end++] == Label::anomaly;
        if (hit) {
            std::fill(out.begin() + static_cast<std::ptrdiff_t>(i), out.begin() + static_cast<std::ptrdiff_t>(end),
                      Label::anomaly);
        }
        i = end;
    }
    return out;
}

}  // namespace evoad
