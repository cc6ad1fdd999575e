#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "evoad/checkpoint.hpp"
#include "evoad/ensemble.hpp"
#include "evoad/error.hpp"

using namespace evoad;

namespace {

constexpr Label A = Label::anomaly;
constexpr Label N = Label::normal;

TimeSeries wave_series(Index n, Index f, std::uint64_t seed) {
    Rng rng(seed);
    TimeSeries ts;
    ts.values = RowMatrix(n, f);
    for (Index t = 0; t < n; ++t)
        for (Index c = 0; c < f; ++c)
            ts.values(t, c) = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 20.0 + 0.5 * static_cast<double>(c)) +
                              0.05 * rng.normal();
    ts.feature_names = default_feature_names(f);
    return ts;
}

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.cnn.filters = {4, 4, 4};
    return cfg;
}

struct Counts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts brute_counts(const std::vector<Label>& pred, const std::vector<Label>& truth) {
    Counts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int cell = (pred[i] == A ? 2 : 0) + (truth[i] == A ? 1 : 0);
        switch (cell) {
            case 3: ++c.tp; break;
            case 2: ++c.fp; break;
            case 1: ++c.fn; break;
            default: ++c.tn; break;
        }
    }
    return c;
}

std::vector<Label> random_labels(Rng& rng, std::size_t n, double p) {
    std::vector<Label> out(n);
    for (auto& l : out) l = rng.bernoulli(p) ? A : N;
    return out;
}

// Truth as a few contiguous segments.
std::vector<Label> segment_labels(Rng& rng, std::size_t n) {
    std::vector<Label> out(n, N);
    const auto segments = rng.uniform_int(0, 4);
    for (std::int64_t s = 0; s < segments; ++s) {
        const auto start = rng.index(n);
        const auto len = static_cast<std::size_t>(rng.uniform_int(1, 15));
        for (std::size_t i = start; i < std::min(n, start + len); ++i) out[i] = A;
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Voting
// ---------------------------------------------------------------------------

TEST(Voting, RequiredVotes) {
    const VotingRule majority{VoteKind::majority, 1};
    EXPECT_EQ(majority.required(1), 1u);
    EXPECT_EQ(majority.required(2), 1u);
    EXPECT_EQ(majority.required(3), 2u);
    EXPECT_EQ(majority.required(4), 2u);
    EXPECT_EQ(majority.required(5), 3u);
    EXPECT_EQ((VotingRule{VoteKind::any, 1}.required(5)), 1u);
    EXPECT_EQ((VotingRule{VoteKind::quorum, 4}.required(5)), 4u);
}

TEST(Voting, ParseAndPrint) {
    for (const char* text : {"majority", "any", "quorum:3"}) EXPECT_EQ(VotingRule::parse(text).to_string(), text);
    EXPECT_EQ(VotingRule::parse("quorum:2").quorum, 2u);
    for (const char* bad : {"", "most", "quorum:", "quorum:0", "quorum:x", "quorum:2x"}) {
        EXPECT_THROW(VotingRule::parse(bad), ValidationError) << bad;
    }
}

TEST(Voting, MatchesExhaustiveEnumeration) {
    for (std::size_t v = 1; v <= 5; ++v) {
        std::vector<VotingRule> rules{{VoteKind::majority, 1}, {VoteKind::any, 1}};
        for (std::size_t q = 1; q <= v + 1; ++q) rules.push_back({VoteKind::quorum, q});
        for (unsigned mask = 0; mask < (1u << v); ++mask) {
            bool votes[8] = {};
            std::size_t count = 0;
            for (std::size_t i = 0; i < v; ++i) {
                votes[i] = (mask >> i) & 1u;
                count += votes[i];
            }
            for (const auto& rule : rules) {
                bool expected = false;
                switch (rule.kind) {
                    case VoteKind::majority: expected = 2 * count >= v; break;
                    case VoteKind::any: expected = count >= 1; break;
                    case VoteKind::quorum: expected = count >= rule.quorum; break;
                }
                ASSERT_EQ(vote_decision(std::span<const bool>(votes, v), rule) == A, expected)
                    << "v=" << v << " mask=" << mask << " rule=" << rule.to_string();
            }
        }
    }
}

TEST(Voting, MonotoneInVotes) {
    const VotingRule majority{VoteKind::majority, 1};
    for (std::size_t v = 1; v <= 5; ++v) {
        for (unsigned mask = 0; mask < (1u << v); ++mask) {
            bool a[8] = {}, b[8] = {};
            for (std::size_t i = 0; i < v; ++i) a[i] = b[i] = (mask >> i) & 1u;
            for (std::size_t i = 0; i < v; ++i) {
                if (a[i]) continue;
                b[i] = true;
                if (vote_decision(std::span<const bool>(a, v), majority) == A) {
                    ASSERT_EQ(vote_decision(std::span<const bool>(b, v), majority), A);
                }
                b[i] = false;
            }
        }
    }
}

TEST(Voting, ScoresAboveThresholdVote) {
    const std::vector<std::vector<double>> scores{{0.1, 0.5, 0.9}, {0.6, 0.5, 0.1}, {0.2, 0.7, 0.9}};
    const std::vector<double> thresholds{0.5, 0.5, 0.5};
    EXPECT_EQ(vote_scores(scores, thresholds, {VoteKind::majority, 1}), (std::vector<Label>{N, N, A}));
    EXPECT_EQ(vote_scores(scores, thresholds, {VoteKind::any, 1}), (std::vector<Label>{A, A, A}));
    EXPECT_EQ(vote_scores(scores, thresholds, {VoteKind::quorum, 3}), (std::vector<Label>{N, N, N}));
    EXPECT_THROW(vote_scores(scores, {0.5, 0.5}, {}), ValidationError);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

TEST(Metrics, WorkedExample) {
    const std::vector<Label> pred{A, A, A, N, N, N};
    const std::vector<Label> truth{A, A, N, A, A, N};
    const auto m = evaluate(pred, truth);
    EXPECT_EQ(m.tp, 2);
    EXPECT_EQ(m.fp, 1);
    EXPECT_EQ(m.fn, 2);
    EXPECT_EQ(m.tn, 1);
    EXPECT_NEAR(m.precision, 0.6667, 5e-5);
    EXPECT_EQ(m.recall, 0.5);
    EXPECT_NEAR(m.f1, 0.5714, 5e-5);
}

TEST(Metrics, DegenerateCasesAreZero) {
    const std::vector<Label> none(5, N);
    const auto m = evaluate(none, none);
    EXPECT_EQ(m.precision, 0.0);
    EXPECT_EQ(m.recall, 0.0);
    EXPECT_EQ(m.f1, 0.0);
    EXPECT_EQ(m.tn, 5);
    EXPECT_THROW(evaluate(none, std::vector<Label>(4, N)), ValidationError);
}

TEST(Metrics, MatchBruteForceOracle) {
    Rng rng(1234);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = rng.index(200) + 1;
        const auto truth = segment_labels(rng, n);
        const auto pred = random_labels(rng, n, rng.uniform());
        const auto c = brute_counts(pred, truth);
        const auto m = evaluate(pred, truth);
        ASSERT_EQ(m.tp, c.tp);
        ASSERT_EQ(m.fp, c.fp);
        ASSERT_EQ(m.fn, c.fn);
        ASSERT_EQ(m.tn, c.tn);
        const double p = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
        const double r = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
        const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
        ASSERT_EQ(m.precision, p);
        ASSERT_EQ(m.recall, r);
        ASSERT_EQ(m.f1, f1);
        if (c.tp > 0) ASSERT_NEAR(m.f1, 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn), 1e-12);
    }
}

TEST(PointAdjust, WorkedExample) {
    const std::vector<Label> truth{N, A, A, A, N, A, A, N};
    const std::vector<Label> pred{A, N, A, N, N, N, N, N};
    EXPECT_EQ(point_adjust(pred, truth), (std::vector<Label>{A, A, A, A, N, N, N, N}));
}

TEST(PointAdjust, NeverDecreasesRecall) {
    Rng rng(1234);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = rng.index(200) + 1;
        const auto truth = segment_labels(rng, n);
        const auto pred = random_labels(rng, n, rng.uniform());
        const auto adjusted = point_adjust(pred, truth);
        ASSERT_GE(evaluate(adjusted, truth).recall, evaluate(pred, truth).recall);
        for (std::size_t i = 0; i < n; ++i) {
            if (truth[i] == N) ASSERT_EQ(adjusted[i], pred[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// Thresholds
// ---------------------------------------------------------------------------

TEST(Percentile, LinearInterpolation) {
    std::vector<double> v(1000);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(999 - i);
    EXPECT_NEAR(percentile_linear(v, 99.0), 989.01, 1e-9);
    EXPECT_EQ(percentile_linear(v, 100.0), 999.0);
    EXPECT_EQ(percentile_linear(v, 0.0), 0.0);
    EXPECT_EQ(percentile_linear({4.0, 4.0, 4.0}, 99.0), 4.0);
    EXPECT_EQ(percentile_linear({7.0}, 50.0), 7.0);
    EXPECT_THROW(percentile_linear({}, 50.0), ValidationError);
    EXPECT_THROW(percentile_linear({1.0}, 101.0), ValidationError);
}

// ---------------------------------------------------------------------------
// Ensemble training
// ---------------------------------------------------------------------------

TEST(Ensemble, SkipsEmptyGroupsAndMatchesStandaloneFits) {
    const auto train = wave_series(120, 4, 1);
    const auto stats = NormStats::identity(4);
    const Partition p{{FeatureGroup{0, 1}, FeatureGroup{}, FeatureGroup{2, 3}}};
    const auto ens = train_ensemble(p, train, stats, tiny_model(), 2, 42);
    ASSERT_EQ(ens.submodels.size(), 2u);
    ASSERT_EQ(ens.log.size(), 1u);
    EXPECT_NE(ens.log[0].find("group 1"), std::string::npos);
    EXPECT_FALSE(ens.calibrated());

    for (std::size_t j = 0; j < 2; ++j) {
        const std::size_t position = j == 0 ? 0 : 2;
        const auto alone = fit_submodel(p.groups[position], train, stats, tiny_model(), 2,
                                        ensemble_submodel_seed(42, position));
        EXPECT_EQ(ens.submodels[j].group, p.groups[position]);
        EXPECT_EQ(nn::checkpoint_bytes(std::get<nn::Network<float>>(ens.submodels[j].model)),
                  nn::checkpoint_bytes(std::get<nn::Network<float>>(alone.model)));
    }
    EXPECT_EQ(ensemble_submodel_seed(42, 2), derive_seed(42, "ensemble", {2}));

    const auto parallel = train_ensemble(p, train, stats, tiny_model(), 2, 42, 2);
    for (std::size_t j = 0; j < 2; ++j) {
        EXPECT_EQ(nn::checkpoint_bytes(std::get<nn::Network<float>>(parallel.submodels[j].model)),
                  nn::checkpoint_bytes(std::get<nn::Network<float>>(ens.submodels[j].model)));
    }

    EXPECT_THROW(train_ensemble(Partition{{FeatureGroup{}, FeatureGroup{}}}, train, stats, tiny_model(), 1, 1),
                 ValidationError);
    EXPECT_THROW(train_ensemble(Partition{{FeatureGroup{4}}}, train, stats, tiny_model(), 1, 1), ValidationError);
}

TEST(Ensemble, SingleGroupEqualsMonolith) {
    const auto train = wave_series(100, 3, 2);
    const auto stats = NormStats::identity(3);
    const auto ens = train_ensemble(Partition{{FeatureGroup::all(3)}}, train, stats, tiny_model(), 2, 5);
    const auto mono = fit_submodel(FeatureGroup::all(3), train, stats, tiny_model(), 2, ensemble_submodel_seed(5, 0));
    ASSERT_EQ(ens.submodels.size(), 1u);
    EXPECT_EQ(ens.submodels[0].meta.loss_history, mono.meta.loss_history);
    const auto test = wave_series(60, 3, 3);
    EXPECT_EQ(score(ens.submodels[0], test), score(mono, test));
}

TEST(Ensemble, CalibrationBoundsValidationFalsePositives) {
    const auto raw = wave_series(900, 3, 4);
    const auto stats = fit_normalize(raw.slice(0, 600));
    const auto train = apply_normalize(raw.slice(0, 600), stats);
    const auto val = raw.slice(600, 900);
    const Partition p{{FeatureGroup{0, 1}, FeatureGroup{2}}};
    auto ens = train_ensemble(p, train, stats, tiny_model(), 3, 8);
    calibrate_thresholds(ens, val, 95.0);
    EXPECT_TRUE(ens.calibrated());
    const auto scores = ensemble_scores(ens, val);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        std::size_t above = 0;
        for (double s : scores[i]) above += s > *ens.submodels[i].threshold;
        EXPECT_LE(static_cast<double>(above) / static_cast<double>(scores[i].size()), 0.05 + 1e-12);
    }
    ens.rule = {VoteKind::quorum, 2};
    const auto labels = vote(ens, val);
    std::size_t flagged = 0;
    for (Label l : labels) flagged += l == A;
    EXPECT_LE(static_cast<double>(flagged) / static_cast<double>(labels.size()), 0.05 + 1e-12);

    EXPECT_THROW(calibrate_thresholds(ens, val, 50.0), ValidationError);
    EXPECT_THROW(calibrate_thresholds(ens, val.slice(0, 2), 99.0), ValidationError);
    auto labeled = val;
    labeled.labels = std::vector<Label>(static_cast<std::size_t>(val.n_points()), N);
    (*labeled.labels)[3] = A;
    EXPECT_THROW(calibrate_thresholds(ens, labeled, 99.0), ValidationError);
}
