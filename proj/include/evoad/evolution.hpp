#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "evoad/autoencoders.hpp"
#include "evoad/dataset.hpp"
#include "evoad/feature_group.hpp"
#include "evoad/random.hpp"

namespace evoad {

struct EvolutionConfig {
    std::size_t k = 3;
    double p_m = 0.1;
    Index generations = 10;     // N_g
    std::size_t population = 8; // N_P
    std::size_t parents = 4;    // N_par
    Index fitness_epochs = 5;   // N_ep
    ModelConfig model;
    double penalty_empty = 10.0;
    double init_reassign_prob = 0.1;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

// Pearson correlation; a zero-variance feature has correlation 0 with every
// other feature (and 1 with itself).
RowMatrix correlation_matrix(const TimeSeries& ts);

// Average-linkage agglomerative clustering on 1 - |corr|, stopped at k
// clusters. Closest pair first, ties to the lexicographically smallest pair of
// cluster positions. Groups are ordered by their smallest feature.
Partition cluster_features(const RowMatrix& corr, std::size_t k);

// Member 0 is the clustering itself; every other member moves each feature to
// a uniformly random group with probability cfg.init_reassign_prob.
std::vector<Partition> init_population(const TimeSeries& train, const EvolutionConfig& cfg);

// ---------------------------------------------------------------------------
// Fitness
// ---------------------------------------------------------------------------

struct GroupLoss {
    double train = 0.0;
    double val = 0.0;
    bool failed = false;  // training diverged; the group is charged the penalty
    std::string message;
};

// Length-weighted train/val loss divided by the group size.
double combine_group_loss(double loss_train, double loss_val, Index n_train, Index n_val, std::size_t group_size);

using GroupLossFn = std::function<GroupLoss(const FeatureGroup&)>;

// -sum of per-group losses; empty or failed groups contribute penalty_empty.
// Contributions are summed in ascending order so the result does not depend
// on group order.
double fitness(const Partition& solution, const GroupLossFn& group_loss, Index n_train, Index n_val,
               double penalty_empty);

// Trains one model per distinct group and memoizes the result. The model seed
// is derived from the group's feature indices, so a group gets the same loss
// wherever and whenever it appears.
class FitnessEvaluator {
public:
    FitnessEvaluator(TimeSeries train, TimeSeries val, const EvolutionConfig& cfg);

    GroupLoss group_loss(const FeatureGroup& group);
    std::vector<double> evaluate(const std::vector<Partition>& population);

    std::uint64_t group_seed(const FeatureGroup& group) const;
    std::size_t models_trained() const { return trained_; }
    // Failure messages from groups trained by the last evaluate() call.
    const std::vector<std::string>& events() const { return events_; }

private:
    GroupLoss compute(const FeatureGroup& group) const;

    TimeSeries train_;
    TimeSeries val_;
    EvolutionConfig cfg_;
    NormStats stats_;
    std::map<FeatureGroup, GroupLoss> cache_;
    std::mutex mutex_;
    std::size_t trained_ = 0;
    std::vector<std::string> events_;
};

// ---------------------------------------------------------------------------
// Genetic operators
// ---------------------------------------------------------------------------

// Indices of the n_parents fittest solutions, best first; ties go to the lower index.
std::vector<std::size_t> select_parents(const std::vector<double>& fitnesses, std::size_t n_parents);

// Per group pair: split drawn from [min, max] of the union; child keeps
// features of g1 below the split and features of g2 above it.
Partition crossover(const Partition& a, const Partition& b, Rng& rng);
FeatureGroup crossover_group(const FeatureGroup& g1, const FeatureGroup& g2, FeatureIndex split);

// For each group i with probability p_m, copies a random feature of group i
// into group (i + 1) mod k. Groups are visited in order and see earlier copies.
Partition mutate_move(const Partition& s, double p_m, Rng& rng);

// A feature held by c groups loses each copy with probability 1 - 1/c, with c
// counted before any removal. Exactly one copy survives, chosen uniformly.
Partition mutate_vanish(const Partition& s, Rng& rng);

// Every feature of feature_space missing from all groups is added to each
// group with probability 1 - 1/k.
Partition mutate_new_features(const Partition& s, const FeatureGroup& feature_space, Rng& rng);

// ---------------------------------------------------------------------------
// Generational loop
// ---------------------------------------------------------------------------

struct GenerationLog {
    Index generation = 0;
    std::vector<Partition> population;
    std::vector<double> fitness;
    Partition best;             // best of this generation
    double best_fitness = 0.0;
    double best_so_far = 0.0;
    double duration_seconds = 0.0;
    std::vector<std::string> events;
};

struct EvolutionResult {
    Partition best;
    double best_fitness = 0.0;
    Index best_generation = 0;
    Partition base;  // the unperturbed clustering
    double base_fitness = 0.0;
    std::vector<GenerationLog> history;
};

using GenerationCallback = std::function<void(const std::vector<GenerationLog>&)>;

// train and val must be normalized with the same statistics.
EvolutionResult evolve(const TimeSeries& train, const TimeSeries& val, const EvolutionConfig& cfg,
                       const GenerationCallback& on_generation = {});

struct PopulationFitness {
    std::vector<double> fitness;
    std::vector<std::string> events;
};

// Same loop with any fitness function over a whole population.
using PopulationFitnessFn = std::function<PopulationFitness(const std::vector<Partition>&)>;
EvolutionResult evolve(std::vector<Partition> initial, std::size_t n_features, const PopulationFitnessFn& fitness,
                       const EvolutionConfig& cfg, const GenerationCallback& on_generation = {});

}  // namespace evoad
