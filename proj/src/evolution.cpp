#include "evoad/evolution.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "evoad/error.hpp"
#include "evoad/parallel.hpp"

namespace evoad {

void EvolutionConfig::validate() const {
    if (k < 1) throw ValidationError("k must be at least 1");
    if (!(p_m >= 0.0 && p_m <= 1.0)) throw ValidationError("p_m must lie in [0, 1]");
    if (generations < 1) throw ValidationError("generations must be at least 1");
    if (population < 1) throw ValidationError("population size must be at least 1");
    if (parents < 1) throw ValidationError("number of parents must be at least 1");
    if (parents > population) {
        throw ValidationError("number of parents (" + std::to_string(parents) + ") exceeds the population size (" +
                              std::to_string(population) + ")");
    }
    if (fitness_epochs < 1) throw ValidationError("fitness epochs must be at least 1");
    if (!std::isfinite(penalty_empty) || penalty_empty < 0.0) throw ValidationError("penalty_empty must be >= 0");
    if (!(init_reassign_prob >= 0.0 && init_reassign_prob <= 1.0)) {
        throw ValidationError("init_reassign_prob must lie in [0, 1]");
    }
    if (jobs < 1) throw ValidationError("jobs must be at least 1");
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

RowMatrix correlation_matrix(const TimeSeries& ts) {
    const Index n = ts.n_features();
    if (ts.n_points() < 1) throw ValidationError("cannot correlate an empty series");
    const Eigen::MatrixXd centered = ts.values.rowwise() - ts.values.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered;
    RowMatrix corr = RowMatrix::Identity(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double denom = std::sqrt(cov(i, i) * cov(j, j));
            corr(i, j) = denom > 0.0 ? std::clamp(cov(i, j) / denom, -1.0, 1.0) : 0.0;
        }
    }
    return corr;
}

Partition cluster_features(const RowMatrix& corr, std::size_t k) {
    const auto n = static_cast<std::size_t>(corr.rows());
    if (corr.cols() != corr.rows()) throw ValidationError("correlation matrix must be square");
    if (k < 1 || k > n) {
        throw ValidationError("cannot cut " + std::to_string(n) + " features into " + std::to_string(k) + " clusters");
    }
    std::vector<std::vector<FeatureIndex>> clusters(n);
    for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            dist[i][j] = 1.0 - std::abs(corr(static_cast<Index>(i), static_cast<Index>(j)));
        }
    }

    while (clusters.size() > k) {
        std::size_t bi = 0;
        std::size_t bj = 1;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                if (dist[i][j] < best) {
                    best = dist[i][j];
                    bi = i;
                    bj = j;
                }
            }
        }
        // Lance-Williams update for average linkage.
        const auto ni = static_cast<double>(clusters[bi].size());
        const auto nj = static_cast<double>(clusters[bj].size());
        for (std::size_t c = 0; c < clusters.size(); ++c) {
            if (c == bi || c == bj) continue;
            const double d = (ni * dist[bi][c] + nj * dist[bj][c]) / (ni + nj);
            dist[bi][c] = dist[c][bi] = d;
        }
        clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
        dist.erase(dist.begin() + static_cast<std::ptrdiff_t>(bj));
        for (auto& row : dist) row.erase(row.begin() + static_cast<std::ptrdiff_t>(bj));
    }

    Partition p;
    for (auto& c : clusters) p.groups.emplace_back(std::move(c));
    std::sort(p.groups.begin(), p.groups.end(),
              [](const FeatureGroup& a, const FeatureGroup& b) { return a.front() < b.front(); });
    return p;
}

std::vector<Partition> init_population(const TimeSeries& train, const EvolutionConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(train.n_features());
    if (n < cfg.k) {
        throw ValidationError("need at least k = " + std::to_string(cfg.k) + " features, got " + std::to_string(n));
    }
    const Partition base = cluster_features(correlation_matrix(train), cfg.k);
    std::vector<std::size_t> owner(n);
    for (std::size_t g = 0; g < base.k(); ++g) {
        for (FeatureIndex f : base.groups[g]) owner[f] = g;
    }

    Rng rng(derive_seed(cfg.seed, "init_population"));
    std::vector<Partition> population{base};
    for (std::size_t m = 1; m < cfg.population; ++m) {
        Partition p;
        p.groups.resize(cfg.k);
        for (std::size_t f = 0; f < n; ++f) {
            const std::size_t g = rng.bernoulli(cfg.init_reassign_prob) ? rng.index(cfg.k) : owner[f];
            p.groups[g].insert(f);
        }
        population.push_back(std::move(p));
    }
    return population;
}

// ---------------------------------------------------------------------------
// Fitness
// ---------------------------------------------------------------------------

double combine_group_loss(double loss_train, double loss_val, Index n_train, Index n_val, std::size_t group_size) {
    if (group_size == 0) throw ValidationError("group loss of an empty group");
    if (n_train < 0 || n_val < 0 || n_train + n_val == 0) throw ValidationError("train/val lengths must be positive");
    const auto total = static_cast<double>(n_train + n_val);
    const double weighted =
        static_cast<double>(n_train) / total * loss_train + static_cast<double>(n_val) / total * loss_val;
    return weighted / static_cast<double>(group_size);
}

double fitness(const Partition& solution, const GroupLossFn& group_loss, Index n_train, Index n_val,
               double penalty_empty) {
    std::vector<double> terms;
    terms.reserve(solution.k());
    for (const auto& g : solution.groups) {
        if (g.empty()) {
            terms.push_back(penalty_empty);
            continue;
        }
        const GroupLoss loss = group_loss(g);
        terms.push_back(loss.failed ? penalty_empty
                                    : combine_group_loss(loss.train, loss.val, n_train, n_val, g.size()));
    }
    std::sort(terms.begin(), terms.end());
    double sum = 0.0;
    for (double t : terms) sum += t;
    return -sum;
}

FitnessEvaluator::FitnessEvaluator(TimeSeries train, TimeSeries val, const EvolutionConfig& cfg)
    : train_(std::move(train)), val_(std::move(val)), cfg_(cfg),
      stats_(NormStats::identity(static_cast<std::size_t>(train_.n_features()))) {
    cfg_.validate();
    if (train_.n_features() != val_.n_features()) throw ValidationError("train and val have different features");
}

std::uint64_t FitnessEvaluator::group_seed(const FeatureGroup& group) const {
    const std::vector<std::uint64_t> idx(group.begin(), group.end());
    return derive_seed(cfg_.seed, "fitness", idx);
}

GroupLoss FitnessEvaluator::compute(const FeatureGroup& group) const {
    GroupLoss out;
    try {
        const auto sub = fit_submodel(group, train_, stats_, cfg_.model, cfg_.fitness_epochs, group_seed(group));
        out.train = mean_reconstruction_loss(sub, train_);
        out.val = mean_reconstruction_loss(sub, val_);
        if (!std::isfinite(out.train) || !std::isfinite(out.val)) {
            out.failed = true;
            out.message = "group " + group.to_string() + ": non-finite reconstruction loss";
        }
    } catch (const TrainingDiverged& e) {
        out.failed = true;
        out.message = "group " + group.to_string() + ": " + e.what();
    }
    return out;
}

GroupLoss FitnessEvaluator::group_loss(const FeatureGroup& group) {
    {
        std::lock_guard lock(mutex_);
        if (auto it = cache_.find(group); it != cache_.end()) return it->second;
    }
    GroupLoss loss = compute(group);
    std::lock_guard lock(mutex_);
    ++trained_;
    return cache_.emplace(group, std::move(loss)).first->second;
}

std::vector<double> FitnessEvaluator::evaluate(const std::vector<Partition>& population) {
    std::set<FeatureGroup> pending;
    for (const auto& p : population) {
        for (const auto& g : p.groups) {
            if (!g.empty() && !cache_.contains(g)) pending.insert(g);
        }
    }
    const std::vector<FeatureGroup> todo(pending.begin(), pending.end());
    std::vector<GroupLoss> results(todo.size());
    parallel_for(todo.size(), cfg_.jobs, [&](std::size_t i) { results[i] = compute(todo[i]); });

    events_.clear();
    for (std::size_t i = 0; i < todo.size(); ++i) {
        if (results[i].failed) events_.push_back(results[i].message);
        cache_.emplace(todo[i], std::move(results[i]));
    }
    trained_ += todo.size();

    std::vector<double> out;
    out.reserve(population.size());
    const GroupLossFn lookup = [this](const FeatureGroup& g) { return cache_.at(g); };
    for (const auto& p : population) {
        out.push_back(fitness(p, lookup, train_.n_points(), val_.n_points(), cfg_.penalty_empty));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

std::vector<std::size_t> select_parents(const std::vector<double>& fitnesses, std::size_t n_parents) {
    if (n_parents > fitnesses.size()) throw ValidationError("more parents requested than solutions available");
    std::vector<std::size_t> order(fitnesses.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fitnesses[a] > fitnesses[b]; });
    order.resize(n_parents);
    return order;
}

FeatureGroup crossover_group(const FeatureGroup& g1, const FeatureGroup& g2, FeatureIndex split) {
    std::vector<FeatureIndex> child;
    for (FeatureIndex f : g1) {
        if (f < split) child.push_back(f);
    }
    for (FeatureIndex f : g2) {
        if (f > split) child.push_back(f);
    }
    return FeatureGroup(std::move(child));
}

Partition crossover(const Partition& a, const Partition& b, Rng& rng) {
    if (a.k() != b.k()) throw ValidationError("crossover parents have different k");
    Partition child;
    child.groups.reserve(a.k());
    for (std::size_t i = 0; i < a.k(); ++i) {
        const auto& g1 = a.groups[i];
        const auto& g2 = b.groups[i];
        if (g1.empty() && g2.empty()) {
            child.groups.emplace_back();
            continue;
        }
        FeatureIndex lo = std::numeric_limits<FeatureIndex>::max();
        FeatureIndex hi = 0;
        for (const auto* g : {&g1, &g2}) {
            if (g->empty()) continue;
            lo = std::min(lo, g->front());
            hi = std::max(hi, g->back());
        }
        const auto split = static_cast<FeatureIndex>(
            rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
        child.groups.push_back(crossover_group(g1, g2, split));
    }
    return child;
}

Partition mutate_move(const Partition& s, double p_m, Rng& rng) {
    Partition out = s;
    const std::size_t k = out.k();
    for (std::size_t i = 0; i < k; ++i) {
        if (!rng.bernoulli(p_m)) continue;
        const auto& source = out.groups[i];
        if (source.empty()) continue;
        const FeatureIndex f = source[rng.index(source.size())];
        out.groups[(i + 1) % k].insert(f);
    }
    return out;
}

Partition mutate_vanish(const Partition& s, Rng& rng) {
    std::map<FeatureIndex, std::vector<std::size_t>> holders;
    for (std::size_t g = 0; g < s.k(); ++g) {
        for (FeatureIndex f : s.groups[g]) holders[f].push_back(g);
    }
    Partition out = s;
    for (const auto& [f, groups] : holders) {
        const std::size_t count = groups.size();
        if (count == 1) continue;
        bool kept = false;
        for (std::size_t j = 0; j < count; ++j) {
            const std::size_t remaining = count - j;
            bool keep = false;
            if (!kept) keep = remaining == 1 || rng.bernoulli(1.0 / static_cast<double>(remaining));
            if (keep) {
                kept = true;
            } else {
                out.groups[groups[j]].erase(f);
            }
        }
    }
    return out;
}

Partition mutate_new_features(const Partition& s, const FeatureGroup& feature_space, Rng& rng) {
    std::vector<FeatureIndex> missing;
    for (FeatureIndex f : feature_space) {
        if (!s.contains(f)) missing.push_back(f);
    }
    Partition out = s;
    const double inv_k = 1.0 / static_cast<double>(s.k());
    for (FeatureIndex f : missing) {
        for (auto& g : out.groups) {
            if (rng.uniform() > inv_k) g.insert(f);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Generational loop
// ---------------------------------------------------------------------------

EvolutionResult evolve(std::vector<Partition> population, std::size_t n_features, const PopulationFitnessFn& fitness_fn,
                       const EvolutionConfig& cfg, const GenerationCallback& on_generation) {
    cfg.validate();
    if (population.size() != cfg.population) {
        throw ValidationError("initial population has " + std::to_string(population.size()) + " members, expected " +
                              std::to_string(cfg.population));
    }
    for (const auto& p : population) p.validate(cfg.k, n_features);

    Rng rng(derive_seed(cfg.seed, "evolution"));
    const FeatureGroup feature_space = FeatureGroup::all(n_features);
    EvolutionResult result;
    result.best_fitness = -std::numeric_limits<double>::infinity();

    for (Index gen = 0; gen < cfg.generations; ++gen) {
        const auto start = std::chrono::steady_clock::now();
        auto evaluated = fitness_fn(population);
        if (evaluated.fitness.size() != population.size()) {
            throw RuntimeFailure("fitness function returned the wrong number of values");
        }

        GenerationLog log;
        log.generation = gen;
        log.population = population;
        log.fitness = evaluated.fitness;
        log.events = std::move(evaluated.events);
        const auto best_it = std::max_element(log.fitness.begin(), log.fitness.end());
        const auto best_idx = static_cast<std::size_t>(best_it - log.fitness.begin());
        log.best = population[best_idx];
        log.best_fitness = *best_it;
        if (gen == 0) {
            result.base = population.front();
            result.base_fitness = log.fitness.front();
        }
        if (log.best_fitness > result.best_fitness) {
            result.best = log.best;
            result.best_fitness = log.best_fitness;
            result.best_generation = gen;
        }
        log.best_so_far = result.best_fitness;

        if (gen + 1 < cfg.generations) {
            const auto parents = select_parents(log.fitness, cfg.parents);
            std::vector<Partition> next;
            next.reserve(cfg.population);
            for (std::size_t p : parents) next.push_back(population[p]);
            while (next.size() < cfg.population) {
                std::size_t a = rng.index(parents.size());
                std::size_t b = a;
                if (parents.size() > 1) {
                    b = rng.index(parents.size() - 1);
                    if (b >= a) ++b;
                }
                Partition child = crossover(population[parents[a]], population[parents[b]], rng);
                child = mutate_move(child, cfg.p_m, rng);
                child = mutate_vanish(child, rng);
                child = mutate_new_features(child, feature_space, rng);
                next.push_back(std::move(child));
            }
            population = std::move(next);
        }

        log.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.history.push_back(std::move(log));
        if (on_generation) on_generation(result.history);
    }
    return result;
}

EvolutionResult evolve(const TimeSeries& train, const TimeSeries& val, const EvolutionConfig& cfg,
                       const GenerationCallback& on_generation) {
    cfg.validate();
    FitnessEvaluator evaluator(train, val, cfg);
    auto fitness_fn = [&](const std::vector<Partition>& population) {
        PopulationFitness out;
        out.fitness = evaluator.evaluate(population);
        out.events = evaluator.events();
        return out;
    };
    return evolve(init_population(train, cfg), static_cast<std::size_t>(train.n_features()), fitness_fn, cfg,
                  on_generation);
}

}  // namespace evoad
