#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>

namespace evoad {

// Seeded RNG with distribution helpers that produce the same streams on every
// standard library (the std:: distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], both inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(n) - 1)); }

    double normal();

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent stream seed from the master seed, a component name
// and a list of indices. Every seed used anywhere in a run is produced here:
//
//   h = splitmix64(master)
//   h = splitmix64(h ^ byte)   for each byte of component
//   h = splitmix64(h ^ index)  for each index
std::uint64_t derive_seed(std::uint64_t master, std::string_view component,
                          std::span<const std::uint64_t> indices = {});

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view component,
                                 std::initializer_list<std::uint64_t> indices) {
    return derive_seed(master, component, std::span<const std::uint64_t>(indices.begin(), indices.size()));
}

}  // namespace evoad
