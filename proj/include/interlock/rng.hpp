#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace interlock {

// Derives a sub-seed from a root seed and a role string ("init", "batches",
// "data", parameter ids, ...). Every source of randomness in a run is seeded
// through this, so runs are reproducible component by component.
// FNV-1a over the role bytes folded into the root, then a splitmix64 finalizer.
std::uint64_t derive_seed(std::uint64_t root, std::string_view role);

// Deterministic RNG with portable value mappings. std::mt19937_64 has a
// standard-specified output sequence; the distributions below are hand-rolled
// so streams are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; generates pairs, caches the spare.
    double normal();

    // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    int uniform_int(int n);

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace interlock
