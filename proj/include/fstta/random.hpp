#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fstta {

/// Seeded 64-bit generator with the handful of draws the library needs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform();  ///< [0, 1)
    double normal(double mean = 0.0, double stddev = 1.0);
    std::size_t below(std::size_t n);  ///< uniform integer in [0, n)
    double beta(double a, double b);
    std::vector<std::size_t> permutation(std::size_t n);

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Named sub-seed from a master seed (splitmix64 over the master and an FNV-1a hash of the name).
std::uint64_t derive_seed(std::uint64_t master, std::string_view name);

/// FNV-1a 64-bit hash.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace fstta
