#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fstta/autograd.hpp"
#include "fstta/random.hpp"

namespace fstta {

/// Feature diversity augmentation settings.
struct FdaConfig {
    bool enabled = true;
    double alpha_beta = 0.1;  ///< lambda ~ Beta(a, a)
    double p_apply = 0.5;
    std::vector<std::size_t> sites{0, 1};
    double eps = 1e-8;          ///< added to the variance before the square root
    bool detach_mixed = false;  ///< stop gradients through the partner's statistics
};

/// How one batch is mixed at its active hook sites.
struct FdaPlan {
    std::vector<std::size_t> pairing;  ///< partner j = pairing[i], a permutation
    std::vector<double> lambdas;       ///< per-sample mixing ratio in [0, 1]
    std::vector<std::size_t> active_sites;
    bool apply = false;

    bool active_at(std::size_t site) const;
    /// Throws ConfigError when the pairing is not a bijection or a lambda is outside [0, 1].
    void validate(std::size_t batch_size) const;
};

/// Mixed statistics for one channel set: returns (beta_mix, gamma_mix).
std::pair<std::vector<double>, std::vector<double>> mix_stats(std::span<const double> mu_i,
                                                              std::span<const double> sigma_i,
                                                              std::span<const double> mu_j,
                                                              std::span<const double> sigma_j, double lambda);

/// Uniform random pairing, lambda_i ~ Beta(a, a), apply with probability p_apply.
/// A batch smaller than 2 yields a plan with apply = false.
FdaPlan make_plan(std::size_t batch_size, Rng& rng, const FdaConfig& config,
                  std::vector<std::size_t> sites);

/// One plan per configured site, drawn independently.
std::vector<FdaPlan> make_plans(std::size_t batch_size, Rng& rng, const FdaConfig& config);

/// f' = gamma_mix * (f - mu_i) / sqrt(sigma_i^2 + eps) + beta_mix on an N x C x H x W map.
Var apply_fda(const Var& features, const FdaPlan& plan, double eps, bool detach_mixed = false);

}  // namespace fstta
