#include "fstta/fda.hpp"

#include <algorithm>

#include "fstta/errors.hpp"
#include "fstta/ops.hpp"

namespace fstta {

bool FdaPlan::active_at(std::size_t site) const {
    return apply && std::find(active_sites.begin(), active_sites.end(), site) != active_sites.end();
}

void FdaPlan::validate(std::size_t batch_size) const {
    if (pairing.size() != batch_size || lambdas.size() != batch_size) {
        throw ConfigError("fda plan sized for " + std::to_string(pairing.size()) + " samples, batch has " +
                          std::to_string(batch_size));
    }
    std::vector<bool> seen(batch_size, false);
    for (std::size_t j : pairing) {
        if (j >= batch_size || seen[j]) throw ConfigError("fda plan pairing is not a permutation");
        seen[j] = true;
    }
    for (double l : lambdas)
        if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("fda lambda " + std::to_string(l) + " outside [0, 1]");
}

std::pair<std::vector<double>, std::vector<double>> mix_stats(std::span<const double> mu_i,
                                                              std::span<const double> sigma_i,
                                                              std::span<const double> mu_j,
                                                              std::span<const double> sigma_j, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("mix_stats: lambda " + std::to_string(lambda) + " outside [0, 1]");
    const std::size_t c = mu_i.size();
    if (sigma_i.size() != c || mu_j.size() != c || sigma_j.size() != c) throw ShapeError("mix_stats: channel count mismatch");
    std::vector<double> beta(c), gamma(c);
    for (std::size_t k = 0; k < c; ++k) {
        gamma[k] = lambda * sigma_i[k] + (1.0 - lambda) * sigma_j[k];
        beta[k] = lambda * mu_i[k] + (1.0 - lambda) * mu_j[k];
    }
    return {std::move(beta), std::move(gamma)};
}

FdaPlan make_plan(std::size_t batch_size, Rng& rng, const FdaConfig& config, std::vector<std::size_t> sites) {
    FdaPlan plan;
    plan.active_sites = std::move(sites);
    plan.pairing.resize(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) plan.pairing[i] = i;
    plan.lambdas.assign(batch_size, 1.0);
    if (batch_size < 2 || !config.enabled) return plan;
    plan.apply = rng.uniform() < config.p_apply;
    plan.pairing = rng.permutation(batch_size);
    for (auto& l : plan.lambdas) l = rng.beta(config.alpha_beta, config.alpha_beta);
    return plan;
}

std::vector<FdaPlan> make_plans(std::size_t batch_size, Rng& rng, const FdaConfig& config) {
    std::vector<FdaPlan> plans;
    for (std::size_t site : config.sites) plans.push_back(make_plan(batch_size, rng, config, {site}));
    return plans;
}

Var apply_fda(const Var& features, const FdaPlan& plan, double eps, bool detach_mixed) {
    const std::size_t n = features.shape().at(0);
    plan.validate(n);
    auto stats = channel_stats(features);
    Var mu_src = detach_mixed ? detach(stats.mu) : stats.mu;
    Var sigma_src = detach_mixed ? detach(stats.sigma) : stats.sigma;
    Var mu_j = gather_rows(mu_src, plan.pairing);
    Var sigma_j = gather_rows(sigma_src, plan.pairing);
    Tensor lambdas({n}, plan.lambdas);
    Var gamma_mix = lerp_rows(stats.sigma, sigma_j, lambdas);
    Var beta_mix = lerp_rows(stats.mu, mu_j, lambdas);
    return instance_affine(instance_standardize(features, eps), gamma_mix, beta_mix);
}

}  // namespace fstta
