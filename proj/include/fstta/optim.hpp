#pragma once

#include <cstddef>
#include <vector>

#include "fstta/autograd.hpp"

namespace fstta {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of parameters.
class Adam {
public:
    Adam(std::vector<Var> params, AdamConfig config);

    /// Applies one update from the parameters' accumulated gradients.
    /// If any gradient is non-finite the whole step is skipped and false is returned.
    bool step();
    void zero_grad();

    const AdamConfig& config() const noexcept { return config_; }
    void set_lr(double lr) noexcept { config_.lr = lr; }
    std::size_t step_count() const noexcept { return step_count_; }
    std::size_t skipped_steps() const noexcept { return skipped_; }
    const std::vector<Var>& params() const noexcept { return params_; }
    const Tensor& first_moment(std::size_t i) const { return first_[i]; }
    const Tensor& second_moment(std::size_t i) const { return second_[i]; }

private:
    std::vector<Var> params_;
    std::vector<Tensor> first_;
    std::vector<Tensor> second_;
    AdamConfig config_;
    std::size_t step_count_ = 0;
    std::size_t skipped_ = 0;
};

}  // namespace fstta
