#include "fstta/optim.hpp"

#include <cmath>

#include "fstta/errors.hpp"

namespace fstta {

Adam::Adam(std::vector<Var> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    if (!(config_.lr > 0.0)) throw ConfigError("adam: lr must be positive");
    for (const auto& p : params_) {
        first_.emplace_back(p.shape());
        second_.emplace_back(p.shape());
    }
}

bool Adam::step() {
    for (const auto& p : params_) {
        if (p.has_grad() && !p.node()->grad.all_finite()) {
            ++skipped_;
            return false;
        }
    }
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double correction1 = 1.0 - std::pow(config_.beta1, t);
    const double correction2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) continue;  // zero gradient: moments decay, update is zero
        const Tensor& g = params_[i].node()->grad;
        Tensor& value = params_[i].mutable_value();
        Tensor& m = first_[i];
        Tensor& v = second_[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            value[j] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
    return true;
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace fstta
