#include "fstta/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fstta/random.hpp"

namespace fstta {

GradCheckReport finite_diff_check(const std::function<Var()>& fn, std::vector<Var> params,
                                  GradCheckOptions options) {
    for (auto& p : params) p.zero_grad();
    fn().backward();
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p.grad());

    GradCheckReport report;
    Rng rng(options.seed);
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& value = params[k].mutable_value();
        std::vector<std::size_t> entries(value.size());
        std::iota(entries.begin(), entries.end(), std::size_t{0});
        if (options.max_entries && entries.size() > options.max_entries) {
            entries = rng.permutation(value.size());
            entries.resize(options.max_entries);
        }
        for (std::size_t j : entries) {
            const double original = value[j];
            value[j] = original + options.step;
            const double plus = fn().value().item();
            value[j] = original - options.step;
            const double minus = fn().value().item();
            value[j] = original;
            const double numeric = (plus - minus) / (2.0 * options.step);
            const double a = analytic[k][j];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
            ++report.entries;
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (rel >= report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = "param" + std::to_string(k) + "[" + std::to_string(j) + "]";
            }
        }
    }
    return report;
}

}  // namespace fstta
