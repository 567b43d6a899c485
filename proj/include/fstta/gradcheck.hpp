#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fstta/autograd.hpp"

namespace fstta {

struct GradCheckOptions {
    double step = 1e-5;
    /// Entries checked per parameter tensor; 0 checks every entry.
    std::size_t max_entries = 0;
    std::uint64_t seed = 0;
    /// Denominator floor for the relative error, so exact zeros do not divide.
    double floor = 1e-6;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t entries = 0;
    std::string worst;  ///< "param[i]" of the worst entry

    bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Compares the analytic gradient of a scalar function against central
/// differences for every (or a sampled subset of) parameter entry.
/// `fn` must rebuild the graph from the current parameter values on each call.
GradCheckReport finite_diff_check(const std::function<Var()>& fn, std::vector<Var> params,
                                  GradCheckOptions options = {});

}  // namespace fstta
