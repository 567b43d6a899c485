#pragma once

// Checks shared by the unit tests and the acceptance binary. Each case runs
// one random instance per seed and reports its worst error.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fstta/gradcheck.hpp"

namespace fstta::testing {

struct GradCase {
    std::string name;
    std::function<GradCheckReport(std::uint64_t seed)> run;
};

/// Every differentiable op plus the support-set loss (with augmentation) and
/// the masked online loss, both through a small backbone.
const std::vector<GradCase>& gradient_cases();

struct OracleCase {
    std::string name;
    /// Max absolute deviation from the brute-force oracle on one random instance.
    std::function<double(std::uint64_t seed)> run;
};

/// Random-instance comparisons against tests/support/oracles.
const std::vector<OracleCase>& oracle_cases();

/// Exhaustive tie enumerations for argmax, the entropy filter and the mask.
/// Returns the number of mismatching cases (0 means pass).
std::size_t tie_mismatches();

}  // namespace fstta::testing
