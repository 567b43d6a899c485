#include <gtest/gtest.h>

#include "suites.hpp"

namespace fstta::testing {
namespace {

class Gradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(Gradients, MatchFiniteDifferences) {
    const auto& c = gradient_cases().at(GetParam());
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto r = c.run(seed);
        EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " seed " << seed << " at " << r.worst;
    }
}

INSTANTIATE_TEST_SUITE_P(AllOps, Gradients, ::testing::Range<std::size_t>(0, gradient_cases().size()),
                         [](const auto& info) { return gradient_cases()[info.param].name; });

class Oracles : public ::testing::TestWithParam<std::size_t> {};

TEST_P(Oracles, AgreeWithBruteForce) {
    const auto& c = oracle_cases().at(GetParam());
    for (std::uint64_t seed = 1; seed <= 25; ++seed) EXPECT_LT(c.run(seed), 1e-9) << c.name << " seed " << seed;
}

INSTANTIATE_TEST_SUITE_P(AllComponents, Oracles, ::testing::Range<std::size_t>(0, oracle_cases().size()),
                         [](const auto& info) { return oracle_cases()[info.param].name; });

TEST(Ties, ExhaustiveEnumerationHasNoMismatch) { EXPECT_EQ(tie_mismatches(), 0u); }

}  // namespace
}  // namespace fstta::testing
