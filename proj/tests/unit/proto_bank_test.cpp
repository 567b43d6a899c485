#include <gtest/gtest.h>

#include <cmath>

#include "fstta/errors.hpp"
#include "fstta/ops.hpp"
#include "fstta/proto_bank.hpp"
#include "generators.hpp"
#include "oracles.hpp"

namespace fstta {
namespace {

using testing::Gen;

Tensor rows(std::size_t n, std::size_t d, std::vector<double> v) { return Tensor({n, d}, std::move(v)); }

TEST(PrototypeBank, InitTakesClassMeans) {
    const std::vector<int> y{0, 1, 1};
    const auto bank = PrototypeBank::init(rows(3, 2, {5, 5, 1, 0, 3, 2}), y, 2, 0.9);
    EXPECT_EQ(bank.prototypes().storage(), (std::vector<double>{5, 5, 2, 1}));
    EXPECT_EQ(bank.time_step(), 0u);
}

TEST(PrototypeBank, InitWithOneShotCopiesTheSupport) {
    const std::vector<int> y{1, 0};
    const auto bank = PrototypeBank::init(rows(2, 3, {1, 2, 3, 4, 5, 6}), y, 2, 0.9);
    EXPECT_EQ(bank.prototypes().storage(), (std::vector<double>{4, 5, 6, 1, 2, 3}));
}

TEST(PrototypeBank, InitIsOrderInvariantAndMatchesTheOracle) {
    Gen g(21);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t classes = g.size(2, 5), d = g.size(1, 6), k = g.size(1, 4), n = classes * k;
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % classes);
        const auto emb = g.tensor({n, d}, -3, 3);
        const auto perm = g.permutation(n);
        std::vector<int> y_perm(n);
        for (std::size_t i = 0; i < n; ++i) y_perm[i] = y[perm[i]];
        const auto a = PrototypeBank::init(emb, y, classes, 0.9);
        const auto b = PrototypeBank::init(emb.gather_rows(perm), y_perm, classes, 0.9);
        const auto want = oracle::class_means(emb.storage(), n, d, y, classes);
        for (std::size_t i = 0; i < want.size(); ++i) {
            EXPECT_NEAR(a.prototypes()[i], want[i], 1e-12);
            EXPECT_NEAR(b.prototypes()[i], want[i], 1e-12);
        }
    }
}

TEST(PrototypeBank, MissingClassIsNamed) {
    const std::vector<int> y{0, 0, 2};
    try {
        PrototypeBank::init(rows(3, 1, {1, 2, 3}), y, 3, 0.9);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
    }
}

TEST(PrototypeBank, EmaEndpointsAndExample) {
    const std::vector<int> y{0, 1};
    const auto init = rows(2, 2, {1, 0, 0, 1});
    const std::vector<int> pl{0};
    const auto batch = rows(1, 2, {0, 1});

    auto frozen = PrototypeBank::init(init, y, 2, 1.0);
    frozen.ema_update(batch, pl);
    EXPECT_EQ(frozen.prototypes(), init);
    EXPECT_EQ(frozen.time_step(), 1u);

    auto jump = PrototypeBank::init(init, y, 2, 0.0);
    jump.ema_update(batch, pl);
    EXPECT_EQ(jump.prototypes().storage(), (std::vector<double>{0, 1, 0, 1}));

    auto mid = PrototypeBank::init(init, y, 2, 0.9);
    mid.ema_update(batch, pl);
    EXPECT_NEAR(mid.prototype(0)[0], 0.9, 1e-15);
    EXPECT_NEAR(mid.prototype(0)[1], 0.1, 1e-15);
    EXPECT_EQ(mid.update_counts(), (std::vector<std::size_t>{1, 0}));
}

TEST(PrototypeBank, EmptyUpdateOnlyAdvancesTime) {
    const std::vector<int> y{0, 1};
    auto bank = PrototypeBank::init(rows(2, 1, {1, 2}), y, 2, 0.9);
    bank.ema_update(Tensor({0, 1}), std::vector<int>{});
    EXPECT_EQ(bank.prototypes().storage(), (std::vector<double>{1, 2}));
    EXPECT_EQ(bank.time_step(), 1u);
}

TEST(PrototypeBank, BadPseudoLabelIsRejected) {
    const std::vector<int> y{0, 1};
    auto bank = PrototypeBank::init(rows(2, 1, {1, 2}), y, 2, 0.9);
    EXPECT_THROW(bank.ema_update(rows(1, 1, {0}), std::vector<int>{2}), ConfigError);
    EXPECT_THROW(bank.ema_update(rows(1, 2, {0, 0}), std::vector<int>{0}), ShapeError);
}

TEST(PrototypeBank, EmaTelescopesGeometrically) {
    Gen g(22);
    for (int trial = 0; trial < 10; ++trial) {
        const double beta = g.uniform(0.5, 0.95);
        const std::size_t d = g.size(1, 5);
        const auto m0 = g.tensor({2, d});
        const auto v = g.tensor({1, d});
        auto bank = PrototypeBank::init(m0, std::vector<int>{0, 1}, 2, beta);
        auto dist = [&] {
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) s += std::pow(bank.prototype(0)[i] - v[i], 2);
            return std::sqrt(s);
        };
        const double d0 = dist();
        for (int n = 1; n <= 30; ++n) {
            bank.ema_update(v, std::vector<int>{0});
            EXPECT_NEAR(dist(), d0 * std::pow(beta, n), 1e-12);
        }
        // Class 1 never appeared: bitwise unchanged.
        for (std::size_t i = 0; i < d; ++i) EXPECT_EQ(bank.prototype(1)[i], m0[d + i]);
    }
}

TEST(PrototypeBank, EmaMatchesTheOracle) {
    Gen g(23);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t classes = g.size(2, 5), d = g.size(1, 5), n = g.size(0, 8);
        std::vector<int> init_y(classes);
        for (std::size_t c = 0; c < classes; ++c) init_y[c] = static_cast<int>(c);
        auto bank = PrototypeBank::init(g.tensor({classes, d}), init_y, classes, g.uniform(0, 1));
        const auto before = bank.prototypes();
        const auto feats = g.tensor({n, d});
        const auto pl = g.labels(n, classes);
        bank.ema_update(feats, pl);
        const auto want = oracle::ema(before.storage(), classes, d, feats.storage(), pl, bank.ema_beta());
        for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(bank.prototypes()[i], want[i], 1e-12);
    }
}

TEST(PrototypeBank, ClassifyExamples) {
    const auto bank = PrototypeBank::init(rows(2, 2, {1, 0, 0, 1}), std::vector<int>{0, 1}, 2, 0.9);
    const auto p = bank.classify(std::vector<double>{1, 0}, 1.0);
    EXPECT_NEAR(p[0], std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-12);
    EXPECT_NEAR(p[0], 0.7311, 1e-4);
    EXPECT_NEAR(p[1], 0.2689, 1e-4);
    const auto u = bank.classify(std::vector<double>{1, 1}, 1.0);
    EXPECT_DOUBLE_EQ(u[0], u[1]);
    EXPECT_THROW(bank.classify(std::vector<double>{1, 1}, 0.0), ConfigError);
}

TEST(PrototypeBank, ZeroFeatureIsDegenerateButDefined) {
    const auto bank = PrototypeBank::init(rows(2, 2, {1, 0, 0, 1}), std::vector<int>{0, 1}, 2, 0.9);
    const auto p = bank.classify(std::vector<double>{0, 0}, 1.0);
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_GT(bank.degenerate_similarities(), 0u);
}

TEST(PrototypeBank, ArgmaxIgnoresTemperatureAndScale) {
    Gen g(24);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t classes = g.size(2, 6), d = g.size(2, 6);
        std::vector<int> y(classes);
        for (std::size_t c = 0; c < classes; ++c) y[c] = static_cast<int>(c);
        const auto bank = PrototypeBank::init(g.nonzero({classes, d}), y, classes, 0.9);
        const auto f = g.nonzero({d});
        std::vector<double> scaled(f.storage());
        const double s = g.uniform(0.01, 100.0);
        for (auto& v : scaled) v *= s;
        const auto base = bank.classify(f.storage(), 1.0);
        const auto want = argmax(base);
        EXPECT_EQ(argmax(bank.classify(f.storage(), g.uniform(0.05, 20.0))), want);
        const auto p_scaled = bank.classify(scaled, 1.0);
        EXPECT_EQ(argmax(p_scaled), want);
        for (std::size_t c = 0; c < classes; ++c) EXPECT_NEAR(p_scaled[c], base[c], 1e-12);
        double total = 0.0;
        for (double v : base) total += v;
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(PrototypeBank, BatchClassifyMatchesRows) {
    Gen g(25);
    const auto bank = PrototypeBank::init(g.tensor({3, 4}), std::vector<int>{0, 1, 2}, 3, 0.9);
    const auto f = g.tensor({5, 4});
    const auto p = bank.classify_batch(f, 0.5);
    for (std::size_t i = 0; i < 5; ++i) {
        const auto row = bank.classify(std::span<const double>(f.storage()).subspan(i * 4, 4), 0.5);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(p[i * 3 + c], row[c]);
    }
    EXPECT_THROW(bank.classify_batch(g.tensor({1, 3}), 1.0), ShapeError);
}

TEST(PrototypeBank, JsonSnapshot) {
    auto bank = PrototypeBank::init(rows(2, 1, {1, 2}), std::vector<int>{0, 1}, 2, 0.9);
    bank.ema_update(rows(1, 1, {0}), std::vector<int>{1});
    const auto j = bank.to_json();
    EXPECT_EQ(j["time_step"], 1);
    EXPECT_EQ(j["update_counts"], (std::vector<std::size_t>{0, 1}));
}

}  // namespace
}  // namespace fstta
