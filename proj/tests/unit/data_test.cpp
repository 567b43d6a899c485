#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fstta/data.hpp"
#include "fstta/errors.hpp"
#include "fstta/ops.hpp"

namespace fstta {
namespace {

namespace fs = std::filesystem;

DomainSpec style(std::vector<double> gain, std::vector<double> bias, double noise, std::uint64_t seed = 1) {
    return {0, std::move(gain), std::move(bias), noise, seed};
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("fstta_data_" + name); }

TEST(GenDomain, IdentityStyleReproducesTemplates) {
    const auto templates = make_templates(4, 3, 8, 11);
    const auto d = gen_domain(4, 3, style({1, 1, 1}, {0, 0, 0}, 0.0), 8, 11);
    ASSERT_EQ(d.size(), 12u);
    for (const auto& r : d.records) EXPECT_EQ(r.pixels, templates[static_cast<std::size_t>(r.label)]);
}

TEST(GenDomain, ChannelStatisticsFollowTheAffineStyle) {
    const std::vector<double> gain{0.5, 2.0, 1.3}, bias{0.4, -1.0, 0.0};
    const auto templates = make_templates(5, 3, 10, 4);
    const auto d = gen_domain(5, 2, style(gain, bias, 0.0), 10, 4);
    for (const auto& r : d.records) {
        const Shape s{1, 3, 10, 10};
        auto [mu, sigma] = channel_stats(r.pixels.reshaped(s));
        auto [tmu, tsigma] = channel_stats(templates[static_cast<std::size_t>(r.label)].reshaped(s));
        for (std::size_t c = 0; c < 3; ++c) {
            EXPECT_NEAR(mu[c], gain[c] * tmu[c] + bias[c], 1e-12);
            EXPECT_NEAR(sigma[c], gain[c] * tsigma[c], 1e-12);
        }
    }
}

TEST(GenDomain, TwoStylesDifferByTheirAffineMap) {
    const auto a = gen_domain(3, 2, style({1, 1, 1}, {0, 0, 0}, 0.0), 8, 5);
    const auto b = gen_domain(3, 2, style({2, 0.5, 3}, {1, -1, 0.25}, 0.0), 8, 5);
    const double g[3] = {2, 0.5, 3}, o[3] = {1, -1, 0.25};
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.records[i].pixels.size(); ++j) {
            const std::size_t c = j / 64;
            EXPECT_NEAR(b.records[i].pixels[j], g[c] * a.records[i].pixels[j] + o[c], 1e-12);
        }
}

TEST(GenDomain, NearestTemplateIsPerfectWithoutNoise) {
    const auto templates = make_templates(6, 3, 16, 21);
    const auto d = gen_domain(6, 4, style({1.7, 0.6, 1.1}, {0.3, 0.2, -0.5}, 0.0), 16, 21);
    for (const auto& r : d.records) {
        // Compare after per-channel standardization, which removes the style.
        auto standardize = [](const Tensor& t) { return instance_standardize(Var(t.reshaped({1, 3, 16, 16})), 0.0).value(); };
        const auto x = standardize(r.pixels);
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t c = 0; c < templates.size(); ++c) {
            const auto t = standardize(templates[c]);
            double dist = 0;
            for (std::size_t j = 0; j < x.size(); ++j) dist += (x[j] - t[j]) * (x[j] - t[j]);
            if (dist < best_d) best_d = dist, best = c;
        }
        EXPECT_EQ(static_cast<int>(best), r.label);
    }
}

TEST(GenDomain, IsAPureFunctionOfSpecAndSeeds) {
    const auto s = style({1.1, 0.9, 1}, {0, 0.1, 0}, 0.3, 77);
    const auto a = gen_domain(3, 4, s, 8, 9), b = gen_domain(3, 4, s, 8, 9);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.records[i].pixels, b.records[i].pixels);
    auto other = s;
    other.seed = 78;
    EXPECT_NE(gen_domain(3, 4, other, 8, 9).records[0].pixels, a.records[0].pixels);
}

TEST(GenDomain, RejectsInvalidSpecs) {
    EXPECT_THROW(gen_domain(1, 2, style({1, 1, 1}, {0, 0, 0}, 0), 8, 1), ConfigError);
    EXPECT_THROW(gen_domain(3, 2, style({1, 1, 1}, {0, 0, 0}, 0), 3, 1), ConfigError);
    EXPECT_THROW(gen_domain(3, 2, style({1, 0, 1}, {0, 0, 0}, 0), 8, 1), ConfigError);
    EXPECT_THROW(gen_domain(3, 2, style({1, 1, 1}, {0, 0, 0}, -0.1), 8, 1), ConfigError);
    EXPECT_THROW(gen_domain(3, 2, style({1, 1}, {0, 0}, 0), 8, 1), ConfigError);
}

Dataset small_target() { return gen_domain(6, 8, style({1, 1, 1}, {0, 0, 0}, 0.2), 6, 3); }

TEST(SplitSupport, CountsAndDisjointness) {
    const auto target = small_target();
    const auto one = split_support(target, 1, 5);
    EXPECT_EQ(one.support.size(), 6u);
    const auto five = split_support(target, 5, 5);
    EXPECT_EQ(five.support.size(), 30u);
    EXPECT_EQ(five.remainder.size(), target.size() - 30);
    std::vector<int> per_class(6, 0);
    for (const auto& r : five.support.records) ++per_class[static_cast<std::size_t>(r.label)];
    for (int n : per_class) EXPECT_EQ(n, 5);

    std::set<std::vector<double>> support_px;
    for (const auto& r : five.support.records) support_px.insert(r.pixels.storage());
    for (const auto& r : five.remainder.records) EXPECT_FALSE(support_px.count(r.pixels.storage()));
}

TEST(SplitSupport, SameSeedSameSplit) {
    const auto target = small_target();
    const auto a = split_support(target, 3, 9), b = split_support(target, 3, 9);
    for (std::size_t i = 0; i < a.support.size(); ++i) EXPECT_EQ(a.support.records[i].pixels, b.support.records[i].pixels);
    const auto c = split_support(target, 3, 10);
    bool differs = false;
    for (std::size_t i = 0; i < a.support.size(); ++i) differs = differs || a.support.records[i].pixels != c.support.records[i].pixels;
    EXPECT_TRUE(differs);
}

TEST(SplitSupport, NamesTheShortClass) {
    auto target = small_target();
    std::erase_if(target.records, [n = 0](const SampleRecord& r) mutable { return r.label == 4 && n++ < 6; });
    try {
        split_support(target, 3, 1);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("class 4"), std::string::npos) << e.what();
    }
}

TEST(DatasetFile, RoundTripIsExactAtFloat32) {
    auto d = gen_domain(4, 3, style({1, 1, 1}, {0, 0, 0}, 0.3), 6, 2);
    d.domain_id = 3;
    for (auto& r : d.records)
        for (auto& v : r.pixels.storage()) v = static_cast<double>(static_cast<float>(v));
    const auto path = temp_file("roundtrip.ttad");
    write_dataset(path, d);
    const auto back = read_dataset(path);
    ASSERT_EQ(back.size(), 12u);
    EXPECT_EQ(back.domain_id, 3);
    EXPECT_EQ(back.num_classes, 4u);
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_EQ(back.records[i].label, d.records[i].label);
        EXPECT_EQ(back.records[i].pixels, d.records[i].pixels);
    }
    fs::remove(path);
}

TEST(DatasetFile, EmptyDatasetIsAccepted) {
    Dataset d;
    d.height = d.width = 4;
    d.num_classes = 2;
    const auto path = temp_file("empty.ttad");
    write_dataset(path, d);
    EXPECT_EQ(read_dataset(path).size(), 0u);
    fs::remove(path);
}

DataError::Kind read_error(const fs::path& path) {
    try {
        read_dataset(path);
    } catch (const DataError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error reading " << path;
    return DataError::Kind::io;
}

TEST(DatasetFile, DistinctErrorsForBadFiles) {
    const auto d = gen_domain(2, 2, style({1, 1, 1}, {0, 0, 0}, 0.1), 4, 2);
    const auto good = temp_file("good.ttad");
    write_dataset(good, d);
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    auto write = [](const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; };
    const auto truncated = temp_file("truncated.ttad"), magic = temp_file("magic.ttad"), version = temp_file("version.ttad");
    write(truncated, bytes.substr(0, bytes.size() - 7));
    write(magic, "XXXX" + bytes.substr(4));
    std::string v = bytes;
    v[4] = 9;
    write(version, v);

    EXPECT_EQ(read_error(truncated), DataError::Kind::truncated);
    EXPECT_EQ(read_error(magic), DataError::Kind::bad_magic);
    EXPECT_EQ(read_error(version), DataError::Kind::version_mismatch);
    EXPECT_EQ(read_error(temp_file("missing.ttad")), DataError::Kind::io);
    for (const auto& p : {good, truncated, magic, version}) fs::remove(p);
}

}  // namespace
}  // namespace fstta
