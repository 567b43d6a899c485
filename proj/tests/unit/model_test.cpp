#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "fstta/errors.hpp"
#include "fstta/model.hpp"
#include "fstta/ops.hpp"
#include "fstta/optim.hpp"
#include "generators.hpp"

namespace fstta {
namespace {

namespace fs = std::filesystem;
using testing::Gen;

BackboneConfig small() {
    BackboneConfig c;
    c.widths = {4, 6, 5};
    c.num_classes = 3;
    return c;
}

TEST(Backbone, OutputShapes) {
    Backbone m(small(), 1);
    Gen g(1);
    const auto out = m.infer(g.tensor({7, 3, 6, 5}));
    EXPECT_EQ(out.embedding.shape(), (Shape{7, 5}));
    EXPECT_EQ(out.logits.shape(), (Shape{7, 3}));
    EXPECT_EQ(m.hook_sites(), 2u);
    EXPECT_THROW(m.infer(g.tensor({2, 2, 6, 6})), ShapeError);
    EXPECT_THROW(m.infer(g.tensor({2, 3, 6})), ShapeError);
}

TEST(Backbone, ZeroHeadGivesUniformPredictions) {
    Backbone m(small(), 2);
    for (auto& p : m.parameters())
        if (p.group == ParamGroup::head) p.var.mutable_value().fill(0.0);
    Gen g(2);
    const auto p = softmax_rows(m.infer(g.tensor({4, 3, 5, 5})).logits.value());
    for (double v : p.storage()) EXPECT_DOUBLE_EQ(v, 1.0 / 3);
}

TEST(Backbone, EvalForwardIsPure) {
    Backbone m(small(), 3);
    Gen g(3);
    const auto x = g.tensor({3, 3, 6, 6});
    const auto hash = m.parameter_hash();
    const auto a = m.infer(x), b = m.infer(x);
    EXPECT_EQ(a.logits.value(), b.logits.value());
    EXPECT_EQ(a.embedding.value(), b.embedding.value());
    EXPECT_EQ(hash, m.parameter_hash());
}

TEST(Backbone, ParameterGroupsPartitionTheParameters) {
    Backbone m(small(), 4);
    std::set<const Node*> seen;
    std::size_t total = 0;
    for (auto group : {ParamGroup::conv, ParamGroup::norm_affine, ParamGroup::head}) {
        const ParamGroup one[] = {group};
        for (const auto& v : m.parameters(one)) {
            EXPECT_TRUE(seen.insert(v.node().get()).second);
            ++total;
        }
    }
    EXPECT_EQ(total, m.parameters().size());
    EXPECT_EQ(param_group_from_string(to_string(ParamGroup::norm_affine)), ParamGroup::norm_affine);
    EXPECT_THROW(param_group_from_string("bogus"), ConfigError);
}

TEST(Backbone, UpdatingNormAffineOnlyChangesGammaAndBeta) {
    Backbone m(small(), 5);
    const Backbone before = m;
    const ParamGroup groups[] = {ParamGroup::norm_affine};
    Adam adam(m.parameters(groups), {.lr = 0.01});
    Gen g(5);
    const auto x = g.tensor({4, 3, 5, 5});
    const std::vector<int> y{0, 1, 2, 1};
    for (int i = 0; i < 3; ++i) {
        m.zero_grad();
        mean(cross_entropy(m.forward(x, {.mode = Mode::train}).logits, y)).backward();
        adam.step();
    }
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
        const auto& p = m.parameters()[i];
        const bool same = p.var.value() == before.parameters()[i].var.value();
        EXPECT_EQ(same, p.group != ParamGroup::norm_affine) << p.name;
    }
}

TEST(Backbone, CopiesAreIndependent) {
    Backbone a(small(), 6);
    Backbone b = a;
    EXPECT_TRUE(parameters_equal(a, b));
    b.parameters()[0].var.mutable_value()[0] += 1.0;
    EXPECT_FALSE(parameters_equal(a, b));
}

TEST(Backbone, PoolingAConstantMapGivesTheConstant) {
    const auto e = global_avg_pool(Var(Tensor({1, 2, 3, 3}, 4.5))).value();
    EXPECT_EQ(e.storage(), (std::vector<double>{4.5, 4.5}));
}

TEST(TrainSource, SeparableToySetIsLearnedDeterministically) {
    // Two classes that differ only in the sign of channel 0.
    auto make = [](std::uint64_t seed) {
        Dataset d;
        d.channels = 1;
        d.height = d.width = 4;
        d.num_classes = 2;
        Gen g(seed);
        for (int i = 0; i < 40; ++i) {
            const int y = i % 2;
            Tensor px = g.tensor({1, 4, 4}, -0.2, 0.2);
            for (std::size_t j = 0; j < 8; ++j) px[j] += y ? 1.0 : -1.0;
            d.records.push_back({y, std::move(px), 0});
        }
        return d;
    };
    const std::vector<Dataset> sources{make(1)};
    BackboneConfig cfg;
    cfg.in_channels = 1;
    cfg.widths = {4, 4, 4};
    cfg.num_classes = 2;
    SourceTrainConfig tc{.iterations = 150, .batch_per_domain = 8, .lr = 1e-2, .seed = 3};
    Backbone a(cfg, 7), b(cfg, 7);
    const auto log = train_source(a, sources, tc);
    train_source(b, sources, tc);
    EXPECT_TRUE(parameters_equal(a, b));
    EXPECT_FALSE(log.empty());
    EXPECT_GE(eval_accuracy(a, sources[0]), 0.99);
}

TEST(EvalAccuracy, RejectsAnEmptySet) {
    Backbone m(small(), 1);
    Dataset empty;
    empty.num_classes = 3;
    EXPECT_THROW(eval_accuracy(m, empty), DataError);
}

TEST(ModelFile, RoundTripIsBitExact) {
    Backbone m(small(), 8);
    m.embedding_running_mean()[1] = 0.25;
    const auto path = fs::temp_directory_path() / "fstta_model_rt.ttam";
    save_model(path, m);
    const auto back = load_model(path);
    EXPECT_EQ(back.config(), m.config());
    EXPECT_TRUE(parameters_equal(back, m));
    EXPECT_EQ(back.parameter_hash(), m.parameter_hash());
    Gen g(8);
    const auto x = g.tensor({2, 3, 5, 5});
    EXPECT_EQ(back.infer(x).logits.value(), m.infer(x).logits.value());
    fs::remove(path);
}

TEST(ModelFile, CorruptFilesRaiseStructuredErrors) {
    Backbone m(small(), 9);
    const auto path = fs::temp_directory_path() / "fstta_model_bad.ttam";
    save_model(path, m);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    EXPECT_THROW(load_model(path), DataError);
    std::ofstream(path, std::ios::binary) << "TTAX" << bytes.substr(4);
    EXPECT_THROW(load_model(path), DataError);
    fs::remove(path);
}

TEST(ModelFile, MismatchedArchitectureNamesTheParameter) {
    Backbone m(small(), 10);
    const auto path = fs::temp_directory_path() / "fstta_model_arch.ttam";
    save_model(path, m);
    auto cfg = small();
    cfg.widths = {4, 7, 5};
    Backbone other(cfg, 1);
    try {
        load_model_into(path, other);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("block2.conv.weight"), std::string::npos) << e.what();
    }
    fs::remove(path);
}

}  // namespace
}  // namespace fstta
