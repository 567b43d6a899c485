// End-to-end acceptance gate. Prints one PASS/FAIL line per criterion and
// exits non-zero when any fails. Artifacts land in ./acceptance_out.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "fstta/config.hpp"
#include "fstta/fda.hpp"
#include "fstta/harness.hpp"
#include "fstta/ops.hpp"
#include "fstta/stream.hpp"
#include "generators.hpp"
#include "suites.hpp"

using namespace fstta;
namespace fs = std::filesystem;

namespace {

struct Clock {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

struct Gate {
    std::vector<std::string> failed;

    void record(const std::string& id, bool pass, const std::string& detail) {
        std::printf("%s  %-3s %s\n", pass ? "PASS" : "FAIL", id.c_str(), detail.c_str());
        std::fflush(stdout);
        if (!pass) failed.push_back(id);
    }
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double mean_of(const std::vector<double>& v) { return mean_std(v).mean; }

// ---- 1 ------------------------------------------------------------------------------

void gradient_suite(Gate& gate) {
    Clock clock;
    double worst = 0.0;
    std::string where = "-";
    std::size_t checks = 0;
    for (const auto& c : testing::gradient_cases()) {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const auto r = c.run(seed);
            ++checks;
            if (r.max_rel_error > worst) {
                worst = r.max_rel_error;
                where = c.name + " seed " + std::to_string(seed);
            }
        }
    }
    const double t = clock.seconds();
    gate.record("1", worst < 1e-4 && t < 60.0,
                fmt("gradient suite: %zu ops x 20 instances, max rel err %.2e (%s), %.1f s",
                    testing::gradient_cases().size(), worst, where.c_str(), t));
}

// ---- 2 ------------------------------------------------------------------------------

void oracle_suite(Gate& gate) {
    double worst = 0.0;
    std::string where = "-";
    for (const auto& c : testing::oracle_cases()) {
        for (std::uint64_t seed = 1; seed <= 200; ++seed) {
            const double e = c.run(seed);
            if (!(e <= worst)) {
                worst = e;
                where = c.name + " seed " + std::to_string(seed);
            }
        }
    }
    const std::size_t ties = testing::tie_mismatches();
    gate.record("2", worst < 1e-9 && ties == 0,
                fmt("equation oracles: %zu components x 200 instances, max abs err %.2e (%s), tie mismatches %zu",
                    testing::oracle_cases().size(), worst, where.c_str(), ties));
}

// ---- 3 ------------------------------------------------------------------------------

Backbone identity_head_model(std::uint64_t seed) {
    BackboneConfig cfg;
    cfg.widths = {4, 4, 3};
    cfg.num_classes = 3;
    Backbone m(cfg, seed);
    for (auto& p : m.parameters()) {
        if (p.group != ParamGroup::head) continue;
        p.var.mutable_value().fill(0.0);
        if (p.name == "head.weight")
            for (std::size_t i = 0; i < 3; ++i) p.var.mutable_value()[i * 3 + i] = 1.0;
    }
    return m;
}

PrototypeBank shifted_one_hot_bank(std::size_t shift, double beta) {
    Tensor protos({3, 3});
    for (std::size_t c = 0; c < 3; ++c) protos[c * 3 + (c + shift) % 3] = 1.0;
    return PrototypeBank::init(protos, std::vector<int>{0, 1, 2}, 3, beta);
}

void endpoint_identities(Gate& gate, const Prepared& prepared, const RunConfig& config) {
    testing::Gen g(301);
    std::vector<std::string> broken;

    // FDA with lambda = 1 returns the input up to the eps perturbation.
    double fda_err = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = g.size(2, 8);
        const auto x = g.tensor({n, g.size(1, 6), g.size(2, 6), g.size(2, 6)}, -3, 3);
        FdaPlan plan;
        plan.pairing = g.permutation(n);
        plan.lambdas.assign(n, 1.0);
        plan.active_sites = {0};
        plan.apply = true;
        const auto y = apply_fda(Var(x), plan, 1e-8).value();
        for (std::size_t i = 0; i < x.size(); ++i)
            fda_err = std::max(fda_err, std::abs(y[i] - x[i]) / std::max(std::abs(x[i]), 1.0));
    }
    if (!(fda_err <= 1e-6)) broken.push_back("fda");

    // EMA with beta = 1 is a fixed point, bitwise.
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t c = g.size(2, 10), d = g.size(1, 32), n = g.size(1, 64);
        std::vector<int> y(c);
        for (std::size_t i = 0; i < c; ++i) y[i] = static_cast<int>(i);
        auto bank = PrototypeBank::init(g.tensor({c, d}), y, c, 1.0);
        const Tensor before = bank.prototypes();
        bank.ema_update(g.tensor({n, d}), g.labels(n, c));
        if (!(bank.prototypes() == before)) {
            broken.push_back("ema");
            break;
        }
    }

    const auto split = split_support(prepared.bench.target, config.data.k, support_seed(0));
    const auto stream = make_stream(split.remainder, config.stage2.batch_size, stream_seed(0));

    // alpha = 0 leaves the model bitwise untouched over a whole stream.
    AdaptConfig zero = config.adapt_config();
    zero.alpha = 0.0;
    auto idle = FsTtaAdapter::from_support(prepared.source.model, split.support, zero);
    const auto idle_run = run_stream(idle, stream);
    if (!parameters_equal(idle.model(), prepared.source.model) || idle_run.updates != 0) broken.push_back("alpha0");

    // Every mask zero: no step.
    AdaptConfig all = config.adapt_config();
    all.alpha = 1.0;
    const Backbone probe = identity_head_model(5);
    FsTtaAdapter disagree(probe, shifted_one_hot_bank(1, 1.0), all);
    for (int b = 0; b < 10; ++b) {
        const auto out = disagree.adapt_batch(g.tensor({16, 3, 6, 6}, -2, 2));
        if (out.consistent != 0 || out.updated) broken.push_back("mask0-setup");
    }
    if (!parameters_equal(disagree.model(), probe)) broken.push_back("mask0");

    // source_only never changes parameters.
    const auto hash = prepared.source.model.parameter_hash();
    auto frozen = make_adapter(Method::source_only, prepared.source.model, nullptr, {}, {});
    run_stream(*frozen, stream);
    if (frozen->model().parameter_hash() != hash) broken.push_back("source_only");

    std::string detail = "endpoint identities: fda lambda=1 (max rel dev " + fmt("%.1e", fda_err) +
                         "), ema beta=1, alpha=0, all-masks-zero, source_only";
    for (const auto& b : broken) detail += " [broken: " + b + "]";
    gate.record("3", broken.empty(), detail);
}

// ---- 4 ------------------------------------------------------------------------------

void trends(Gate& gate, const Prepared& prepared, const RunConfig& config, const fs::path& out) {
    Clock clock;
    const auto report = run_all(config, all_methods(), prepared);
    write_text(out / "metrics.json", to_json(report).dump(2) + "\n");

    RunConfig one_shot = config;
    one_shot.data.k = 1;
    const std::vector<Method> pair{Method::ft_only, Method::entropy_min};
    const auto k1 = run_all(one_shot, pair, prepared);
    write_text(out / "metrics_k1.json", to_json(k1).dump(2) + "\n");
    const double total = prepared.source.seconds + clock.seconds();

    const double src = mean_of(report.source_accuracies());
    const double s1 = mean_of(report.stage1_accuracies());
    const double fs = mean_of(report.accuracies(Method::fs_tta));
    const double tent = mean_of(report.accuracies(Method::entropy_min));
    const double ft1 = mean_of(k1.accuracies(Method::ft_only));
    const double tent1 = mean_of(k1.accuracies(Method::entropy_min));

    std::printf("      default benchmark, %zu seeds, %.0f s including source training (%.0f s)\n",
                config.replicates.size(), total, prepared.source.seconds);
    for (Method m : all_methods()) {
        const auto ms = mean_std(report.accuracies(m));
        std::printf("      %-16s %6.2f +- %.2f\n", to_string(m).c_str(), 100 * ms.mean, 100 * ms.std);
    }
    const bool in_budget = total < 600.0;
    gate.record("4a", s1 - src >= 0.02 && in_budget,
                fmt("stage I %.2f vs source-only %.2f: %+.2f points (need >= +2)", 100 * s1, 100 * src,
                    100 * (s1 - src)));
    gate.record("4b", fs - s1 >= 0.005 && in_budget,
                fmt("fs_tta %.2f vs stage I %.2f: %+.2f points (need >= +0.5)", 100 * fs, 100 * s1, 100 * (fs - s1)));
    gate.record("4c", fs - tent >= 0.05 && in_budget,
                fmt("fs_tta %.2f vs entropy_min %.2f: %+.2f points (need >= +5)", 100 * fs, 100 * tent,
                    100 * (fs - tent)));
    gate.record("4d", ft1 > tent1 && in_budget,
                fmt("1-shot fine-tuning %.2f vs entropy_min %.2f: %+.2f points (need > 0)", 100 * ft1, 100 * tent1,
                    100 * (ft1 - tent1)));
    if (!in_budget) std::printf("      runtime %.0f s exceeds the 600 s budget\n", total);
}

// ---- 5 ------------------------------------------------------------------------------

void sweeps(Gate& gate, const Prepared& prepared, const RunConfig& config, const fs::path& out) {
    Clock clock;
    bool ok = true;
    std::string notes;
    for (auto axis : {SweepAxis::alpha, SweepAxis::kshot, SweepAxis::batch}) {
        const auto values = default_sweep_values(axis);
        const auto sweep = run_sweep(config, axis, values, prepared);
        const std::string stem = "sweep_" + to_string(axis);
        write_text(out / (stem + ".json"), to_json(sweep).dump(2) + "\n");
        write_text(out / (stem + ".csv"), sweep_csv(sweep));
        std::printf("%s", render_sweep(sweep).c_str());
        ok = ok && sweep.rows.size() == values.size() && fs::file_size(out / (stem + ".csv")) > 0;
        if (axis == SweepAxis::alpha) {
            const auto& zero = sweep.rows.front();
            if (zero.value != 0.0 || zero.accuracy != zero.stage1_acc) {
                ok = false;
                notes += " alpha=0 row differs from stage I;";
            }
            const double a3 = mean_of(sweep.rows[1].accuracy), a6 = mean_of(sweep.rows[2].accuracy);
            const double a10 = mean_of(sweep.rows[3].accuracy);
            const bool ordered = a3 >= a10 && a6 >= a10;
            notes += fmt(" alpha 0.3/0.6 >= 1.0 ordering %s (%.2f, %.2f vs %.2f);", ordered ? "holds" : "not reproduced",
                         100 * a3, 100 * a6, 100 * a10);
        }
    }
    gate.record("5", ok, fmt("ablation sweeps over alpha, k and batch written (%.0f s);", clock.seconds()) + notes);
}

// ---- 6 ------------------------------------------------------------------------------

void hygiene(Gate& gate, const Prepared& prepared, const RunConfig& config) {
    std::vector<std::string> broken;
    const auto split = split_support(prepared.bench.target, config.data.k, support_seed(0));
    const auto ft = finetune(prepared.source.model, split.support, config.finetune_config(0));
    const auto stream = make_stream(split.remainder, config.stage2.batch_size, stream_seed(0));

    auto clean = FsTtaAdapter::from_support(ft.model, split.support, config.adapt_config());
    const auto clean_run = run_stream(clean, stream);

    LabeledStream tainted = stream;
    testing::Gen g(601);
    for (auto& labels : tainted.hidden_labels)
        for (auto& y : labels) y = g.label(config.data.classes);
    auto dirty = FsTtaAdapter::from_support(ft.model, split.support, config.adapt_config());
    run_stream(dirty, tainted);
    if (!parameters_equal(clean.model(), dirty.model())) broken.push_back("label taint");

    LabeledStream prefix = stream;
    const std::size_t t = stream.batches.size() / 2;
    prefix.batches.resize(t);
    prefix.hidden_labels.resize(t);
    auto head = FsTtaAdapter::from_support(ft.model, split.support, config.adapt_config());
    const auto head_run = run_stream(head, prefix);
    if (!std::equal(head_run.predictions.begin(), head_run.predictions.end(), clean_run.predictions.begin()))
        broken.push_back("prefix replay");

    // Full run, data generation and source training included, twice from one master seed.
    RunConfig small = config;
    small.data.per_class = 40;
    small.data.heldout_per_class = 10;
    small.source.iterations = 150;
    small.finetune.epochs = 10;
    small.replicates = {0, 1};
    const auto a = run_all(small, all_methods(), prepare(small));
    const auto b = run_all(small, all_methods(), prepare(small));
    for (Method m : all_methods())
        if (a.accuracies(m) != b.accuracies(m)) broken.push_back("determinism " + to_string(m));
    for (std::size_t r = 0; r < a.replicates.size(); ++r)
        for (std::size_t i = 0; i < a.replicates[r].runs.size(); ++i)
            if (a.replicates[r].runs[i].metrics.predictions != b.replicates[r].runs[i].metrics.predictions)
                broken.push_back("determinism predictions");

    std::string detail = "hygiene: label taint, prefix replay (" + std::to_string(t) + " of " +
                         std::to_string(stream.batches.size()) + " batches), full-run determinism";
    for (const auto& x : broken) detail += " [broken: " + x + "]";
    gate.record("6", broken.empty(), detail);
}

}  // namespace

int main() {
    Clock clock;
    Gate gate;
    const fs::path out = "acceptance_out";
    fs::create_directories(out);

    gradient_suite(gate);
    oracle_suite(gate);

    const RunConfig config = default_config();
    const Prepared prepared = prepare(config);
    std::printf("      source model trained in %.0f s, held-out in-domain accuracy %.2f\n", prepared.source.seconds,
                100 * prepared.source.in_domain_acc);

    endpoint_identities(gate, prepared, config);
    trends(gate, prepared, config, out);
    sweeps(gate, prepared, config, out);
    hygiene(gate, prepared, config);

    std::printf("acceptance: %zu failing (%.0f s total)", gate.failed.size(), clock.seconds());
    for (const auto& id : gate.failed) std::printf(" %s", id.c_str());
    std::printf("\n");
    return gate.failed.empty() ? 0 : 1;
}
