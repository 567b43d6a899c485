// Command-line front end: data generation, training, adaptation, sweeps and reports.
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fstta/config.hpp"
#include "fstta/errors.hpp"
#include "fstta/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fstta;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;

    RunConfig load() const {
        RunConfig c = config_path.empty() ? default_config() : load_config(config_path);
        if (seed) c.seed = *seed;
        return c;
    }
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("--config", common.config_path, "JSON run configuration (defaults when omitted)");
    cmd->add_option("--seed", common.seed, "run seed (data, init)");
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw DataError(DataError::Kind::io, std::string(what) + " not found: " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

// ---- gen-data ---------------------------------------------------------------------

struct GenData {
    Common common;
    std::string out = "data";
    std::uint64_t replicate = 0;
};

int gen_data(const GenData& o) {
    const RunConfig config = o.common.load();
    config.validate();
    const auto bench = make_benchmark(config);
    fs::create_directories(o.out);
    const fs::path dir(o.out);

    json manifest;
    manifest["config_hash"] = config_hash(config);
    manifest["config"] = to_json(config);
    manifest["template_seed"] = template_seed(config);
    json domains = json::array();
    std::vector<fs::path> written;
    auto emit = [&](const std::string& name, const Dataset& d, const std::string& role, std::uint64_t seed) {
        const auto path = dir / (name + ".ttad");
        write_dataset(path, d);
        written.push_back(path);
        domains.push_back({{"name", name},
                           {"file", path.filename().string()},
                           {"role", role},
                           {"domain_id", d.domain_id},
                           {"count", d.size()},
                           {"seed", seed},
                           {"hash", file_hash(path)}});
    };
    const auto specs = source_specs(config);
    for (std::size_t i = 0; i < bench.sources.size(); ++i) {
        emit("source" + std::to_string(i), bench.sources[i], "source", specs[i].seed);
        emit("heldout" + std::to_string(i), bench.heldout[i], "heldout", derive_seed(specs[i].seed, "heldout"));
    }
    emit("target", bench.target, "target", target_spec(config).seed);
    const auto split = split_support(bench.target, config.data.k, support_seed(o.replicate));
    emit("target_support", split.support, "support", support_seed(o.replicate));
    emit("target_stream", split.remainder, "stream", support_seed(o.replicate));
    manifest["domains"] = domains;
    manifest["k"] = config.data.k;
    manifest["replicate"] = o.replicate;
    write_json(dir / "manifest.json", manifest);
    for (const auto& p : written) write_sidecar(p, config, {});
    std::cout << "wrote " << written.size() << " dataset files to " << dir.string() << '\n';
    return 0;
}

// ---- train-source ------------------------------------------------------------------

struct TrainSource {
    Common common;
    std::string data = "data";
    std::string out = "source.ttam";
    std::string trace;
    std::optional<std::size_t> iterations;
};

int train_source_cmd(const TrainSource& o) {
    RunConfig config = o.common.load();
    if (o.iterations) config.source.iterations = *o.iterations;
    config.validate();
    const fs::path dir(o.data);
    const auto manifest_path = dir / "manifest.json";
    require_file(manifest_path, "manifest");
    json manifest;
    try {
        std::ifstream(manifest_path) >> manifest;
    } catch (const json::exception& e) {
        throw DataError(DataError::Kind::invalid_content, manifest_path.string() + ": " + e.what());
    }
    Benchmark bench;
    std::vector<fs::path> inputs;
    for (const auto& d : manifest.at("domains")) {
        const auto role = d.at("role").get<std::string>();
        const auto path = dir / d.at("file").get<std::string>();
        if (role != "source" && role != "heldout") continue;
        require_file(path, "dataset");
        inputs.push_back(path);
        (role == "source" ? bench.sources : bench.heldout).push_back(read_dataset(path));
    }
    if (bench.sources.empty()) throw DataError(DataError::Kind::invalid_content, "manifest lists no source domains");
    for (const auto& s : bench.sources)
        if (s.num_classes != config.model.num_classes || s.channels != config.model.in_channels)
            throw DataError(DataError::Kind::invalid_content, "source data does not match the model configuration");

    auto result = train_source_model(config, bench);
    save_model(o.out, result.model);
    write_sidecar(o.out, config, inputs);
    if (!o.trace.empty()) {
        std::string csv = "iteration,loss,batch_accuracy\n";
        for (const auto& p : result.trace)
            csv += std::to_string(p.iteration) + "," + std::to_string(p.loss) + "," + std::to_string(p.batch_accuracy) + "\n";
        write_text(o.trace, csv);
    }
    std::printf("source model: held-out in-domain accuracy %.4f (%.1f s)\n", result.in_domain_acc, result.seconds);
    return 0;
}

// ---- finetune ------------------------------------------------------------------------

struct Finetune {
    Common common;
    std::string model, support, out = "stage1.ttam", trace;
    std::uint64_t replicate = 0;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
};

int finetune_cmd(const Finetune& o) {
    RunConfig config = o.common.load();
    if (o.epochs) config.finetune.epochs = *o.epochs;
    if (o.lr) config.finetune.lr = *o.lr;
    config.validate();
    require_file(o.model, "model");
    require_file(o.support, "support set");
    const auto model = load_model(o.model);
    const auto support = read_dataset(o.support);
    auto result = finetune(model, support, config.finetune_config(o.replicate));
    save_model(o.out, result.model);
    const std::vector<fs::path> inputs{o.model, o.support};
    write_sidecar(o.out, config, inputs);
    const std::string trace = o.trace.empty() ? o.out + ".loss.csv" : o.trace;
    write_text(trace, finetune_csv(result.trace));
    if (!result.trace.empty())
        std::printf("fine-tuned %zu epochs: support loss %.5f, support accuracy %.4f\n", result.trace.size(),
                    result.trace.back().loss, result.trace.back().support_acc);
    return 0;
}

// ---- adapt ----------------------------------------------------------------------------

struct Adapt {
    Common common;
    std::string model, support, stream, method = "fs_tta", out = "metrics.json", curve;
    std::optional<double> alpha, ema_beta, lr;
    std::optional<std::size_t> batch;
    std::uint64_t replicate = 0;
};

int adapt_cmd(const Adapt& o) {
    RunConfig config = o.common.load();
    config.method = method_from_string(o.method);
    if (o.alpha) config.stage2.alpha = *o.alpha;
    if (o.ema_beta) config.stage2.ema_beta = *o.ema_beta;
    if (o.lr) config.stage2.lr = config.tent.lr = *o.lr;
    if (o.batch) config.stage2.batch_size = *o.batch;
    config.replicates = {o.replicate};
    config.validate();

    require_file(o.model, "model");
    require_file(o.stream, "stream");
    const auto model = load_model(o.model);
    const auto stream_data = read_dataset(o.stream);
    std::optional<Dataset> support;
    std::vector<fs::path> inputs{o.model, o.stream};
    if (!o.support.empty()) {
        require_file(o.support, "support set");
        support = read_dataset(o.support);
        inputs.emplace_back(o.support);
    }
    if (config.method == Method::fs_tta && !support) throw ConfigError("--support is required for fs_tta");
    if (stream_data.num_classes != model.config().num_classes)
        throw DataError(DataError::Kind::invalid_content, o.stream + ": class count does not match the model");

    const auto stream = make_stream(stream_data, config.stage2.batch_size, stream_seed(o.replicate),
                                    config.stage2.class_sorted ? StreamOrder::class_sorted : StreamOrder::shuffled);
    const auto before = model.parameter_hash();
    auto adapter = make_adapter(config.method, model, support ? &*support : nullptr, config.adapt_config(),
                                config.tent_config());
    const auto metrics = run_stream(*adapter, stream);

    json j;
    j["schema"] = kMetricsSchema;
    j["kind"] = "adapt";
    j["config"] = to_json(config);
    j["config_hash"] = config_hash(config);
    j["num_classes"] = stream_data.num_classes;
    j["rows"] = json::array({{{"method", to_string(config.method)},
                              {"accuracy_mean", metrics.final_accuracy},
                              {"accuracy_std", 0.0},
                              {"accuracies", {metrics.final_accuracy}}}});
    j["updates"] = metrics.updates;
    j["skipped_updates"] = metrics.skipped_updates;
    j["parameters_changed"] = adapter->model().parameter_hash() != before;
    write_json(o.out, j);
    write_sidecar(o.out, config, inputs);
    write_text(o.curve.empty() ? o.out + ".batches.csv" : o.curve, batches_csv(metrics));
    std::printf("%s: online accuracy %.4f over %zu samples (%zu updates)\n", to_string(config.method).c_str(),
                metrics.final_accuracy, metrics.total, metrics.updates);
    return 0;
}

// ---- sweep / run-all -------------------------------------------------------------------

struct Sweep {
    Common common;
    std::string axis = "alpha", out = "sweep", method;
    std::vector<double> values;
};

int sweep_cmd(const Sweep& o) {
    RunConfig config = o.common.load();
    if (!o.method.empty()) config.method = method_from_string(o.method);
    config.validate();
    const auto axis = sweep_axis_from_string(o.axis);
    const auto values = o.values.empty() ? default_sweep_values(axis) : o.values;
    const auto prepared = prepare(config);
    const auto report = run_sweep(config, axis, values, prepared);
    std::cout << render_sweep(report);
    write_json(o.out + ".json", to_json(report));
    write_text(o.out + ".csv", sweep_csv(report));
    return 0;
}

struct RunAll {
    Common common;
    std::string out = "run";
    std::vector<std::string> methods;
};

int run_all_cmd(const RunAll& o) {
    const RunConfig config = o.common.load();
    config.validate();
    std::vector<Method> methods;
    for (const auto& m : o.methods) methods.push_back(method_from_string(m));
    if (methods.empty()) methods = all_methods();
    const auto prepared = prepare(config);
    std::printf("source model: held-out in-domain accuracy %.4f (%.1f s)\n", prepared.source.in_domain_acc,
                prepared.source.seconds);
    const auto report = run_all(config, methods, prepared);
    fs::create_directories(o.out);
    const fs::path dir(o.out);
    const auto metrics_path = dir / "metrics.json";
    write_json(metrics_path, to_json(report));
    save_model(dir / "source.ttam", prepared.source.model);
    for (const auto& rep : report.replicates)
        for (const auto& run : rep.runs)
            write_text(dir / ("curve_" + to_string(run.method) + "_r" + std::to_string(rep.seed) + ".csv"),
                       batches_csv(run.metrics));
    const MetricsFile file = read_metrics(metrics_path);
    const auto cmp = compare(std::span<const MetricsFile>(&file, 1), false);
    write_text(dir / "report.csv", cmp.csv);
    write_text(dir / "report.txt", cmp.table);
    const auto src = mean_std(report.source_accuracies());
    const auto s1 = mean_std(report.stage1_accuracies());
    std::printf("target: source model %.4f, after fine-tuning %.4f\n%s", src.mean, s1.mean, cmp.table.c_str());
    return 0;
}

struct Report {
    std::vector<std::string> files;
    bool force = false;
    std::string csv;
};

int report_cmd(const Report& o) {
    std::vector<MetricsFile> files;
    for (const auto& f : o.files) files.push_back(read_metrics(f));
    const auto cmp = compare(files, o.force);
    std::cout << cmp.table;
    if (!o.csv.empty()) write_text(o.csv, cmp.csv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot test-time adaptation on synthetic domain-shift benchmarks"};
    app.require_subcommand(1);

    GenData gen;
    auto* c_gen = app.add_subcommand("gen-data", "generate source, target, support and stream datasets");
    add_common(c_gen, gen.common);
    c_gen->add_option("--out", gen.out, "output directory");
    c_gen->add_option("--replicate", gen.replicate, "replicate seed for the support split");

    TrainSource ts;
    auto* c_ts = app.add_subcommand("train-source", "train the source model on the source domains");
    add_common(c_ts, ts.common);
    c_ts->add_option("--data", ts.data, "directory written by gen-data");
    c_ts->add_option("--out", ts.out, "model file");
    c_ts->add_option("--trace", ts.trace, "training loss CSV");
    c_ts->add_option("--iterations", ts.iterations);

    Finetune ft;
    auto* c_ft = app.add_subcommand("finetune", "fine-tune a model on a labeled support set");
    add_common(c_ft, ft.common);
    c_ft->add_option("--model", ft.model, "input model")->required();
    c_ft->add_option("--support", ft.support, "support set file")->required();
    c_ft->add_option("--out", ft.out, "output model");
    c_ft->add_option("--trace", ft.trace, "loss CSV (default: <out>.loss.csv)");
    c_ft->add_option("--replicate", ft.replicate, "replicate seed for the augmentation draws");
    c_ft->add_option("--epochs", ft.epochs);
    c_ft->add_option("--lr", ft.lr);

    Adapt ad;
    auto* c_ad = app.add_subcommand("adapt", "adapt online over an unlabeled stream and score it");
    add_common(c_ad, ad.common);
    c_ad->add_option("--model", ad.model, "model file")->required();
    c_ad->add_option("--stream", ad.stream, "stream dataset")->required();
    c_ad->add_option("--support", ad.support, "support set (needed by fs_tta)");
    c_ad->add_option("--method", ad.method, "fs_tta | tent | bn | erm | ft | ft_tent");
    c_ad->add_option("--alpha", ad.alpha, "entropy filter fraction");
    c_ad->add_option("--ema-beta", ad.ema_beta, "prototype EMA coefficient");
    c_ad->add_option("--lr", ad.lr, "online learning rate");
    c_ad->add_option("--batch", ad.batch, "stream batch size");
    c_ad->add_option("--replicate", ad.replicate, "replicate seed for the stream order");
    c_ad->add_option("--out", ad.out, "metrics JSON");
    c_ad->add_option("--curve", ad.curve, "per-batch CSV (default: <out>.batches.csv)");

    Sweep sw;
    auto* c_sw = app.add_subcommand("sweep", "ablation over alpha, k-shot or batch size");
    add_common(c_sw, sw.common);
    c_sw->add_option("--axis", sw.axis, "alpha | kshot | batch");
    c_sw->add_option("--values", sw.values, "values to sweep (defaults per axis)");
    c_sw->add_option("--method", sw.method, "method to run (default: config method)");
    c_sw->add_option("--out", sw.out, "output prefix for .json and .csv");

    Report rp;
    auto* c_rp = app.add_subcommand("report", "side-by-side table of metrics files");
    c_rp->add_option("files", rp.files, "metrics JSON files")->required();
    c_rp->add_flag("--force", rp.force, "compare files produced by different configs");
    c_rp->add_option("--csv", rp.csv, "also write the table as CSV");

    RunAll ra;
    auto* c_ra = app.add_subcommand("run-all", "full pipeline for every method over all replicates");
    add_common(c_ra, ra.common);
    c_ra->add_option("--out", ra.out, "output directory");
    c_ra->add_option("--methods", ra.methods, "subset of methods (default: all six)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (c_gen->parsed()) return gen_data(gen);
        if (c_ts->parsed()) return train_source_cmd(ts);
        if (c_ft->parsed()) return finetune_cmd(ft);
        if (c_ad->parsed()) return adapt_cmd(ad);
        if (c_sw->parsed()) return sweep_cmd(sw);
        if (c_rp->parsed()) return report_cmd(rp);
        if (c_ra->parsed()) return run_all_cmd(ra);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitConfig;
}
