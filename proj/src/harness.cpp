#include "fstta/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "fstta/errors.hpp"
#include "fstta/random.hpp"

namespace fstta {

using nlohmann::json;

namespace {

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

DomainSpec make_spec(const DomainStyle& style, int id, std::uint64_t seed) {
    DomainSpec s;
    s.domain_id = id;
    s.gain = style.gain;
    s.bias = style.bias;
    s.noise_std = style.noise_std;
    s.seed = seed;
    return s;
}

struct Stage1 {
    SupportSplit split;
    Backbone model;
    std::vector<FinetuneEpoch> trace;
    double seconds = 0.0;
    double source_acc = 0.0;
    double stage1_acc = 0.0;
};

Stage1 run_stage1(const RunConfig& config, const Prepared& prepared, std::uint64_t replicate) {
    auto split = split_support(prepared.bench.target, config.data.k, support_seed(replicate));
    Stopwatch sw;
    auto ft = finetune(prepared.source.model, split.support, config.finetune_config(replicate));
    const double seconds = sw.seconds();
    const double source_acc = eval_accuracy(prepared.source.model, split.remainder);
    const double stage1_acc = eval_accuracy(ft.model, split.remainder);
    return {std::move(split), std::move(ft.model), std::move(ft.trace), seconds, source_acc, stage1_acc};
}

MethodRun run_method(const RunConfig& config, Method method, const Backbone& source, const Stage1* stage1,
                     const SupportSplit& split, const LabeledStream& stream) {
    const Backbone& start = method_uses_finetune(method) ? stage1->model : source;
    Stopwatch sw;
    auto adapter = make_adapter(method, start, &split.support, config.adapt_config(), config.tent_config());
    MethodRun run;
    run.method = method;
    run.metrics = run_stream(*adapter, stream);
    run.seconds = sw.seconds();
    return run;
}

LabeledStream stream_for(const RunConfig& config, const Dataset& remainder, std::uint64_t replicate) {
    return make_stream(remainder, config.stage2.batch_size, stream_seed(replicate),
                       config.stage2.class_sorted ? StreamOrder::class_sorted : StreamOrder::shuffled);
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::uint64_t template_seed(const RunConfig& config) { return derive_seed(data_seed(config), "templates"); }

std::vector<DomainSpec> source_specs(const RunConfig& config) {
    std::vector<DomainSpec> specs;
    for (std::size_t i = 0; i < config.data.sources.size(); ++i)
        specs.push_back(make_spec(config.data.sources[i], static_cast<int>(i),
                                  derive_seed(data_seed(config), "source" + std::to_string(i))));
    return specs;
}

DomainSpec target_spec(const RunConfig& config) {
    return make_spec(config.data.target, static_cast<int>(config.data.sources.size()),
                     derive_seed(data_seed(config), "target"));
}

Benchmark make_benchmark(const RunConfig& config) {
    config.validate();
    const auto& d = config.data;
    const auto tseed = template_seed(config);
    Benchmark b;
    for (const auto& spec : source_specs(config)) {
        b.sources.push_back(gen_domain(d.classes, d.per_class, spec, d.image_size, tseed, d.channels));
        auto held = spec;
        held.seed = derive_seed(spec.seed, "heldout");
        b.heldout.push_back(gen_domain(d.classes, d.heldout_per_class, held, d.image_size, tseed, d.channels));
    }
    b.target = gen_domain(d.classes, d.per_class, target_spec(config), d.image_size, tseed, d.channels);
    return b;
}

SourceResult train_source_model(const RunConfig& config, const Benchmark& bench) {
    Stopwatch sw;
    Backbone model(config.model, init_seed(config));
    auto trace = train_source(model, bench.sources, config.source_config());
    double correct = 0.0, total = 0.0;
    for (const auto& h : bench.heldout) {
        if (h.size() == 0) continue;
        correct += eval_accuracy(model, h) * static_cast<double>(h.size());
        total += static_cast<double>(h.size());
    }
    SourceResult r{std::move(model), std::move(trace), total > 0 ? correct / total : 0.0, sw.seconds()};
    return r;
}

Prepared prepare(const RunConfig& config) {
    auto bench = make_benchmark(config);
    auto source = train_source_model(config, bench);
    return {std::move(bench), std::move(source)};
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods{Method::source_only, Method::norm_stat,      Method::entropy_min,
                                             Method::ft_only,     Method::ft_entropy_min, Method::fs_tta};
    return methods;
}

ReplicateReport run_replicate(const RunConfig& config, const Prepared& prepared, std::uint64_t replicate,
                              std::span<const Method> methods) {
    ReplicateReport rep;
    rep.seed = replicate;
    const bool need_ft = std::any_of(methods.begin(), methods.end(), method_uses_finetune);
    std::optional<Stage1> stage1;
    SupportSplit plain;
    if (need_ft) {
        stage1 = run_stage1(config, prepared, replicate);
        rep.source_acc = stage1->source_acc;
        rep.stage1_acc = stage1->stage1_acc;
        rep.finetune_seconds = stage1->seconds;
        rep.finetune_trace = stage1->trace;
    } else {
        plain = split_support(prepared.bench.target, config.data.k, support_seed(replicate));
        rep.source_acc = eval_accuracy(prepared.source.model, plain.remainder);
        rep.stage1_acc = std::numeric_limits<double>::quiet_NaN();
    }
    const SupportSplit& split = stage1 ? stage1->split : plain;
    const auto stream = stream_for(config, split.remainder, replicate);
    for (auto m : methods)
        rep.runs.push_back(run_method(config, m, prepared.source.model, stage1 ? &*stage1 : nullptr, split, stream));
    return rep;
}

std::vector<double> RunReport::accuracies(Method method) const {
    std::vector<double> out;
    for (const auto& r : replicates)
        for (const auto& run : r.runs)
            if (run.method == method) out.push_back(run.metrics.final_accuracy);
    return out;
}

std::vector<double> RunReport::source_accuracies() const {
    std::vector<double> out;
    for (const auto& r : replicates) out.push_back(r.source_acc);
    return out;
}

std::vector<double> RunReport::stage1_accuracies() const {
    std::vector<double> out;
    for (const auto& r : replicates) out.push_back(r.stage1_acc);
    return out;
}

RunReport run_all(const RunConfig& config, std::span<const Method> methods, const Prepared& prepared) {
    config.validate();
    Stopwatch sw;
    RunReport report;
    report.config = config;
    report.methods.assign(methods.begin(), methods.end());
    report.source_in_domain_acc = prepared.source.in_domain_acc;
    report.source_seconds = prepared.source.seconds;
    for (auto r : config.replicates) report.replicates.push_back(run_replicate(config, prepared, r, methods));
    report.seconds = sw.seconds();
    return report;
}

MeanStd mean_std(std::span<const double> values) {
    MeanStd out;
    if (values.empty()) return out;
    double s = 0.0;
    for (double v : values) s += v;
    out.mean = s / static_cast<double>(values.size());
    if (values.size() > 1) {
        double q = 0.0;
        for (double v : values) q += (v - out.mean) * (v - out.mean);
        out.std = std::sqrt(q / static_cast<double>(values.size() - 1));
    }
    return out;
}

std::string to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::alpha: return "alpha";
        case SweepAxis::kshot: return "kshot";
        case SweepAxis::batch: return "batch";
    }
    return "?";
}

SweepAxis sweep_axis_from_string(const std::string& name) {
    if (name == "alpha") return SweepAxis::alpha;
    if (name == "kshot" || name == "k") return SweepAxis::kshot;
    if (name == "batch") return SweepAxis::batch;
    throw ConfigError("unknown sweep axis '" + name + "' (alpha, kshot, batch)");
}

std::vector<double> default_sweep_values(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::alpha: return {0.0, 0.3, 0.6, 1.0};
        case SweepAxis::kshot: return {1, 3, 5, 10};
        case SweepAxis::batch: return {8, 16, 32, 64, 128};
    }
    return {};
}

namespace {

std::size_t as_count(double v, const char* what) {
    if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError(std::string(what) + " values must be positive integers");
    return static_cast<std::size_t>(v);
}

}  // namespace

SweepReport run_sweep(const RunConfig& config, SweepAxis axis, std::span<const double> values,
                      const Prepared& prepared) {
    config.validate();
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    std::vector<RunConfig> configs;
    for (double v : values) {
        RunConfig c = config;
        switch (axis) {
            case SweepAxis::alpha: c.stage2.alpha = v; break;
            case SweepAxis::kshot: c.data.k = as_count(v, "kshot"); break;
            case SweepAxis::batch: c.stage2.batch_size = as_count(v, "batch"); break;
        }
        c.validate();
        configs.push_back(std::move(c));
    }

    SweepReport report;
    report.axis = axis;
    report.config = config;
    report.rows.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) report.rows[i].value = values[i];

    for (auto r : config.replicates) {
        // Stage I only depends on k, so the other axes share one fine-tuning run.
        std::optional<Stage1> shared;
        if (axis != SweepAxis::kshot) shared = run_stage1(config, prepared, r);
        for (std::size_t i = 0; i < values.size(); ++i) {
            const RunConfig& c = configs[i];
            std::optional<Stage1> own;
            if (axis == SweepAxis::kshot) own = run_stage1(c, prepared, r);
            const Stage1& s1 = own ? *own : *shared;
            const auto stream = stream_for(c, s1.split.remainder, r);
            auto run = run_method(c, c.method, prepared.source.model, &s1, s1.split, stream);
            auto& row = report.rows[i];
            row.accuracy.push_back(run.metrics.final_accuracy);
            row.stage1_acc.push_back(s1.stage1_acc);
            row.stream_seconds += run.seconds;
            row.seconds_per_sample += run.seconds / static_cast<double>(stream.total());
        }
    }
    for (auto& row : report.rows) row.seconds_per_sample /= static_cast<double>(config.replicates.size());
    return report;
}

json to_json(const RunReport& report) {
    json j;
    j["schema"] = kMetricsSchema;
    j["kind"] = "run";
    j["config"] = to_json(report.config);
    j["config_hash"] = config_hash(report.config);
    j["num_classes"] = report.config.data.classes;
    j["seeds"] = {{"run", report.config.seed}, {"replicates", report.config.replicates}};
    j["source"] = {{"in_domain_acc", report.source_in_domain_acc}, {"seconds", report.source_seconds}};
    j["source_target_acc"] = report.source_accuracies();
    json stage1 = json::array();
    for (double v : report.stage1_accuracies()) stage1.push_back(number_or_null(v));
    j["stage1_acc"] = stage1;
    json rows = json::array();
    for (auto m : report.methods) {
        const auto acc = report.accuracies(m);
        const auto ms = mean_std(acc);
        rows.push_back({{"method", to_string(m)}, {"accuracy_mean", ms.mean}, {"accuracy_std", ms.std},
                        {"accuracies", acc}});
    }
    j["rows"] = rows;
    json reps = json::array();
    for (const auto& r : report.replicates) {
        json runs = json::array();
        for (const auto& run : r.runs) {
            json curve = json::array();
            for (const auto& b : run.metrics.batches) curve.push_back(b.cumulative_acc);
            runs.push_back({{"method", to_string(run.method)},
                            {"final_acc", run.metrics.final_accuracy},
                            {"updates", run.metrics.updates},
                            {"skipped_updates", run.metrics.skipped_updates},
                            {"seconds", run.seconds},
                            {"cumulative_acc", curve}});
        }
        reps.push_back({{"seed", r.seed},
                        {"source_acc", r.source_acc},
                        {"stage1_acc", number_or_null(r.stage1_acc)},
                        {"finetune_seconds", r.finetune_seconds},
                        {"runs", runs}});
    }
    j["replicates"] = reps;
    j["seconds"] = report.seconds;
    return j;
}

json to_json(const SweepReport& report) {
    json j;
    j["schema"] = kMetricsSchema;
    j["kind"] = "sweep";
    j["axis"] = to_string(report.axis);
    j["method"] = to_string(report.config.method);
    j["config"] = to_json(report.config);
    j["config_hash"] = config_hash(report.config);
    j["num_classes"] = report.config.data.classes;
    json rows = json::array();
    for (const auto& r : report.rows) {
        const auto ms = mean_std(r.accuracy);
        const auto s1 = mean_std(r.stage1_acc);
        rows.push_back({{"method", to_string(report.config.method) + "@" + to_string(report.axis) + "=" + fmt(r.value, 2)},
                        {"value", r.value},
                        {"accuracy_mean", ms.mean},
                        {"accuracy_std", ms.std},
                        {"accuracies", r.accuracy},
                        {"stage1_mean", s1.mean},
                        {"stage1_acc", r.stage1_acc},
                        {"stream_seconds", r.stream_seconds},
                        {"seconds_per_sample", r.seconds_per_sample}});
    }
    j["rows"] = rows;
    return j;
}

std::string render_sweep(const SweepReport& report) {
    std::ostringstream os;
    os << "sweep " << to_string(report.axis) << " (" << to_string(report.config.method) << ", "
       << report.config.replicates.size() << " replicates)\n";
    os << std::left << std::setw(10) << to_string(report.axis) << std::setw(20) << "accuracy" << std::setw(20)
       << "stage1" << std::setw(14) << "stream_s" << "ms/sample\n";
    for (const auto& r : report.rows) {
        const auto ms = mean_std(r.accuracy);
        const auto s1 = mean_std(r.stage1_acc);
        os << std::left << std::setw(10) << fmt(r.value, 2) << std::setw(20)
           << (fmt(ms.mean) + " +- " + fmt(ms.std)) << std::setw(20) << (fmt(s1.mean) + " +- " + fmt(s1.std))
           << std::setw(14) << fmt(r.stream_seconds, 2) << fmt(1e3 * r.seconds_per_sample, 3) << '\n';
    }
    return os.str();
}

std::string sweep_csv(const SweepReport& report) {
    std::ostringstream os;
    os << to_string(report.axis) << ",accuracy_mean,accuracy_std,stage1_mean,stage1_std,stream_seconds,seconds_per_sample\n";
    os << std::setprecision(10);
    for (const auto& r : report.rows) {
        const auto ms = mean_std(r.accuracy);
        const auto s1 = mean_std(r.stage1_acc);
        os << r.value << ',' << ms.mean << ',' << ms.std << ',' << s1.mean << ',' << s1.std << ','
           << r.stream_seconds << ',' << r.seconds_per_sample << '\n';
    }
    return os.str();
}

std::string batches_csv(const StreamMetrics& metrics) {
    std::ostringstream os;
    os << "batch,online_acc,cumulative_acc,selected,mask_rate,loss\n" << std::setprecision(10);
    for (const auto& b : metrics.batches) {
        os << b.index << ',' << b.online_acc << ',' << b.cumulative_acc << ',' << b.selected << ',' << b.mask_rate
           << ',';
        if (std::isfinite(b.loss)) os << b.loss;
        os << '\n';
    }
    return os.str();
}

std::string finetune_csv(std::span<const FinetuneEpoch> trace) {
    std::ostringstream os;
    os << "epoch,loss,support_acc\n" << std::setprecision(10);
    for (const auto& e : trace) os << e.epoch << ',' << e.loss << ',' << e.support_acc << '\n';
    return os.str();
}

MetricsFile read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(DataError::Kind::io, "cannot open metrics file " + path.string());
    MetricsFile f;
    f.path = path.string();
    try {
        json j;
        in >> j;
        if (!j.is_object() || j.value("schema", "") != kMetricsSchema)
            throw DataError(DataError::Kind::invalid_content, path.string() + ": not a metrics file");
        f.config_hash = j.at("config_hash").get<std::string>();
        f.num_classes = j.at("num_classes").get<std::size_t>();
        for (const auto& row : j.at("rows"))
            f.rows.push_back({row.at("method").get<std::string>(), row.at("accuracies").get<std::vector<double>>()});
    } catch (const json::exception& e) {
        throw DataError(DataError::Kind::invalid_content, path.string() + ": malformed metrics (" + e.what() + ")");
    }
    if (f.rows.empty()) throw DataError(DataError::Kind::invalid_content, path.string() + ": no method rows");
    return f;
}

Comparison compare(std::span<const MetricsFile> files, bool force) {
    if (files.empty()) throw ConfigError("report needs at least one metrics file");
    const auto& first = files.front();
    for (const auto& f : files) {
        if (f.num_classes != first.num_classes)
            throw DataError(DataError::Kind::invalid_content,
                            f.path + ": class count " + std::to_string(f.num_classes) + " differs from " +
                                std::to_string(first.num_classes) + " in " + first.path);
        if (!force && f.config_hash != first.config_hash)
            throw DataError(DataError::Kind::invalid_content,
                            f.path + ": config hash " + f.config_hash + " differs from " + first.config_hash +
                                " in " + first.path + " (use --force to compare anyway)");
    }

    struct Row {
        std::string method;
        MeanStd acc;
        std::size_t n;
    };
    std::vector<Row> rows;
    for (const auto& f : files)
        for (const auto& r : f.rows) rows.push_back({r.method, mean_std(r.accuracies), r.accuracies.size()});

    std::vector<const Row*> baselines;
    for (const auto& r : rows)
        if (r.method != to_string(Method::fs_tta)) baselines.push_back(&r);

    std::ostringstream table, csv;
    table << std::left << std::setw(24) << "method" << std::setw(22) << "accuracy (%)" << std::setw(4) << "n";
    csv << "method,accuracy_mean,accuracy_std,n";
    for (const auto* b : baselines) {
        table << std::setw(18) << ("d/" + b->method);
        csv << ",delta_" << b->method;
    }
    table << '\n';
    csv << '\n';
    for (const auto& r : rows) {
        table << std::left << std::setw(24) << r.method << std::setw(22)
              << (fmt(100 * r.acc.mean, 2) + " +- " + fmt(100 * r.acc.std, 2)) << std::setw(4) << r.n;
        csv << r.method << ',' << std::setprecision(10) << r.acc.mean << ',' << r.acc.std << ',' << r.n;
        for (const auto* b : baselines) {
            const double d = r.acc.mean - b->acc.mean;
            table << std::setw(18) << ((d >= 0 ? "+" : "") + fmt(100 * d, 2));
            csv << ',' << d;
        }
        table << '\n';
        csv << '\n';
    }
    return {table.str(), csv.str()};
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(DataError::Kind::io, "cannot write " + path.string());
    out << content;
    if (!out) throw DataError(DataError::Kind::io, "write failed for " + path.string());
}

void write_sidecar(const std::filesystem::path& artifact, const RunConfig& config,
                   std::span<const std::filesystem::path> inputs) {
    json j;
    j["artifact"] = artifact.filename().string();
    j["artifact_hash"] = file_hash(artifact);
    j["config_hash"] = config_hash(config);
    j["config"] = to_json(config);
    json in = json::object();
    for (const auto& p : inputs) in[p.string()] = file_hash(p);
    j["inputs"] = in;
    auto side = artifact;
    side += ".json";
    write_text(side, j.dump(2) + "\n");
}

}  // namespace fstta
