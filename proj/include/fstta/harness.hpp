#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fstta/config.hpp"
#include "fstta/data.hpp"
#include "fstta/finetune.hpp"
#include "fstta/model.hpp"
#include "fstta/stream.hpp"

namespace fstta {

/// All domains of one synthetic benchmark.
struct Benchmark {
    std::vector<Dataset> sources;
    std::vector<Dataset> heldout;  ///< fresh samples of each source domain
    Dataset target;
};

std::vector<DomainSpec> source_specs(const RunConfig& config);
DomainSpec target_spec(const RunConfig& config);
std::uint64_t template_seed(const RunConfig& config);
Benchmark make_benchmark(const RunConfig& config);

struct SourceResult {
    Backbone model;
    std::vector<TrainPoint> trace;
    double in_domain_acc = 0.0;  ///< on the held-out source samples
    double seconds = 0.0;
};

SourceResult train_source_model(const RunConfig& config, const Benchmark& bench);

/// Benchmark plus the source model every replicate starts from.
struct Prepared {
    Benchmark bench;
    SourceResult source;
};

Prepared prepare(const RunConfig& config);

const std::vector<Method>& all_methods();

struct MethodRun {
    Method method = Method::source_only;
    StreamMetrics metrics;
    double seconds = 0.0;
};

struct ReplicateReport {
    std::uint64_t seed = 0;
    double source_acc = 0.0;  ///< frozen source model on the stream samples
    double stage1_acc = 0.0;  ///< fine-tuned model on the stream samples (NaN when not run)
    double finetune_seconds = 0.0;
    std::vector<FinetuneEpoch> finetune_trace;
    std::vector<MethodRun> runs;
};

/// One support draw, one fine-tuning run and one stream, shared by every method.
ReplicateReport run_replicate(const RunConfig& config, const Prepared& prepared, std::uint64_t replicate,
                              std::span<const Method> methods);

struct RunReport {
    RunConfig config;
    std::vector<Method> methods;
    double source_in_domain_acc = 0.0;
    double source_seconds = 0.0;
    std::vector<ReplicateReport> replicates;
    double seconds = 0.0;

    std::vector<double> accuracies(Method method) const;
    std::vector<double> source_accuracies() const;
    std::vector<double> stage1_accuracies() const;
};

RunReport run_all(const RunConfig& config, std::span<const Method> methods, const Prepared& prepared);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  ///< sample standard deviation, 0 for a single value
};
MeanStd mean_std(std::span<const double> values);

enum class SweepAxis { alpha, kshot, batch };
std::string to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(const std::string& name);
std::vector<double> default_sweep_values(SweepAxis axis);

struct SweepRow {
    double value = 0.0;
    std::vector<double> accuracy;    ///< per replicate
    std::vector<double> stage1_acc;  ///< per replicate
    double stream_seconds = 0.0;     ///< Stage II wall-clock summed over replicates
    double seconds_per_sample = 0.0;
};

struct SweepReport {
    SweepAxis axis = SweepAxis::alpha;
    RunConfig config;
    std::vector<SweepRow> rows;
};

/// Runs `config.method` once per value and replicate.
SweepReport run_sweep(const RunConfig& config, SweepAxis axis, std::span<const double> values,
                      const Prepared& prepared);

// ---- artifacts ---------------------------------------------------------------------

inline constexpr const char* kMetricsSchema = "fstta.metrics/1";

/// Metrics document: config, hash, class count and one row per method.
nlohmann::json to_json(const RunReport& report);
nlohmann::json to_json(const SweepReport& report);

/// Human-readable sweep table (mean +- std, wall-clock).
std::string render_sweep(const SweepReport& report);
std::string sweep_csv(const SweepReport& report);

/// Per-batch curve: batch, online_acc, cumulative_acc, selected, mask_rate, loss.
std::string batches_csv(const StreamMetrics& metrics);
std::string finetune_csv(std::span<const FinetuneEpoch> trace);

struct MetricsRow {
    std::string method;
    std::vector<double> accuracies;
};

struct MetricsFile {
    std::string path;
    std::string config_hash;
    std::size_t num_classes = 0;
    std::vector<MetricsRow> rows;
};

/// Throws DataError naming the file when it is not a metrics document.
MetricsFile read_metrics(const std::filesystem::path& path);

struct Comparison {
    std::string table;
    std::string csv;
};

/// Side-by-side method table with one delta column per baseline present.
/// Files must agree on class count; mixed config hashes need `force`.
Comparison compare(std::span<const MetricsFile> files, bool force);

/// Writes `content` to `path`, throwing DataError on I/O failure.
void write_text(const std::filesystem::path& path, const std::string& content);
/// Artifact sidecar: producing config, its hash and the hashes of the named files.
void write_sidecar(const std::filesystem::path& artifact, const RunConfig& config,
                   std::span<const std::filesystem::path> inputs);

}  // namespace fstta
