#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fstta/data.hpp"
#include "fstta/finetune.hpp"
#include "fstta/model.hpp"
#include "fstta/stream.hpp"

namespace fstta {

struct DomainStyle {
    std::vector<double> gain;
    std::vector<double> bias;
    double noise_std = 0.0;

    friend bool operator==(const DomainStyle&, const DomainStyle&) = default;
};

struct DataConfig {
    std::size_t classes = 6;
    std::size_t channels = 3;
    std::size_t image_size = 16;
    std::size_t per_class = 200;
    std::size_t heldout_per_class = 50;  ///< fresh in-domain samples per source domain for evaluation
    std::size_t k = 5;
    std::vector<DomainStyle> sources;
    DomainStyle target;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct SourceSettings {
    std::size_t iterations = 2000;
    std::size_t batch_per_domain = 8;
    double lr = 1e-3;
    double stats_momentum = 0.1;

    friend bool operator==(const SourceSettings&, const SourceSettings&) = default;
};

struct FinetuneSettings {
    std::size_t epochs = 50;
    double lr = 5e-5;
    std::size_t batch_size = 0;
    std::vector<ParamGroup> groups{ParamGroup::conv, ParamGroup::norm_affine, ParamGroup::head};

    friend bool operator==(const FinetuneSettings&, const FinetuneSettings&) = default;
};

struct FdaSettings {
    bool enabled = true;
    double alpha_beta = 0.1;
    double p_apply = 0.5;
    std::vector<std::size_t> sites{0, 1};
    double eps = 1e-8;
    bool detach_mixed = false;

    friend bool operator==(const FdaSettings&, const FdaSettings&) = default;
};

struct Stage2Settings {
    double alpha = 0.6;
    double ema_beta = 0.9;
    double temperature = 1.0;
    double lr = 3e-4;
    std::size_t batch_size = 64;
    std::vector<ParamGroup> groups{ParamGroup::conv, ParamGroup::norm_affine, ParamGroup::head};
    bool predict_with_prototypes = false;
    bool class_sorted = false;

    friend bool operator==(const Stage2Settings&, const Stage2Settings&) = default;
};

struct TentSettings {
    double lr = 3e-4;
    std::vector<ParamGroup> groups{ParamGroup::norm_affine};

    friend bool operator==(const TentSettings&, const TentSettings&) = default;
};

/// Every tunable of a run. `seed` fixes the data and the source model;
/// each entry of `replicates` fixes one support draw, FDA sequence and stream order.
struct RunConfig {
    DataConfig data;
    BackboneConfig model;
    SourceSettings source;
    FinetuneSettings finetune;
    FdaSettings fda;
    Stage2Settings stage2;
    TentSettings tent;
    std::uint64_t seed = 7;
    std::vector<std::uint64_t> replicates{0, 1, 2, 3, 4};
    Method method = Method::fs_tta;

    /// Throws ConfigError on out-of-range values or inconsistent sizes.
    void validate() const;

    FdaConfig fda_config() const;
    FinetuneConfig finetune_config(std::uint64_t replicate) const;
    SourceTrainConfig source_config() const;
    AdaptConfig adapt_config() const;
    TentConfig tent_config() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Default benchmark: three mildly styled source domains and a more strongly shifted target.
RunConfig default_config();

/// Sub-seeds. The run seed feeds "data" and "init"; a replicate feeds "support", "fda" and "stream".
std::uint64_t data_seed(const RunConfig& config);
std::uint64_t init_seed(const RunConfig& config);
std::uint64_t support_seed(std::uint64_t replicate);
std::uint64_t fda_seed(std::uint64_t replicate);
std::uint64_t stream_seed(std::uint64_t replicate);

nlohmann::json to_json(const RunConfig& config);
/// Keys absent from `j` keep their defaults; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

/// Hex FNV-1a of the serialized config with the method removed, so that the
/// rows of one comparison share a hash.
std::string config_hash(const RunConfig& config);

/// Hex FNV-1a of a file's bytes.
std::string file_hash(const std::filesystem::path& path);

}  // namespace fstta
