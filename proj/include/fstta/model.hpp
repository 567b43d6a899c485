#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fstta/autograd.hpp"
#include "fstta/data.hpp"
#include "fstta/fda.hpp"

namespace fstta {

struct BackboneConfig {
    std::size_t in_channels = 3;
    std::vector<std::size_t> widths{16, 32, 32};
    std::size_t num_classes = 6;
    std::size_t ksize = 3;
    double in_eps = 1e-5;

    std::size_t embedding_dim() const { return widths.empty() ? 0 : widths.back(); }
    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

enum class ParamGroup { conv, norm_affine, head };

std::string to_string(ParamGroup group);
ParamGroup param_group_from_string(const std::string& name);

struct NamedParam {
    std::string name;
    ParamGroup group;
    Var var;
};

enum class Mode { train, eval };

struct ForwardOptions {
    Mode mode = Mode::eval;
    /// Applied only in train mode, at the sites each plan names.
    std::span<const FdaPlan> fda;
    double fda_eps = 1e-8;
    bool fda_detach = false;
    /// Re-standardize the pooled embedding with this batch's statistics and map
    /// it onto the running statistics recorded during source training.
    bool batch_embedding_stats = false;
};

struct ForwardResult {
    Var embedding;  ///< N x D pooled pre-head feature
    Var logits;     ///< N x classes
};

/// Conv -> instance norm -> ReLU blocks, global average pooling, linear head.
/// FDA hook sites sit after every block except the last (site i follows block i).
/// Copies are deep: a copied model owns independent parameters.
class Backbone {
public:
    Backbone(BackboneConfig config, std::uint64_t init_seed);
    Backbone(const Backbone& other);
    Backbone& operator=(const Backbone& other);
    Backbone(Backbone&&) noexcept = default;
    Backbone& operator=(Backbone&&) noexcept = default;

    const BackboneConfig& config() const noexcept { return config_; }
    std::size_t hook_sites() const noexcept { return config_.widths.empty() ? 0 : config_.widths.size() - 1; }

    ForwardResult forward(const Tensor& x, const ForwardOptions& options = {}) const;
    /// Eval-mode forward without building a graph.
    ForwardResult infer(const Tensor& x) const;

    std::vector<NamedParam>& parameters() noexcept { return params_; }
    const std::vector<NamedParam>& parameters() const noexcept { return params_; }
    std::vector<Var> parameters(std::span<const ParamGroup> groups) const;
    std::vector<Var> all_parameters() const;
    const NamedParam& parameter(const std::string& name) const;

    /// Running mean / variance of the pooled embedding (non-trainable buffers).
    Tensor& embedding_running_mean() noexcept { return running_mean_; }
    Tensor& embedding_running_var() noexcept { return running_var_; }
    const Tensor& embedding_running_mean() const noexcept { return running_mean_; }
    const Tensor& embedding_running_var() const noexcept { return running_var_; }
    /// Folds a batch of embeddings into the running statistics.
    void track_embedding_stats(const Tensor& embedding, double momentum);

    void zero_grad();
    /// FNV-1a over every parameter and buffer bit pattern.
    std::uint64_t parameter_hash() const;

private:
    BackboneConfig config_;
    std::vector<NamedParam> params_;
    Tensor running_mean_;
    Tensor running_var_;
};

bool parameters_equal(const Backbone& a, const Backbone& b);

/// Fraction of correct top-1 eval-mode predictions; throws DataError on an empty set.
double eval_accuracy(const Backbone& model, const Dataset& data, std::size_t batch_size = 256);

/// Top-1 eval-mode predictions for every record.
std::vector<int> predict(const Backbone& model, const Tensor& inputs, std::size_t batch_size = 256);

struct SourceTrainConfig {
    std::size_t iterations = 2000;
    std::size_t batch_per_domain = 8;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double stats_momentum = 0.1;
    std::size_t log_every = 100;
};

struct TrainPoint {
    std::size_t iteration;
    double loss;
    double batch_accuracy;
};

/// Cross-entropy + Adam over batches pooled from every source domain.
/// Throws NumericError when the loss stops being finite.
std::vector<TrainPoint> train_source(Backbone& model, std::span<const Dataset> sources,
                                     const SourceTrainConfig& config);

/// Little-endian "TTAM" file: architecture descriptor then named f64 blobs in declaration order.
void save_model(const std::filesystem::path& path, const Backbone& model);
Backbone load_model(const std::filesystem::path& path);
/// Loads into an existing architecture; a mismatch raises ShapeError naming the parameter.
void load_model_into(const std::filesystem::path& path, Backbone& model);

inline constexpr std::uint32_t kModelVersion = 1;

}  // namespace fstta
