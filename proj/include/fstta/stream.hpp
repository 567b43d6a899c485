#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fstta/data.hpp"
#include "fstta/model.hpp"
#include "fstta/optim.hpp"
#include "fstta/proto_bank.hpp"

namespace fstta {

// ---- per-batch building blocks ---------------------------------------------

/// floor(alpha * B) indices with the smallest entropy, ties to the lower index,
/// returned in ascending index order.
std::vector<std::size_t> entropy_filter(std::span<const double> entropies, double alpha);

/// Row-wise argmax of N x C logits (ties to the lowest class).
std::vector<int> pseudo_label(const Tensor& logits);

/// True when both distributions have the same argmax.
bool consistency_mask(std::span<const double> model_probs, std::span<const double> proto_probs);

/// sum_j H_j M_j / sum_j M_j with H_j the cross-entropy of row j against its
/// pseudo-label. Empty when no mask is set, meaning "no update".
std::optional<Var> online_loss(const Var& logits, std::span<const int> pseudo_labels, std::span<const int> masks);

// ---- adapters ----------------------------------------------------------------

enum class Method { source_only, norm_stat, entropy_min, ft_only, ft_entropy_min, fs_tta };

std::string to_string(Method method);
/// Accepts the canonical names and the short CLI aliases (erm, bn, tent, ft, ft_tent, fs_tta).
Method method_from_string(const std::string& name);
bool method_uses_finetune(Method method);

struct AdaptConfig {
    double alpha = 0.6;
    double ema_beta = 0.9;
    double temperature = 1.0;
    double lr = 3e-4;
    std::vector<ParamGroup> groups{ParamGroup::conv, ParamGroup::norm_affine, ParamGroup::head};
    /// Report the prototype classifier's argmax instead of the head's.
    bool predict_with_prototypes = false;
};

struct TentConfig {
    double lr = 3e-4;
    std::vector<ParamGroup> groups{ParamGroup::norm_affine};
};

/// What an adapter reports for one arriving batch. Carries no labels.
struct BatchOutcome {
    std::vector<int> predictions;  ///< made before this batch's update
    std::size_t selected = 0;      ///< |x_hat| after the entropy filter
    std::size_t consistent = 0;    ///< selected samples with mask = 1
    double loss = std::numeric_limits<double>::quiet_NaN();
    bool updated = false;
    bool skipped_nonfinite = false;
};

/// Online adapter: sees unlabeled batches only.
class Adapter {
public:
    Adapter() = default;
    Adapter(const Adapter&) = delete;
    Adapter& operator=(const Adapter&) = delete;
    Adapter(Adapter&&) = default;
    Adapter& operator=(Adapter&&) = default;
    virtual ~Adapter() = default;
    virtual BatchOutcome adapt_batch(const Tensor& inputs) = 0;
    virtual const Backbone& model() const = 0;
    virtual std::size_t skipped_updates() const { return 0; }
};

/// Frozen eval-mode model (source_only, ft_only).
class FrozenAdapter final : public Adapter {
public:
    explicit FrozenAdapter(Backbone model) : model_(std::move(model)) {}
    BatchOutcome adapt_batch(const Tensor& inputs) override;
    const Backbone& model() const override { return model_; }

private:
    Backbone model_;
};

/// Per-batch re-estimation of the pooled-feature statistics; no gradients.
class NormStatAdapter final : public Adapter {
public:
    explicit NormStatAdapter(Backbone model) : model_(std::move(model)) {}
    BatchOutcome adapt_batch(const Tensor& inputs) override;
    const Backbone& model() const override { return model_; }

private:
    Backbone model_;
};

/// Mean prediction entropy as the loss, one Adam step per batch.
class EntropyMinAdapter final : public Adapter {
public:
    EntropyMinAdapter(Backbone model, TentConfig config);
    BatchOutcome adapt_batch(const Tensor& inputs) override;
    const Backbone& model() const override { return model_; }
    std::size_t skipped_updates() const override { return skipped_; }

private:
    Backbone model_;
    TentConfig config_;
    Adam adam_;
    std::size_t skipped_ = 0;
};

/// Prototype-guided self-training: entropy filter, EMA bank update,
/// consistency mask, masked cross-entropy step.
class FsTtaAdapter final : public Adapter {
public:
    FsTtaAdapter(Backbone model, PrototypeBank bank, AdaptConfig config);
    /// Bank initialized from eval-mode embeddings of the support set.
    static FsTtaAdapter from_support(Backbone model, const Dataset& support, AdaptConfig config);

    BatchOutcome adapt_batch(const Tensor& inputs) override;
    const Backbone& model() const override { return model_; }
    const PrototypeBank& bank() const noexcept { return bank_; }
    const AdaptConfig& config() const noexcept { return config_; }
    std::size_t skipped_updates() const override { return skipped_; }

private:
    Backbone model_;
    PrototypeBank bank_;
    AdaptConfig config_;
    Adam adam_;
    std::size_t skipped_ = 0;
};

// ---- streams and evaluation ------------------------------------------------------

enum class StreamOrder { shuffled, class_sorted };

/// Mini-batches of unlabeled inputs. Labels live in a separate array that only the evaluator reads.
struct LabeledStream {
    std::vector<Tensor> batches;
    std::vector<std::vector<int>> hidden_labels;

    std::size_t total() const;
};

LabeledStream make_stream(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                          StreamOrder order = StreamOrder::shuffled);

struct BatchMetrics {
    std::size_t index = 0;
    double online_acc = 0.0;
    double cumulative_acc = 0.0;
    std::size_t selected = 0;
    double mask_rate = 0.0;  ///< consistent / selected (0 when nothing was selected)
    double loss = std::numeric_limits<double>::quiet_NaN();
};

struct StreamMetrics {
    std::vector<BatchMetrics> batches;
    double final_accuracy = 0.0;  ///< cumulative online accuracy over the whole stream
    std::size_t correct = 0;
    std::size_t total = 0;
    std::size_t updates = 0;
    std::size_t skipped_updates = 0;
    std::vector<int> predictions;
};

/// Feeds every batch to the adapter in order and scores its predictions.
StreamMetrics run_stream(Adapter& adapter, const LabeledStream& stream);

/// Builds the adapter for `method`. `model` must already be fine-tuned for the
/// ft_* kinds and fs_tta; fs_tta also needs the support set for the bank.
std::unique_ptr<Adapter> make_adapter(Method method, Backbone model, const Dataset* support,
                                      const AdaptConfig& adapt, const TentConfig& tent);

}  // namespace fstta
