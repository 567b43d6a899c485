#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fstta/data.hpp"
#include "fstta/fda.hpp"
#include "fstta/model.hpp"

namespace fstta {

struct FinetuneConfig {
    std::size_t epochs = 50;
    double lr = 5e-5;
    /// 0: the whole support set is one batch when it has at most 64 samples, else batches of 64.
    std::size_t batch_size = 0;
    FdaConfig fda;
    std::vector<ParamGroup> groups{ParamGroup::conv, ParamGroup::norm_affine, ParamGroup::head};
    std::uint64_t seed = 0;
    /// Test hook: called after each backward pass, before the optimizer step.
    std::function<void(const Backbone&)> after_backward;
};

struct FinetuneEpoch {
    std::size_t epoch = 0;
    double loss = 0.0;         ///< eval-mode mean cross-entropy on the support set after the epoch
    double support_acc = 0.0;  ///< eval-mode support accuracy after the epoch
    double train_loss = 0.0;   ///< mean of the (augmented) training objective over the epoch
};

struct FinetuneResult {
    Backbone model;
    std::vector<FinetuneEpoch> trace;
};

/// Number of support samples per class; throws DataError unless every class
/// has the same non-zero count.
std::size_t validate_support(const Dataset& support);

/// Minimizes mean support-set cross-entropy with FDA in the forward pass.
/// Throws NumericError if the loss becomes non-finite.
FinetuneResult finetune(const Backbone& model, const Dataset& support, const FinetuneConfig& config);

}  // namespace fstta
