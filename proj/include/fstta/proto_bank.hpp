#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"

#include "fstta/tensor.hpp"

namespace fstta {

/// One prototype per class, seeded from the support set and tracked by EMA.
class PrototypeBank {
public:
    /// Per-class mean of the support embeddings (N x D). Throws DataError naming
    /// the first class without a support sample.
    static PrototypeBank init(const Tensor& embeddings, std::span<const int> labels, std::size_t class_count,
                              double ema_beta);

    /// m_c <- beta * m_c + (1 - beta) * mean of the rows pseudo-labelled c.
    /// Classes absent from `pseudo_labels` are untouched. The time step advances once per call.
    void ema_update(const Tensor& features, std::span<const int> pseudo_labels);

    /// Softmax over cosine similarity to each prototype, divided by `temperature`.
    std::vector<double> classify(std::span<const double> feature, double temperature) const;
    /// Row-wise classify over an N x D tensor; returns N x C probabilities.
    Tensor classify_batch(const Tensor& features, double temperature) const;

    const Tensor& prototypes() const noexcept { return prototypes_; }
    std::span<const double> prototype(std::size_t c) const;
    std::size_t class_count() const noexcept { return prototypes_.dim(0); }
    std::size_t dim() const noexcept { return prototypes_.dim(1); }
    double ema_beta() const noexcept { return ema_beta_; }
    std::size_t time_step() const noexcept { return time_step_; }
    const std::vector<std::size_t>& update_counts() const noexcept { return update_counts_; }
    /// Similarities computed against a zero vector so far (forced to 0).
    std::size_t degenerate_similarities() const noexcept { return degenerate_; }

    nlohmann::json to_json() const;

private:
    Tensor prototypes_;
    double ema_beta_ = 0.9;
    std::vector<std::size_t> update_counts_;
    std::size_t time_step_ = 0;
    mutable std::size_t degenerate_ = 0;
};

}  // namespace fstta
