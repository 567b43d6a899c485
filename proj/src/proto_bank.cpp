#include "fstta/proto_bank.hpp"

#include <algorithm>
#include <cmath>

#include "fstta/errors.hpp"
#include "fstta/ops.hpp"

namespace fstta {

PrototypeBank PrototypeBank::init(const Tensor& embeddings, std::span<const int> labels, std::size_t class_count,
                                  double ema_beta) {
    if (!(ema_beta >= 0.0 && ema_beta <= 1.0)) throw ConfigError("ema_beta must lie in [0, 1]");
    if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
        throw ShapeError("init_bank: embeddings " + shape_str(embeddings.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t d = embeddings.dim(1);
    PrototypeBank bank;
    bank.ema_beta_ = ema_beta;
    bank.prototypes_ = Tensor({class_count, d});
    bank.update_counts_.assign(class_count, 0);
    std::vector<std::size_t> counts(class_count, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
            throw DataError(DataError::Kind::invalid_content, "init_bank: label " + std::to_string(y) + " out of range");
        }
        const std::size_t c = static_cast<std::size_t>(y);
        ++counts[c];
        for (std::size_t j = 0; j < d; ++j) bank.prototypes_[c * d + j] += embeddings[i * d + j];
    }
    for (std::size_t c = 0; c < class_count; ++c) {
        if (counts[c] == 0) {
            throw DataError(DataError::Kind::invalid_content, "init_bank: class " + std::to_string(c) +
                                                                  " has no support samples");
        }
        for (std::size_t j = 0; j < d; ++j) bank.prototypes_[c * d + j] /= static_cast<double>(counts[c]);
    }
    return bank;
}

void PrototypeBank::ema_update(const Tensor& features, std::span<const int> pseudo_labels) {
    const std::size_t c_count = class_count(), d = dim();
    if (!pseudo_labels.empty() && (features.rank() != 2 || features.dim(0) != pseudo_labels.size() || features.dim(1) != d)) {
        throw ShapeError("ema_update: features " + shape_str(features.shape()) + " for " +
                         std::to_string(pseudo_labels.size()) + " labels of dim " + std::to_string(d));
    }
    std::vector<double> sums(c_count * d, 0.0);
    std::vector<std::size_t> counts(c_count, 0);
    for (std::size_t i = 0; i < pseudo_labels.size(); ++i) {
        const int y = pseudo_labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c_count) {
            throw ConfigError("ema_update: pseudo-label " + std::to_string(y) + " out of range");
        }
        const std::size_t c = static_cast<std::size_t>(y);
        ++counts[c];
        for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += features[i * d + j];
    }
    for (std::size_t c = 0; c < c_count; ++c) {
        if (counts[c] == 0) continue;
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (std::size_t j = 0; j < d; ++j) {
            double& m = prototypes_[c * d + j];
            m = ema_beta_ * m + (1.0 - ema_beta_) * (sums[c * d + j] * inv);
        }
        ++update_counts_[c];
    }
    ++time_step_;
}

std::span<const double> PrototypeBank::prototype(std::size_t c) const {
    return prototypes_.data().subspan(c * dim(), dim());
}

std::vector<double> PrototypeBank::classify(std::span<const double> feature, double temperature) const {
    if (!(temperature > 0.0)) throw ConfigError("prototype temperature must be positive");
    const std::size_t c_count = class_count();
    std::vector<double> logits(c_count);
    for (std::size_t c = 0; c < c_count; ++c) {
        const auto sim = cosine_sim(feature, prototype(c));
        if (sim.degenerate) ++degenerate_;
        logits[c] = sim.value / temperature;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& v : logits) {
        v = std::exp(v - mx);
        z += v;
    }
    for (auto& v : logits) v /= z;
    return logits;
}

Tensor PrototypeBank::classify_batch(const Tensor& features, double temperature) const {
    const std::size_t n = features.dim(0), d = features.dim(1), c = class_count();
    if (d != dim()) throw ShapeError("classify_batch: feature dim " + std::to_string(d) + " vs bank " + std::to_string(dim()));
    Tensor out({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        const auto p = classify(features.data().subspan(i * d, d), temperature);
        std::copy(p.begin(), p.end(), out.storage().begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return out;
}

nlohmann::json PrototypeBank::to_json() const {
    nlohmann::json j;
    j["ema_beta"] = ema_beta_;
    j["time_step"] = time_step_;
    j["update_counts"] = update_counts_;
    auto& protos = j["prototypes"] = nlohmann::json::array();
    for (std::size_t c = 0; c < class_count(); ++c) {
        const auto p = prototype(c);
        protos.push_back(std::vector<double>(p.begin(), p.end()));
    }
    return j;
}

}  // namespace fstta
