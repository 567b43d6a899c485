#include "fstta/stream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fstta/errors.hpp"
#include "fstta/ops.hpp"
#include "fstta/random.hpp"

namespace fstta {

std::vector<std::size_t> entropy_filter(std::span<const double> entropies, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha " + std::to_string(alpha) + " outside [0, 1]");
    const std::size_t b = entropies.size();
    // The small slack keeps products such as 0.7 * 10 from flooring to 6.
    const auto keep = std::min(b, static_cast<std::size_t>(std::floor(alpha * static_cast<double>(b) + 1e-9)));
    std::vector<std::size_t> order(b);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return entropies[i] < entropies[j]; });
    order.resize(keep);
    std::sort(order.begin(), order.end());
    return order;
}

std::vector<int> pseudo_label(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("pseudo_label: expected N x C logits, got " + shape_str(logits.shape()));
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>(argmax(logits.data().subspan(i * c, c)));
    return out;
}

bool consistency_mask(std::span<const double> model_probs, std::span<const double> proto_probs) {
    return argmax(model_probs) == argmax(proto_probs);
}

std::optional<Var> online_loss(const Var& logits, std::span<const int> pseudo_labels, std::span<const int> masks) {
    if (masks.size() != pseudo_labels.size()) throw ShapeError("online_loss: masks and pseudo-labels differ in length");
    Tensor weights({masks.size()});
    double total = 0.0;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        weights[i] = masks[i] ? 1.0 : 0.0;
        total += weights[i];
    }
    if (total == 0.0) return std::nullopt;
    return weighted_mean(cross_entropy(logits, pseudo_labels), weights);
}

std::string to_string(Method method) {
    switch (method) {
        case Method::source_only: return "source_only";
        case Method::norm_stat: return "norm_stat";
        case Method::entropy_min: return "entropy_min";
        case Method::ft_only: return "ft_only";
        case Method::ft_entropy_min: return "ft_entropy_min";
        case Method::fs_tta: return "fs_tta";
    }
    return "?";
}

Method method_from_string(const std::string& name) {
    if (name == "source_only" || name == "erm") return Method::source_only;
    if (name == "norm_stat" || name == "bn") return Method::norm_stat;
    if (name == "entropy_min" || name == "tent") return Method::entropy_min;
    if (name == "ft_only" || name == "ft") return Method::ft_only;
    if (name == "ft_entropy_min" || name == "ft_tent") return Method::ft_entropy_min;
    if (name == "fs_tta") return Method::fs_tta;
    throw ConfigError("unknown method '" + name + "' (erm, bn, tent, ft, ft_tent, fs_tta)");
}

bool method_uses_finetune(Method method) {
    return method == Method::ft_only || method == Method::ft_entropy_min || method == Method::fs_tta;
}

BatchOutcome FrozenAdapter::adapt_batch(const Tensor& inputs) {
    BatchOutcome out;
    out.predictions = pseudo_label(model_.infer(inputs).logits.value());
    return out;
}

BatchOutcome NormStatAdapter::adapt_batch(const Tensor& inputs) {
    NoGradGuard guard;
    BatchOutcome out;
    out.predictions = pseudo_label(model_.forward(inputs, {.batch_embedding_stats = true}).logits.value());
    return out;
}

EntropyMinAdapter::EntropyMinAdapter(Backbone model, TentConfig config)
    : model_(std::move(model)), config_(std::move(config)), adam_(model_.parameters(config_.groups), {.lr = config_.lr}) {}

BatchOutcome EntropyMinAdapter::adapt_batch(const Tensor& inputs) {
    BatchOutcome out;
    model_.zero_grad();
    const auto fwd = model_.forward(inputs, {.mode = Mode::train});
    out.predictions = pseudo_label(fwd.logits.value());
    out.selected = out.consistent = inputs.dim(0);
    Var loss = mean(softmax_entropy(fwd.logits));
    out.loss = loss.value().item();
    if (!std::isfinite(out.loss)) {
        ++skipped_;
        out.skipped_nonfinite = true;
        return out;
    }
    loss.backward();
    out.updated = adam_.step();
    if (!out.updated) {
        ++skipped_;
        out.skipped_nonfinite = true;
    }
    return out;
}

FsTtaAdapter::FsTtaAdapter(Backbone model, PrototypeBank bank, AdaptConfig config)
    : model_(std::move(model)),
      bank_(std::move(bank)),
      config_(std::move(config)),
      adam_(model_.parameters(config_.groups), {.lr = config_.lr}) {
    if (!(config_.alpha >= 0.0 && config_.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
}

FsTtaAdapter FsTtaAdapter::from_support(Backbone model, const Dataset& support, AdaptConfig config) {
    const auto embeddings = model.infer(support.all_inputs()).embedding.value();
    auto bank = PrototypeBank::init(embeddings, support.all_labels(), model.config().num_classes, config.ema_beta);
    return FsTtaAdapter(std::move(model), std::move(bank), std::move(config));
}

BatchOutcome FsTtaAdapter::adapt_batch(const Tensor& inputs) {
    BatchOutcome out;
    // (1) pre-update forward; these predictions are the online output.
    const auto fwd = model_.infer(inputs);
    const Tensor& logits = fwd.logits.value();
    const Tensor& embedding = fwd.embedding.value();
    const Tensor probs = softmax_rows(logits);
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (config_.predict_with_prototypes) {
        out.predictions = pseudo_label(bank_.classify_batch(embedding, config_.temperature));
    } else {
        out.predictions = pseudo_label(logits);
    }

    // (2) entropy filter
    std::vector<double> entropies(b);
    for (std::size_t i = 0; i < b; ++i) entropies[i] = entropy(probs.data().subspan(i * c, c));
    const auto selected = entropy_filter(entropies, config_.alpha);
    out.selected = selected.size();
    if (selected.empty()) return out;

    // (3) pseudo-labels, (4) bank update
    const Tensor selected_logits = logits.gather_rows(selected);
    const Tensor selected_embedding = embedding.gather_rows(selected);
    const auto labels = pseudo_label(selected_logits);
    bank_.ema_update(selected_embedding, labels);

    // (5) prototype classifier, (6) consistency mask
    const Tensor proto_probs = bank_.classify_batch(selected_embedding, config_.temperature);
    const Tensor selected_probs = probs.gather_rows(selected);
    std::vector<int> masks(selected.size());
    for (std::size_t j = 0; j < selected.size(); ++j) {
        masks[j] = consistency_mask(selected_probs.data().subspan(j * c, c), proto_probs.data().subspan(j * c, c));
        out.consistent += static_cast<std::size_t>(masks[j]);
    }
    if (out.consistent == 0) return out;

    // (7) masked loss on a graph-building forward of the selected samples, (8) one step
    model_.zero_grad();
    const auto train_fwd = model_.forward(inputs.gather_rows(selected), {.mode = Mode::train});
    auto loss = online_loss(train_fwd.logits, labels, masks);
    out.loss = loss->value().item();
    if (!std::isfinite(out.loss)) {
        ++skipped_;
        out.skipped_nonfinite = true;
        return out;
    }
    loss->backward();
    out.updated = adam_.step();
    if (!out.updated) {
        ++skipped_;
        out.skipped_nonfinite = true;
    }
    return out;
}

std::size_t LabeledStream::total() const {
    std::size_t n = 0;
    for (const auto& b : batches) n += b.dim(0);
    return n;
}

LabeledStream make_stream(const Dataset& data, std::size_t batch_size, std::uint64_t seed, StreamOrder order) {
    if (batch_size == 0) throw ConfigError("stream batch size must be positive");
    std::vector<std::size_t> idx;
    if (order == StreamOrder::shuffled) {
        Rng rng(derive_seed(seed, "stream"));
        idx = rng.permutation(data.size());
    } else {
        idx.resize(data.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return data.records[a].label < data.records[b].label; });
    }
    LabeledStream stream;
    for (std::size_t begin = 0; begin < idx.size(); begin += batch_size) {
        const std::size_t end = std::min(idx.size(), begin + batch_size);
        std::span<const std::size_t> part(idx.data() + begin, end - begin);
        stream.batches.push_back(data.inputs(part));
        stream.hidden_labels.push_back(data.labels(part));
    }
    return stream;
}

StreamMetrics run_stream(Adapter& adapter, const LabeledStream& stream) {
    StreamMetrics metrics;
    for (std::size_t t = 0; t < stream.batches.size(); ++t) {
        const auto outcome = adapter.adapt_batch(stream.batches[t]);
        const auto& truth = stream.hidden_labels[t];
        if (outcome.predictions.size() != truth.size()) throw Error("adapter returned the wrong number of predictions");
        std::size_t correct = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) correct += outcome.predictions[i] == truth[i];
        metrics.correct += correct;
        metrics.total += truth.size();
        metrics.updates += outcome.updated;
        metrics.predictions.insert(metrics.predictions.end(), outcome.predictions.begin(), outcome.predictions.end());
        BatchMetrics bm;
        bm.index = t;
        bm.online_acc = static_cast<double>(correct) / static_cast<double>(truth.size());
        bm.cumulative_acc = static_cast<double>(metrics.correct) / static_cast<double>(metrics.total);
        bm.selected = outcome.selected;
        bm.mask_rate = outcome.selected ? static_cast<double>(outcome.consistent) / static_cast<double>(outcome.selected) : 0.0;
        bm.loss = outcome.loss;
        metrics.batches.push_back(bm);
    }
    metrics.final_accuracy = metrics.total ? static_cast<double>(metrics.correct) / static_cast<double>(metrics.total) : 0.0;
    metrics.skipped_updates = adapter.skipped_updates();
    return metrics;
}

std::unique_ptr<Adapter> make_adapter(Method method, Backbone model, const Dataset* support,
                                      const AdaptConfig& adapt, const TentConfig& tent) {
    switch (method) {
        case Method::source_only:
        case Method::ft_only: return std::make_unique<FrozenAdapter>(std::move(model));
        case Method::norm_stat: return std::make_unique<NormStatAdapter>(std::move(model));
        case Method::entropy_min:
        case Method::ft_entropy_min: return std::make_unique<EntropyMinAdapter>(std::move(model), tent);
        case Method::fs_tta:
            if (!support) throw ConfigError("fs_tta needs a support set to initialize the prototype bank");
            return std::make_unique<FsTtaAdapter>(FsTtaAdapter::from_support(std::move(model), *support, adapt));
    }
    throw ConfigError("unhandled method");
}

}  // namespace fstta
