#include "fstta/finetune.hpp"

#include <cmath>

#include "fstta/errors.hpp"
#include "fstta/ops.hpp"
#include "fstta/optim.hpp"
#include "fstta/random.hpp"

namespace fstta {

std::size_t validate_support(const Dataset& support) {
    std::vector<std::size_t> counts(support.num_classes, 0);
    for (const auto& r : support.records) {
        if (r.label < 0 || static_cast<std::size_t>(r.label) >= support.num_classes) {
            throw DataError(DataError::Kind::invalid_content, "support label " + std::to_string(r.label) + " out of range");
        }
        ++counts[static_cast<std::size_t>(r.label)];
    }
    if (counts.empty() || counts[0] == 0) throw DataError(DataError::Kind::invalid_content, "support set misses class 0");
    for (std::size_t c = 1; c < counts.size(); ++c) {
        if (counts[c] != counts[0]) {
            throw DataError(DataError::Kind::invalid_content, "support class " + std::to_string(c) + " has " +
                                                                  std::to_string(counts[c]) + " samples, class 0 has " +
                                                                  std::to_string(counts[0]));
        }
    }
    return counts[0];
}

namespace {

std::pair<double, double> support_loss_and_accuracy(const Backbone& model, const Tensor& inputs,
                                                    const std::vector<int>& labels) {
    NoGradGuard guard;
    const auto out = model.forward(inputs);
    const Var losses = cross_entropy(out.logits, labels);
    double loss = 0.0;
    std::size_t correct = 0;
    const Tensor& logits = out.logits.value();
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        loss += losses.value()[i];
        correct += static_cast<int>(argmax(logits.data().subspan(i * c, c))) == labels[i];
    }
    const double n = static_cast<double>(labels.size());
    return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

FinetuneResult finetune(const Backbone& model, const Dataset& support, const FinetuneConfig& config) {
    validate_support(support);
    if (!(config.lr > 0.0)) throw ConfigError("finetune lr must be positive");
    FinetuneResult result{model, {}};
    if (config.epochs == 0) return result;

    Backbone& net = result.model;
    Adam adam(net.parameters(config.groups), AdamConfig{.lr = config.lr});
    Rng rng(derive_seed(config.seed, "finetune"));
    const std::size_t n = support.size();
    const std::size_t batch = config.batch_size ? config.batch_size : (n <= 64 ? n : 64);
    const Tensor all_inputs = support.all_inputs();
    const std::vector<int> all_labels = support.all_labels();

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = batch >= n ? std::vector<std::size_t>{} : rng.permutation(n);
        double objective = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < n; begin += batch) {
            const std::size_t end = std::min(n, begin + batch);
            Tensor inputs;
            std::vector<int> labels;
            if (order.empty()) {
                inputs = all_inputs;
                labels = all_labels;
            } else {
                std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                             order.begin() + static_cast<std::ptrdiff_t>(end));
                inputs = support.inputs(idx);
                labels = support.labels(idx);
            }
            const auto plans = make_plans(end - begin, rng, config.fda);
            net.zero_grad();
            const auto out = net.forward(inputs, {.mode = Mode::train,
                                                  .fda = plans,
                                                  .fda_eps = config.fda.eps,
                                                  .fda_detach = config.fda.detach_mixed});
            Var loss = mean(cross_entropy(out.logits, labels));
            const double value = loss.value().item();
            if (!std::isfinite(value)) {
                throw NumericError("fine-tuning loss became non-finite at epoch " + std::to_string(epoch));
            }
            loss.backward();
            if (config.after_backward) config.after_backward(net);
            adam.step();
            objective += value;
            ++batches;
        }
        const auto [loss, acc] = support_loss_and_accuracy(net, all_inputs, all_labels);
        result.trace.push_back({epoch, loss, acc, objective / static_cast<double>(batches)});
    }
    return result;
}

}  // namespace fstta
