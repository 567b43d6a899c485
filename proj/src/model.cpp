#include "fstta/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "fstta/binary_io.hpp"
#include "fstta/errors.hpp"
#include "fstta/ops.hpp"
#include "fstta/optim.hpp"
#include "fstta/random.hpp"

namespace fstta {

std::string to_string(ParamGroup group) {
    switch (group) {
        case ParamGroup::conv: return "conv";
        case ParamGroup::norm_affine: return "norm_affine";
        case ParamGroup::head: return "head";
    }
    return "?";
}

ParamGroup param_group_from_string(const std::string& name) {
    if (name == "conv") return ParamGroup::conv;
    if (name == "norm_affine") return ParamGroup::norm_affine;
    if (name == "head") return ParamGroup::head;
    throw ConfigError("unknown parameter group '" + name + "' (conv, norm_affine, head)");
}

Backbone::Backbone(BackboneConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
    if (config_.widths.empty()) throw ConfigError("backbone needs at least one block");
    if (config_.num_classes < 2) throw ConfigError("backbone needs at least two classes");
    if (config_.ksize % 2 == 0) throw ConfigError("kernel size must be odd");
    Rng rng(derive_seed(init_seed, "backbone-init"));
    std::size_t in = config_.in_channels;
    for (std::size_t b = 0; b < config_.widths.size(); ++b) {
        const std::size_t out = config_.widths[b];
        const std::string prefix = "block" + std::to_string(b + 1);
        Tensor w({out, in, config_.ksize, config_.ksize});
        const double std_he = std::sqrt(2.0 / static_cast<double>(in * config_.ksize * config_.ksize));
        for (auto& v : w.storage()) v = rng.normal(0.0, std_he);
        params_.push_back({prefix + ".conv.weight", ParamGroup::conv, Var::parameter(std::move(w))});
        params_.push_back({prefix + ".norm.gamma", ParamGroup::norm_affine, Var::parameter(Tensor({out}, 1.0))});
        params_.push_back({prefix + ".norm.beta", ParamGroup::norm_affine, Var::parameter(Tensor({out}, 0.0))});
        in = out;
    }
    const std::size_t d = config_.embedding_dim();
    Tensor hw({d, config_.num_classes});
    const double std_head = std::sqrt(1.0 / static_cast<double>(d));
    for (auto& v : hw.storage()) v = rng.normal(0.0, std_head);
    params_.push_back({"head.weight", ParamGroup::head, Var::parameter(std::move(hw))});
    params_.push_back({"head.bias", ParamGroup::head, Var::parameter(Tensor({config_.num_classes}, 0.0))});
    running_mean_ = Tensor({d}, 0.0);
    running_var_ = Tensor({d}, 1.0);
}

Backbone::Backbone(const Backbone& other)
    : config_(other.config_), running_mean_(other.running_mean_), running_var_(other.running_var_) {
    params_.reserve(other.params_.size());
    for (const auto& p : other.params_) params_.push_back({p.name, p.group, Var::parameter(p.var.value())});
}

Backbone& Backbone::operator=(const Backbone& other) {
    if (this != &other) *this = Backbone(other);
    return *this;
}

ForwardResult Backbone::forward(const Tensor& x, const ForwardOptions& options) const {
    if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
        throw ShapeError("backbone expects N x " + std::to_string(config_.in_channels) + " x H x W input, got " +
                         shape_str(x.shape()));
    }
    Var h(x);
    const std::size_t blocks = config_.widths.size();
    for (std::size_t b = 0; b < blocks; ++b) {
        const auto& w = params_[3 * b].var;
        const auto& gamma = params_[3 * b + 1].var;
        const auto& beta = params_[3 * b + 2].var;
        h = relu(instance_norm(conv2d(h, w), gamma, beta, config_.in_eps));
        if (options.mode == Mode::train && b + 1 < blocks) {
            for (const auto& plan : options.fda)
                if (plan.active_at(b)) h = apply_fda(h, plan, options.fda_eps, options.fda_detach);
        }
    }
    Var embedding = global_avg_pool(h);
    if (options.batch_embedding_stats) {
        // Standardize with this batch's statistics, then restore the source-time statistics.
        const std::size_t n = embedding.shape()[0], d = embedding.shape()[1];
        Tensor mapped = embedding.value();
        for (std::size_t j = 0; j < d; ++j) {
            double m = 0.0, v = 0.0;
            for (std::size_t i = 0; i < n; ++i) m += mapped[i * d + j];
            m /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) v += (mapped[i * d + j] - m) * (mapped[i * d + j] - m);
            v /= static_cast<double>(n);
            const double eps = config_.in_eps;
            const double scale_j = std::sqrt(running_var_[j] + eps) / std::sqrt(v + eps);
            for (std::size_t i = 0; i < n; ++i) mapped[i * d + j] = (mapped[i * d + j] - m) * scale_j + running_mean_[j];
        }
        embedding = Var(std::move(mapped));
    }
    const auto& head_w = params_[3 * blocks].var;
    const auto& head_b = params_[3 * blocks + 1].var;
    Var logits = add_bias(matmul(embedding, head_w), head_b);
    return {std::move(embedding), std::move(logits)};
}

ForwardResult Backbone::infer(const Tensor& x) const {
    NoGradGuard guard;
    return forward(x);
}

std::vector<Var> Backbone::parameters(std::span<const ParamGroup> groups) const {
    std::vector<Var> out;
    for (const auto& p : params_)
        if (std::find(groups.begin(), groups.end(), p.group) != groups.end()) out.push_back(p.var);
    return out;
}

std::vector<Var> Backbone::all_parameters() const {
    std::vector<Var> out;
    for (const auto& p : params_) out.push_back(p.var);
    return out;
}

const NamedParam& Backbone::parameter(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p;
    throw ConfigError("no parameter named " + name);
}

void Backbone::track_embedding_stats(const Tensor& embedding, double momentum) {
    const std::size_t n = embedding.dim(0), d = embedding.dim(1);
    for (std::size_t j = 0; j < d; ++j) {
        double m = 0.0, v = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += embedding[i * d + j];
        m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) v += (embedding[i * d + j] - m) * (embedding[i * d + j] - m);
        v /= static_cast<double>(n);
        running_mean_[j] = (1.0 - momentum) * running_mean_[j] + momentum * m;
        running_var_[j] = (1.0 - momentum) * running_var_[j] + momentum * v;
    }
}

void Backbone::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

std::uint64_t Backbone::parameter_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const Tensor& t) {
        for (double v : t.data()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 0x100000001b3ULL;
            }
        }
    };
    for (const auto& p : params_) mix(p.var.value());
    mix(running_mean_);
    mix(running_var_);
    return h;
}

bool parameters_equal(const Backbone& a, const Backbone& b) {
    if (a.parameters().size() != b.parameters().size()) return false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        if (!(a.parameters()[i].var.value() == b.parameters()[i].var.value())) return false;
    return a.embedding_running_mean() == b.embedding_running_mean() &&
           a.embedding_running_var() == b.embedding_running_var();
}

std::vector<int> predict(const Backbone& model, const Tensor& inputs, std::size_t batch_size) {
    std::vector<int> out;
    const std::size_t n = inputs.dim(0);
    out.reserve(n);
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
        const std::size_t end = std::min(n, begin + batch_size);
        const auto result = model.infer(inputs.slice_rows(begin, end));
        const Tensor& logits = result.logits.value();
        const std::size_t c = logits.dim(1);
        for (std::size_t i = 0; i < end - begin; ++i)
            out.push_back(static_cast<int>(argmax(logits.data().subspan(i * c, c))));
    }
    return out;
}

double eval_accuracy(const Backbone& model, const Dataset& data, std::size_t batch_size) {
    if (data.records.empty()) throw DataError(DataError::Kind::invalid_content, "eval_accuracy on an empty dataset");
    const auto predictions = predict(model, data.all_inputs(), batch_size);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == data.records[i].label;
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

std::vector<TrainPoint> train_source(Backbone& model, std::span<const Dataset> sources,
                                     const SourceTrainConfig& config) {
    if (sources.empty()) throw ConfigError("train_source needs at least one source domain");
    for (const auto& s : sources) {
        if (s.records.empty()) throw DataError(DataError::Kind::invalid_content, "empty source domain");
        if (s.num_classes != model.config().num_classes) {
            throw DataError(DataError::Kind::invalid_content, "source domain class count does not match the model");
        }
    }
    Adam adam(model.all_parameters(), AdamConfig{.lr = config.lr});
    Rng rng(derive_seed(config.seed, "source-batches"));
    std::vector<std::vector<std::size_t>> orders(sources.size());
    std::vector<std::size_t> cursors(sources.size(), 0);
    for (std::size_t d = 0; d < sources.size(); ++d) orders[d] = rng.permutation(sources[d].size());

    std::vector<TrainPoint> log;
    for (std::size_t it = 0; it < config.iterations; ++it) {
        std::vector<Tensor> parts;
        std::vector<int> labels;
        for (std::size_t d = 0; d < sources.size(); ++d) {
            std::vector<std::size_t> idx;
            for (std::size_t k = 0; k < config.batch_per_domain; ++k) {
                if (cursors[d] == orders[d].size()) {
                    orders[d] = rng.permutation(sources[d].size());
                    cursors[d] = 0;
                }
                idx.push_back(orders[d][cursors[d]++]);
            }
            parts.push_back(sources[d].inputs(idx));
            const auto l = sources[d].labels(idx);
            labels.insert(labels.end(), l.begin(), l.end());
        }
        const Tensor batch = concat_rows(parts);
        adam.zero_grad();
        auto out = model.forward(batch, {.mode = Mode::train});
        Var loss = mean(cross_entropy(out.logits, labels));
        const double loss_value = loss.value().item();
        if (!std::isfinite(loss_value)) {
            throw NumericError("source training diverged at iteration " + std::to_string(it) + " (loss " +
                               std::to_string(loss_value) + ")");
        }
        loss.backward();
        adam.step();
        model.track_embedding_stats(out.embedding.value(), config.stats_momentum);
        if (config.log_every && (it % config.log_every == 0 || it + 1 == config.iterations)) {
            const Tensor& logits = out.logits.value();
            const std::size_t c = logits.dim(1);
            std::size_t correct = 0;
            for (std::size_t i = 0; i < labels.size(); ++i)
                correct += static_cast<int>(argmax(logits.data().subspan(i * c, c))) == labels[i];
            log.push_back({it, loss_value, static_cast<double>(correct) / static_cast<double>(labels.size())});
        }
    }
    return log;
}

namespace {

struct Blob {
    std::string name;
    const Tensor* tensor;
};

std::vector<Blob> blobs_of(const Backbone& model) {
    std::vector<Blob> out;
    for (const auto& p : model.parameters()) out.push_back({p.name, &p.var.value()});
    out.push_back({"embedding.running_mean", &model.embedding_running_mean()});
    out.push_back({"embedding.running_var", &model.embedding_running_var()});
    return out;
}

BackboneConfig read_descriptor(std::istream& in, const std::string& file) {
    io::expect_magic(in, "TTAM", file);
    const auto version = io::get_uint<std::uint32_t>(in, "version");
    if (version != kModelVersion) {
        throw DataError(DataError::Kind::version_mismatch,
                        file + ": model version " + std::to_string(version) + ", expected " + std::to_string(kModelVersion));
    }
    BackboneConfig cfg;
    cfg.in_channels = io::get_uint<std::uint32_t>(in, "descriptor");
    cfg.ksize = io::get_uint<std::uint32_t>(in, "descriptor");
    const auto blocks = io::get_uint<std::uint32_t>(in, "descriptor");
    if (blocks == 0 || blocks > 64) throw DataError(DataError::Kind::invalid_content, file + ": implausible block count");
    cfg.widths.resize(blocks);
    for (auto& w : cfg.widths) w = io::get_uint<std::uint32_t>(in, "descriptor");
    const auto d = io::get_uint<std::uint32_t>(in, "descriptor");
    cfg.num_classes = io::get_uint<std::uint32_t>(in, "descriptor");
    cfg.in_eps = io::get_f64(in, "descriptor");
    if (d != cfg.embedding_dim()) {
        throw DataError(DataError::Kind::invalid_content, file + ": embedding dim disagrees with widths");
    }
    return cfg;
}

void read_blobs(std::istream& in, const std::string& file, Backbone& model) {
    const auto count = io::get_uint<std::uint32_t>(in, "blob count");
    std::vector<Tensor*> targets;
    std::vector<std::string> names;
    for (auto& p : model.parameters()) {
        targets.push_back(&p.var.mutable_value());
        names.push_back(p.name);
    }
    targets.push_back(&model.embedding_running_mean());
    names.push_back("embedding.running_mean");
    targets.push_back(&model.embedding_running_var());
    names.push_back("embedding.running_var");
    if (count != targets.size()) {
        throw ShapeError(file + ": file holds " + std::to_string(count) + " tensors, model expects " +
                         std::to_string(targets.size()));
    }
    for (std::size_t b = 0; b < targets.size(); ++b) {
        const auto len = io::get_uint<std::uint32_t>(in, "blob name");
        if (len > 4096) throw DataError(DataError::Kind::invalid_content, file + ": corrupt blob name length");
        std::string name(len, '\0');
        io::read_exact(in, name.data(), len, "blob name");
        const auto rank = io::get_uint<std::uint32_t>(in, name);
        if (rank > 8) throw DataError(DataError::Kind::invalid_content, file + ": corrupt rank for " + name);
        Shape shape(rank);
        for (auto& s : shape) s = io::get_uint<std::uint32_t>(in, name);
        if (name != names[b]) {
            throw ShapeError(file + ": tensor " + std::to_string(b) + " is '" + name + "', model expects '" + names[b] + "'");
        }
        if (shape != targets[b]->shape()) {
            throw ShapeError(file + ": parameter " + name + " has shape " + shape_str(shape) + ", model expects " +
                             shape_str(targets[b]->shape()));
        }
        for (auto& v : targets[b]->storage()) v = io::get_f64(in, name);
    }
}

}  // namespace

void save_model(const std::filesystem::path& path, const Backbone& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(DataError::Kind::io, "cannot open " + path.string() + " for writing");
    const auto& cfg = model.config();
    out.write("TTAM", 4);
    io::put_uint<std::uint32_t>(out, kModelVersion);
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.in_channels));
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.ksize));
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.widths.size()));
    for (auto w : cfg.widths) io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(w));
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.embedding_dim()));
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.num_classes));
    io::put_f64(out, cfg.in_eps);
    const auto blobs = blobs_of(model);
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(blobs.size()));
    for (const auto& b : blobs) {
        io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
        out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
        io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(b.tensor->rank()));
        for (auto s : b.tensor->shape()) io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(s));
        for (double v : b.tensor->data()) io::put_f64(out, v);
    }
    if (!out) throw DataError(DataError::Kind::io, "write failed for " + path.string());
}

Backbone load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataError::Kind::io, "cannot open " + path.string());
    Backbone model(read_descriptor(in, path.string()), 0);
    read_blobs(in, path.string(), model);
    return model;
}

void load_model_into(const std::filesystem::path& path, Backbone& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataError::Kind::io, "cannot open " + path.string());
    const auto cfg = read_descriptor(in, path.string());
    if (cfg.in_channels != model.config().in_channels || cfg.ksize != model.config().ksize) {
        throw ShapeError(path.string() + ": parameter block1.conv.weight has input channels/kernel " +
                         std::to_string(cfg.in_channels) + "/" + std::to_string(cfg.ksize) + ", model expects " +
                         std::to_string(model.config().in_channels) + "/" + std::to_string(model.config().ksize));
    }
    Backbone staged = model;
    read_blobs(in, path.string(), staged);
    model = std::move(staged);
}

}  // namespace fstta
