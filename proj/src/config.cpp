#include "fstta/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>

#include "fstta/errors.hpp"
#include "fstta/random.hpp"

namespace fstta {

using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Reads the keys of one JSON object, rejecting any key nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) throw ConfigError(where_ + ": unknown key '" + item.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

json groups_json(const std::vector<ParamGroup>& groups) {
    json a = json::array();
    for (auto g : groups) a.push_back(to_string(g));
    return a;
}

std::vector<ParamGroup> groups_from(const json& j, const std::string& where) {
    if (!j.is_array()) throw ConfigError(where + ": expected an array of parameter groups");
    std::vector<ParamGroup> out;
    for (const auto& g : j) {
        if (!g.is_string()) throw ConfigError(where + ": parameter groups are strings");
        out.push_back(param_group_from_string(g.get<std::string>()));
    }
    return out;
}

json style_json(const DomainStyle& s) {
    return {{"gain", s.gain}, {"bias", s.bias}, {"noise_std", s.noise_std}};
}

DomainStyle style_from(const json& j, const std::string& where) {
    DomainStyle s;
    ObjectReader r(j, where);
    r.get("gain", s.gain);
    r.get("bias", s.bias);
    r.get("noise_std", s.noise_std);
    r.finish();
    return s;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

void check_style(const DomainStyle& s, std::size_t channels, const std::string& where) {
    require(s.gain.size() == channels && s.bias.size() == channels,
            where + ": gain and bias need one value per channel");
    for (double g : s.gain) require(g > 0.0 && std::isfinite(g), where + ": gain must be positive");
    for (double b : s.bias) require(std::isfinite(b), where + ": bias must be finite");
    require(s.noise_std >= 0.0 && std::isfinite(s.noise_std), where + ": noise_std must be >= 0");
}

void check_groups(const std::vector<ParamGroup>& groups, const std::string& where) {
    require(!groups.empty(), where + ": at least one parameter group must be trainable");
}

}  // namespace

RunConfig default_config() {
    RunConfig c;
    c.data.sources = {
        {{1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}, 0.50},
        {{1.3, 0.8, 1.1}, {0.2, -0.1, 0.0}, 0.55},
        {{0.8, 1.2, 0.9}, {-0.1, 0.2, 0.1}, 0.50},
    };
    c.data.target = {{2.0, 0.5, 0.4}, {0.5, -0.5, 0.3}, 0.50};
    return c;
}

void RunConfig::validate() const {
    require(data.classes >= 2, "data.classes must be >= 2");
    require(data.channels >= 1, "data.channels must be >= 1");
    require(data.image_size >= 4, "data.image_size must be >= 4");
    require(data.k >= 1, "data.k must be >= 1");
    require(data.per_class > data.k, "data.per_class must exceed data.k so the stream is not empty");
    require(!data.sources.empty(), "data.sources must list at least one domain");
    for (std::size_t i = 0; i < data.sources.size(); ++i)
        check_style(data.sources[i], data.channels, "data.sources[" + std::to_string(i) + "]");
    check_style(data.target, data.channels, "data.target");

    require(model.in_channels == data.channels, "model.in_channels must equal data.channels");
    require(model.num_classes == data.classes, "model.num_classes must equal data.classes");
    require(!model.widths.empty(), "model.widths must not be empty");
    for (auto w : model.widths) require(w > 0, "model.widths must be positive");
    require(model.ksize % 2 == 1, "model.ksize must be odd");
    require(model.in_eps > 0.0, "model.in_eps must be positive");

    require(source.batch_per_domain >= 1, "source.batch_per_domain must be >= 1");
    require(source.lr > 0.0, "source.lr must be positive");
    require(source.stats_momentum > 0.0 && source.stats_momentum <= 1.0, "source.stats_momentum must lie in (0, 1]");

    require(finetune.lr > 0.0, "finetune.lr must be positive");
    check_groups(finetune.groups, "finetune.groups");

    require(fda.alpha_beta > 0.0, "fda.alpha_beta must be positive");
    require(fda.p_apply >= 0.0 && fda.p_apply <= 1.0, "fda.p_apply must lie in [0, 1]");
    require(fda.eps >= 0.0, "fda.eps must be >= 0");
    for (auto s : fda.sites)
        require(s + 1 < model.widths.size(), "fda.sites: site " + std::to_string(s) + " does not exist");

    require(stage2.alpha >= 0.0 && stage2.alpha <= 1.0, "stage2.alpha must lie in [0, 1]");
    require(stage2.ema_beta >= 0.0 && stage2.ema_beta <= 1.0, "stage2.ema_beta must lie in [0, 1]");
    require(stage2.temperature > 0.0, "stage2.temperature must be positive");
    require(stage2.lr > 0.0, "stage2.lr must be positive");
    require(stage2.batch_size >= 1, "stage2.batch_size must be >= 1");
    check_groups(stage2.groups, "stage2.groups");

    require(tent.lr > 0.0, "tent.lr must be positive");
    check_groups(tent.groups, "tent.groups");

    require(!replicates.empty(), "replicates must list at least one seed");
}

FdaConfig RunConfig::fda_config() const {
    FdaConfig f;
    f.enabled = fda.enabled;
    f.alpha_beta = fda.alpha_beta;
    f.p_apply = fda.p_apply;
    f.sites = fda.sites;
    f.eps = fda.eps;
    f.detach_mixed = fda.detach_mixed;
    return f;
}

FinetuneConfig RunConfig::finetune_config(std::uint64_t replicate) const {
    FinetuneConfig f;
    f.epochs = finetune.epochs;
    f.lr = finetune.lr;
    f.batch_size = finetune.batch_size;
    f.groups = finetune.groups;
    f.fda = fda_config();
    f.seed = fda_seed(replicate);
    return f;
}

SourceTrainConfig RunConfig::source_config() const {
    SourceTrainConfig s;
    s.iterations = source.iterations;
    s.batch_per_domain = source.batch_per_domain;
    s.lr = source.lr;
    s.stats_momentum = source.stats_momentum;
    s.seed = init_seed(*this);
    return s;
}

AdaptConfig RunConfig::adapt_config() const {
    AdaptConfig a;
    a.alpha = stage2.alpha;
    a.ema_beta = stage2.ema_beta;
    a.temperature = stage2.temperature;
    a.lr = stage2.lr;
    a.groups = stage2.groups;
    a.predict_with_prototypes = stage2.predict_with_prototypes;
    return a;
}

TentConfig RunConfig::tent_config() const { return {tent.lr, tent.groups}; }

std::uint64_t data_seed(const RunConfig& config) { return derive_seed(config.seed, "data"); }
std::uint64_t init_seed(const RunConfig& config) { return derive_seed(config.seed, "init"); }
std::uint64_t support_seed(std::uint64_t replicate) { return derive_seed(replicate, "support"); }
std::uint64_t fda_seed(std::uint64_t replicate) { return derive_seed(replicate, "fda"); }
std::uint64_t stream_seed(std::uint64_t replicate) { return derive_seed(replicate, "stream"); }

json to_json(const RunConfig& c) {
    json sources = json::array();
    for (const auto& s : c.data.sources) sources.push_back(style_json(s));
    json j;
    j["data"] = {{"classes", c.data.classes},
                 {"channels", c.data.channels},
                 {"image_size", c.data.image_size},
                 {"per_class", c.data.per_class},
                 {"heldout_per_class", c.data.heldout_per_class},
                 {"k", c.data.k},
                 {"sources", sources},
                 {"target", style_json(c.data.target)}};
    j["model"] = {{"in_channels", c.model.in_channels},
                  {"widths", c.model.widths},
                  {"num_classes", c.model.num_classes},
                  {"ksize", c.model.ksize},
                  {"in_eps", c.model.in_eps}};
    j["source"] = {{"iterations", c.source.iterations},
                   {"batch_per_domain", c.source.batch_per_domain},
                   {"lr", c.source.lr},
                   {"stats_momentum", c.source.stats_momentum}};
    j["finetune"] = {{"epochs", c.finetune.epochs},
                     {"lr", c.finetune.lr},
                     {"batch_size", c.finetune.batch_size},
                     {"groups", groups_json(c.finetune.groups)}};
    j["fda"] = {{"enabled", c.fda.enabled},     {"alpha_beta", c.fda.alpha_beta}, {"p_apply", c.fda.p_apply},
                {"sites", c.fda.sites},         {"eps", c.fda.eps},               {"detach_mixed", c.fda.detach_mixed}};
    j["stage2"] = {{"alpha", c.stage2.alpha},
                   {"ema_beta", c.stage2.ema_beta},
                   {"temperature", c.stage2.temperature},
                   {"lr", c.stage2.lr},
                   {"batch_size", c.stage2.batch_size},
                   {"groups", groups_json(c.stage2.groups)},
                   {"predict_with_prototypes", c.stage2.predict_with_prototypes},
                   {"class_sorted", c.stage2.class_sorted}};
    j["tent"] = {{"lr", c.tent.lr}, {"groups", groups_json(c.tent.groups)}};
    j["seed"] = c.seed;
    j["replicates"] = c.replicates;
    j["method"] = to_string(c.method);
    return j;
}

RunConfig config_from_json(const json& j) {
    RunConfig c = default_config();
    ObjectReader top(j, "config");
    if (const json* d = top.child("data")) {
        ObjectReader r(*d, "data");
        r.get("classes", c.data.classes);
        r.get("channels", c.data.channels);
        r.get("image_size", c.data.image_size);
        r.get("per_class", c.data.per_class);
        r.get("heldout_per_class", c.data.heldout_per_class);
        r.get("k", c.data.k);
        if (const json* s = r.child("sources")) {
            if (!s->is_array()) throw ConfigError("data.sources: expected an array");
            c.data.sources.clear();
            for (std::size_t i = 0; i < s->size(); ++i)
                c.data.sources.push_back(style_from((*s)[i], "data.sources[" + std::to_string(i) + "]"));
        }
        if (const json* t = r.child("target")) c.data.target = style_from(*t, "data.target");
        r.finish();
    }
    if (const json* m = top.child("model")) {
        ObjectReader r(*m, "model");
        r.get("in_channels", c.model.in_channels);
        r.get("widths", c.model.widths);
        r.get("num_classes", c.model.num_classes);
        r.get("ksize", c.model.ksize);
        r.get("in_eps", c.model.in_eps);
        r.finish();
    }
    if (const json* s = top.child("source")) {
        ObjectReader r(*s, "source");
        r.get("iterations", c.source.iterations);
        r.get("batch_per_domain", c.source.batch_per_domain);
        r.get("lr", c.source.lr);
        r.get("stats_momentum", c.source.stats_momentum);
        r.finish();
    }
    if (const json* f = top.child("finetune")) {
        ObjectReader r(*f, "finetune");
        r.get("epochs", c.finetune.epochs);
        r.get("lr", c.finetune.lr);
        r.get("batch_size", c.finetune.batch_size);
        if (const json* g = r.child("groups")) c.finetune.groups = groups_from(*g, "finetune.groups");
        r.finish();
    }
    if (const json* f = top.child("fda")) {
        ObjectReader r(*f, "fda");
        r.get("enabled", c.fda.enabled);
        r.get("alpha_beta", c.fda.alpha_beta);
        r.get("p_apply", c.fda.p_apply);
        r.get("sites", c.fda.sites);
        r.get("eps", c.fda.eps);
        r.get("detach_mixed", c.fda.detach_mixed);
        r.finish();
    }
    if (const json* s = top.child("stage2")) {
        ObjectReader r(*s, "stage2");
        r.get("alpha", c.stage2.alpha);
        r.get("ema_beta", c.stage2.ema_beta);
        r.get("temperature", c.stage2.temperature);
        r.get("lr", c.stage2.lr);
        r.get("batch_size", c.stage2.batch_size);
        if (const json* g = r.child("groups")) c.stage2.groups = groups_from(*g, "stage2.groups");
        r.get("predict_with_prototypes", c.stage2.predict_with_prototypes);
        r.get("class_sorted", c.stage2.class_sorted);
        r.finish();
    }
    if (const json* t = top.child("tent")) {
        ObjectReader r(*t, "tent");
        r.get("lr", c.tent.lr);
        if (const json* g = r.child("groups")) c.tent.groups = groups_from(*g, "tent.groups");
        r.finish();
    }
    top.get("seed", c.seed);
    top.get("replicates", c.replicates);
    std::string method = to_string(c.method);
    top.get("method", method);
    c.method = method_from_string(method);
    top.finish();
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config " + path.string());
    out << to_json(config).dump(2) << '\n';
}

std::string config_hash(const RunConfig& config) {
    json j = to_json(config);
    j.erase("method");
    return hex64(fnv1a(j.dump()));
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataError::Kind::io, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return hex64(fnv1a(bytes));
}

}  // namespace fstta
