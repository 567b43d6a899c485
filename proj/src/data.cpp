#include "fstta/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "fstta/binary_io.hpp"
#include "fstta/errors.hpp"
#include "fstta/random.hpp"

namespace fstta {

void DomainSpec::validate(std::size_t channels) const {
    if (gain.size() != channels || bias.size() != channels) {
        throw ConfigError("domain " + std::to_string(domain_id) + ": gain/bias need " + std::to_string(channels) +
                          " entries");
    }
    for (double g : gain)
        if (!(g > 0.0)) throw ConfigError("domain " + std::to_string(domain_id) + ": gain must be > 0");
    if (!(noise_std >= 0.0)) throw ConfigError("domain " + std::to_string(domain_id) + ": noise_std must be >= 0");
}

Tensor Dataset::inputs(std::span<const std::size_t> indices) const {
    const std::size_t per = channels * height * width;
    Tensor out({indices.size(), channels, height, width});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& px = records.at(indices[i]).pixels;
        std::copy(px.storage().begin(), px.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return out;
}

Tensor Dataset::all_inputs() const {
    std::vector<std::size_t> idx(records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return inputs(idx);
}

std::vector<int> Dataset::labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(records.at(i).label);
    return out;
}

std::vector<int> Dataset::all_labels() const {
    std::vector<int> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.label);
    return out;
}

void Dataset::validate() const {
    const Shape expected{channels, height, width};
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.pixels.shape() != expected) {
            throw DataError(DataError::Kind::invalid_content, "record " + std::to_string(i) + " has shape " +
                                                                  shape_str(r.pixels.shape()) + ", expected " +
                                                                  shape_str(expected));
        }
        if (r.label < 0 || static_cast<std::size_t>(r.label) >= num_classes) {
            throw DataError(DataError::Kind::invalid_content,
                            "record " + std::to_string(i) + " has label " + std::to_string(r.label) + " outside [0, " +
                                std::to_string(num_classes) + ")");
        }
        if (!r.pixels.all_finite()) {
            throw DataError(DataError::Kind::invalid_content, "record " + std::to_string(i) + " has non-finite pixels");
        }
    }
}

namespace {

struct ClassLayout {
    double blob_x, blob_y, blob_width;
    double wave_angle, wave_freq, wave_phase;
    double blob2_x, blob2_y, blob2_width;
    double wave2_angle;
};

ClassLayout draw_layout(Rng& rng, double size) {
    ClassLayout l{};
    l.blob_x = size * (0.2 + 0.6 * rng.uniform());
    l.blob_y = size * (0.2 + 0.6 * rng.uniform());
    l.blob_width = size * (0.10 + 0.08 * rng.uniform());
    l.wave_angle = std::numbers::pi * rng.uniform();
    l.wave_freq = 1.0 + 2.0 * rng.uniform();
    l.wave_phase = 2.0 * std::numbers::pi * rng.uniform();
    l.blob2_x = size * (0.2 + 0.6 * rng.uniform());
    l.blob2_y = size * (0.2 + 0.6 * rng.uniform());
    l.blob2_width = size * (0.10 + 0.08 * rng.uniform());
    l.wave2_angle = std::numbers::pi * rng.uniform();
    return l;
}

double blob(double x, double y, double cx, double cy, double width) {
    const double dx = x - cx, dy = y - cy;
    return std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
}

double wave(double x, double y, double angle, double freq, double phase, double size) {
    const double u = x * std::cos(angle) + y * std::sin(angle);
    return std::cos(2.0 * std::numbers::pi * freq * u / size + phase);
}

Tensor render(const ClassLayout& l, std::size_t channels, std::size_t size) {
    const double s = static_cast<double>(size);
    Tensor t({channels, size, size});
    for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) {
            const double y = static_cast<double>(i) + 0.5, x = static_cast<double>(j) + 0.5;
            const double b1 = blob(x, y, l.blob_x, l.blob_y, l.blob_width);
            const double w1 = 0.5 * wave(x, y, l.wave_angle, l.wave_freq, l.wave_phase, s);
            const double b2 = blob(x, y, l.blob2_x, l.blob2_y, l.blob2_width);
            const double w2 = 0.3 * wave(x, y, l.wave2_angle, l.wave_freq, 0.0, s);
            const double base[3] = {b1, w1, b2 + w2};
            for (std::size_t c = 0; c < channels; ++c) t[(c * size + i) * size + j] = base[c % 3];
        }
    }
    return t;
}

double rms_distance(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace

std::vector<Tensor> make_templates(std::size_t class_count, std::size_t channels, std::size_t image_size,
                                   std::uint64_t seed) {
    if (class_count < 2) throw ConfigError("class_count must be >= 2");
    if (image_size < 4) throw ConfigError("image_size must be >= 4");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    Rng rng(derive_seed(seed, "templates"));
    std::vector<Tensor> templates;
    constexpr double kMinSeparation = 0.15;
    while (templates.size() < class_count) {
        Tensor candidate = render(draw_layout(rng, static_cast<double>(image_size)), channels, image_size);
        const bool distinct = std::all_of(templates.begin(), templates.end(), [&](const Tensor& t) {
            return rms_distance(t, candidate) > kMinSeparation;
        });
        if (distinct) templates.push_back(std::move(candidate));
    }
    return templates;
}

Dataset gen_domain(std::size_t class_count, std::size_t per_class_count, const DomainSpec& spec,
                   std::size_t image_size, std::uint64_t template_seed, std::size_t channels) {
    spec.validate(channels);
    const auto templates = make_templates(class_count, channels, image_size, template_seed);
    Dataset out;
    out.channels = channels;
    out.height = out.width = image_size;
    out.num_classes = class_count;
    out.domain_id = spec.domain_id;
    out.records.reserve(class_count * per_class_count);
    Rng rng(derive_seed(spec.seed, "samples"));
    const std::size_t hw = image_size * image_size;
    for (std::size_t c = 0; c < class_count; ++c) {
        for (std::size_t k = 0; k < per_class_count; ++k) {
            Tensor px = templates[c];
            for (std::size_t ch = 0; ch < channels; ++ch)
                for (std::size_t j = 0; j < hw; ++j) {
                    double& v = px[ch * hw + j];
                    v = spec.gain[ch] * v + spec.bias[ch] + rng.normal(0.0, spec.noise_std);
                }
            out.records.push_back({static_cast<int>(c), std::move(px), spec.domain_id});
        }
    }
    return out;
}

SupportSplit split_support(const Dataset& target, std::size_t k, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(target.num_classes);
    for (std::size_t i = 0; i < target.records.size(); ++i)
        by_class.at(static_cast<std::size_t>(target.records[i].label)).push_back(i);
    Rng rng(derive_seed(seed, "support"));
    std::vector<bool> chosen(target.records.size(), false);
    std::vector<std::size_t> support_idx;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < k) {
            throw DataError(DataError::Kind::invalid_content, "class " + std::to_string(c) + " has only " +
                                                                  std::to_string(by_class[c].size()) +
                                                                  " samples, support needs " + std::to_string(k));
        }
        const auto perm = rng.permutation(by_class[c].size());
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t idx = by_class[c][perm[j]];
            chosen[idx] = true;
            support_idx.push_back(idx);
        }
    }
    SupportSplit split;
    split.support = target;
    split.support.records.clear();
    split.remainder = split.support;
    for (std::size_t idx : support_idx) split.support.records.push_back(target.records[idx]);
    for (std::size_t i = 0; i < target.records.size(); ++i)
        if (!chosen[i]) split.remainder.records.push_back(target.records[i]);
    return split;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
    data.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(DataError::Kind::io, "cannot open " + path.string() + " for writing");
    out.write("TTAD", 4);
    io::put_uint<std::uint32_t>(out, kDatasetVersion);
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(data.records.size()));
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(data.channels));
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(data.height));
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(data.width));
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(data.num_classes));
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(data.domain_id));
    for (const auto& r : data.records) {
        io::put_uint<std::uint16_t>(out, static_cast<std::uint16_t>(r.label));
        for (double v : r.pixels.data()) io::put_f32(out, static_cast<float>(v));
    }
    if (!out) throw DataError(DataError::Kind::io, "write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataError::Kind::io, "cannot open " + path.string());
    io::expect_magic(in, "TTAD", path.string());
    const auto version = io::get_uint<std::uint32_t>(in, "version");
    if (version != kDatasetVersion) {
        throw DataError(DataError::Kind::version_mismatch, path.string() + ": dataset version " + std::to_string(version) +
                                                               ", expected " + std::to_string(kDatasetVersion));
    }
    Dataset data;
    const auto n = io::get_uint<std::uint32_t>(in, "header");
    data.channels = io::get_uint<std::uint32_t>(in, "header");
    data.height = io::get_uint<std::uint32_t>(in, "header");
    data.width = io::get_uint<std::uint32_t>(in, "header");
    data.num_classes = io::get_uint<std::uint32_t>(in, "header");
    data.domain_id = static_cast<int>(io::get_uint<std::uint32_t>(in, "header"));
    const std::size_t per = data.channels * data.height * data.width;
    data.records.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::string what = "record " + std::to_string(i);
        SampleRecord r;
        r.label = io::get_uint<std::uint16_t>(in, what);
        r.domain_id = data.domain_id;
        r.pixels = Tensor({data.channels, data.height, data.width});
        for (std::size_t j = 0; j < per; ++j) r.pixels[j] = io::get_f32(in, what);
        data.records.push_back(std::move(r));
    }
    data.validate();
    return data;
}

}  // namespace fstta
