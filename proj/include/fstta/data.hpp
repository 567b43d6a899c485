#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fstta/tensor.hpp"

namespace fstta {

/// Channel-level "style" of a domain: pixels = gain * template + bias + noise.
struct DomainSpec {
    int domain_id = 0;
    std::vector<double> gain;  ///< per channel, > 0
    std::vector<double> bias;  ///< per channel
    double noise_std = 0.0;
    std::uint64_t seed = 0;

    void validate(std::size_t channels) const;
};

struct SampleRecord {
    int label = 0;
    Tensor pixels;  ///< C x H x W
    int domain_id = 0;
};

/// Records of one domain plus the geometry they share.
struct Dataset {
    std::size_t channels = 3;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t num_classes = 0;
    int domain_id = 0;
    std::vector<SampleRecord> records;

    std::size_t size() const noexcept { return records.size(); }
    /// Stacks the selected records into an N x C x H x W tensor.
    Tensor inputs(std::span<const std::size_t> indices) const;
    Tensor all_inputs() const;
    std::vector<int> labels(std::span<const std::size_t> indices) const;
    std::vector<int> all_labels() const;
    /// Throws DataError on inconsistent shapes or labels.
    void validate() const;
};

/// Class templates shared by every domain; one C x H x W tensor per class.
/// Channel 0 carries a Gaussian blob, channel 1 a sinusoidal grating and
/// channel 2 a second blob plus a weaker grating, all placed per class from `seed`.
std::vector<Tensor> make_templates(std::size_t class_count, std::size_t channels, std::size_t image_size,
                                   std::uint64_t seed);

/// `per_class_count` samples of every class, class-major order, under the domain's style.
Dataset gen_domain(std::size_t class_count, std::size_t per_class_count, const DomainSpec& spec,
                   std::size_t image_size, std::uint64_t template_seed, std::size_t channels = 3);

struct SupportSplit {
    Dataset support;    ///< exactly k per class
    Dataset remainder;  ///< everything else, original order
};

/// Seeded per-class draw of k support samples; throws DataError naming a class with fewer than k samples.
SupportSplit split_support(const Dataset& target, std::size_t k, std::uint64_t seed);

/// Little-endian "TTAD" file: header then (u16 label, f32 pixels) per record.
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

inline constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace fstta
