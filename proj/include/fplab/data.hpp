#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fplab/nn.hpp"

namespace fplab::data {

/// One image in C×H×W order with pixels in [-1, 1].
struct LabeledSample {
    /// Stable identity within the originating dataset; generated samples carry negative ids.
    std::int64_t id = 0;
    int label = 0;
    std::vector<double> pixels;
};

struct Dataset {
    std::vector<LabeledSample> samples;
    int num_classes = 0;
    nn::Shape image_shape;
    std::vector<std::string> class_names;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
};

/// A client's local partition; same representation as a dataset.
using Shard = Dataset;

/// Generator output: every sample carries the target label.
struct PoisonedDataset {
    std::vector<LabeledSample> samples;
    int target_label = 0;
    std::string generator_id;
    int generator_iterations = 0;

    std::size_t size() const noexcept { return samples.size(); }
};

enum class PartitionScheme { iid };

/// Balanced grayscale textures: each class is a sinusoidal grating with its own
/// orientation, frequency and phase, plus per-sample jitter and pixel noise.
Dataset synth_texture_dataset(int num_classes, int per_class, int size, std::uint64_t seed);

/// Loads `root/<class>/<image>`; class ids follow lexicographic directory order.
/// Unreadable files are skipped with a warning on stderr.
Dataset load_image_folder(const std::filesystem::path& root, int size, int channels = 1);

/// Writes one PNG per sample under `root/<class name>/` plus `manifest.json`.
void export_image_folder(const Dataset& dataset, const std::filesystem::path& root);

std::vector<Shard> partition_dataset(const Dataset& dataset, int n_clients, PartitionScheme scheme,
                                     std::uint64_t seed);

/// Replaces round(ratio * |clean|) samples of the shard with poison samples; size is preserved.
Shard mix_poison(const Shard& clean, const PoisonedDataset& poison, double ratio, std::uint64_t seed);

/// Splits off `test_per_class` samples of every class as a held-out set.
std::pair<Dataset, Dataset> stratified_split(const Dataset& dataset, int test_per_class, std::uint64_t seed);

/// Samples of one class (or of every other class when `exclude` is set).
Dataset filter_by_label(const Dataset& dataset, int label, bool exclude = false);

/// Packs samples into a batch tensor and the matching label list.
nn::Tensor to_tensor(const Dataset& dataset, std::span<const std::size_t> indices);
nn::Tensor to_tensor(const Dataset& dataset);
std::vector<int> labels_of(const Dataset& dataset, std::span<const std::size_t> indices);

/// Pixel mapping between [-1, 1] and 8-bit intensities.
inline std::uint8_t to_byte(double v) {
    const double x = (v + 1.0) * 127.5;
    return static_cast<std::uint8_t>(x < 0.0 ? 0.0 : x > 255.0 ? 255.0 : x + 0.5);
}
inline double from_byte(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

}  // namespace fplab::data
