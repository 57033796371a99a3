#include "fplab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "fplab/errors.hpp"
#include "fplab/rng.hpp"

namespace fplab::data {

namespace fs = std::filesystem;

namespace {

std::string class_dir_name(const Dataset& ds, int label) {
    if (label < static_cast<int>(ds.class_names.size()) && !ds.class_names[label].empty())
        return ds.class_names[label];
    std::ostringstream os;
    os << "class_" << std::setw(2) << std::setfill('0') << label;
    return os.str();
}

std::string fnv1a_hex(const std::vector<unsigned char>& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

Dataset empty_like(const Dataset& ds) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.image_shape = ds.image_shape;
    out.class_names = ds.class_names;
    return out;
}

}  // namespace

Dataset synth_texture_dataset(int num_classes, int per_class, int size, std::uint64_t seed) {
    if (num_classes < 2) throw InvalidConfig("synth_texture_dataset: num_classes must be >= 2");
    if (size < 8) throw InvalidConfig("synth_texture_dataset: size must be >= 8");
    if (per_class < 1) throw InvalidConfig("synth_texture_dataset: per_class must be >= 1");

    Dataset ds;
    ds.num_classes = num_classes;
    ds.image_shape = {1, size, size};
    Rng rng(derive_seed(seed, {stream::data}));
    std::uniform_real_distribution<double> amp(0.55, 0.85);
    std::uniform_real_distribution<double> phase_jitter(-0.5, 0.5);
    std::uniform_real_distribution<double> angle_jitter(-0.08, 0.08);
    std::normal_distribution<double> noise(0.0, 0.15);

    const double pi = std::numbers::pi;
    std::int64_t next_id = 0;
    for (int c = 0; c < num_classes; ++c) {
        const double theta = pi * c / num_classes;
        const double freq = 1.5 + 0.75 * (c % 3);
        const double phase = 1.3 * c;
        for (int k = 0; k < per_class; ++k) {
            LabeledSample s;
            s.id = next_id++;
            s.label = c;
            s.pixels.resize(static_cast<std::size_t>(size) * size);
            const double a = amp(rng);
            const double th = theta + angle_jitter(rng);
            const double ph = phase + phase_jitter(rng);
            const double ct = std::cos(th), st = std::sin(th);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double u = (x * ct + y * st) / size;
                    const double v = a * std::sin(2.0 * pi * freq * u + ph) + noise(rng);
                    s.pixels[static_cast<std::size_t>(y) * size + x] = std::clamp(v, -1.0, 1.0);
                }
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

Dataset load_image_folder(const fs::path& root, int size, int channels) {
    if (channels != 1 && channels != 3) throw InvalidConfig("load_image_folder: channels must be 1 or 3");
    if (size < 1) throw InvalidConfig("load_image_folder: size must be positive");
    if (!fs::is_directory(root)) throw InvalidDataset("load_image_folder: not a directory: " + root.string());

    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.size() < 1) throw InvalidDataset("load_image_folder: no class directories in " + root.string());

    Dataset ds;
    ds.num_classes = static_cast<int>(class_dirs.size());
    ds.image_shape = {channels, size, size};
    std::int64_t next_id = 0;
    for (int label = 0; label < ds.num_classes; ++label) {
        ds.class_names.push_back(class_dirs[label].filename().string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[label]))
            if (entry.is_regular_file()) files.push_back(entry.path());
        std::sort(files.begin(), files.end());

        int loaded = 0;
        for (const auto& file : files) {
            cv::Mat img = cv::imread(file.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
            if (img.empty()) {
                std::cerr << "warning: skipping unreadable image " << file << '\n';
                continue;
            }
            if (img.rows != size || img.cols != size)
                cv::resize(img, img, cv::Size(size, size), 0, 0, cv::INTER_AREA);
            if (channels == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);

            LabeledSample s;
            s.id = next_id++;
            s.label = label;
            s.pixels.resize(static_cast<std::size_t>(channels) * size * size);
            for (int y = 0; y < size; ++y) {
                const std::uint8_t* row = img.ptr<std::uint8_t>(y);
                for (int x = 0; x < size; ++x)
                    for (int c = 0; c < channels; ++c)
                        s.pixels[(static_cast<std::size_t>(c) * size + y) * size + x] =
                            from_byte(row[x * channels + c]);
            }
            ds.samples.push_back(std::move(s));
            ++loaded;
        }
        if (loaded == 0)
            throw InvalidDataset("load_image_folder: class directory has no readable images: " +
                                 class_dirs[label].string());
    }
    return ds;
}

void export_image_folder(const Dataset& dataset, const fs::path& root) {
    const auto shape = dataset.image_shape;
    if (shape.c != 1 && shape.c != 3) throw InvalidInput("export_image_folder: only 1 or 3 channels supported");
    fs::create_directories(root);
    nlohmann::json manifest;
    manifest["num_classes"] = dataset.num_classes;
    manifest["image_size"] = {shape.h, shape.w};
    manifest["channels"] = shape.c;
    nlohmann::json names = nlohmann::json::array();
    for (int c = 0; c < dataset.num_classes; ++c) {
        names.push_back(class_dir_name(dataset, c));
        fs::create_directories(root / class_dir_name(dataset, c));
    }
    manifest["class_names"] = names;
    nlohmann::json files = nlohmann::json::array();

    for (const auto& s : dataset.samples) {
        cv::Mat img(shape.h, shape.w, shape.c == 1 ? CV_8UC1 : CV_8UC3);
        for (int y = 0; y < shape.h; ++y) {
            std::uint8_t* row = img.ptr<std::uint8_t>(y);
            for (int x = 0; x < shape.w; ++x)
                for (int c = 0; c < shape.c; ++c) {
                    // OpenCV stores colour as BGR.
                    const int src_c = shape.c == 3 ? 2 - c : c;
                    row[x * shape.c + c] =
                        to_byte(s.pixels[(static_cast<std::size_t>(src_c) * shape.h + y) * shape.w + x]);
                }
        }
        std::ostringstream fname;
        fname << std::setw(6) << std::setfill('0') << s.id << ".png";
        const fs::path rel = fs::path(class_dir_name(dataset, s.label)) / fname.str();
        std::vector<unsigned char> bytes;
        cv::imencode(".png", img, bytes);
        std::ofstream(root / rel, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                          static_cast<std::streamsize>(bytes.size()));
        files.push_back({{"path", rel.generic_string()}, {"label", s.label}, {"fnv1a64", fnv1a_hex(bytes)}});
    }
    manifest["files"] = files;
    std::ofstream(root / "manifest.json") << manifest.dump(2) << '\n';
}

std::vector<Shard> partition_dataset(const Dataset& dataset, int n_clients, PartitionScheme scheme,
                                     std::uint64_t seed) {
    if (n_clients < 1) throw InvalidConfig("partition_dataset: n_clients must be >= 1");
    if (static_cast<std::size_t>(n_clients) > dataset.size())
        throw InvalidConfig("partition_dataset: more clients (" + std::to_string(n_clients) + ") than samples (" +
                            std::to_string(dataset.size()) + ")");
    if (scheme != PartitionScheme::iid) throw InvalidConfig("partition_dataset: unsupported scheme");

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, {stream::partition}));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Shard> shards(n_clients, empty_like(dataset));
    const std::size_t base = dataset.size() / n_clients;
    const std::size_t extra = dataset.size() % n_clients;
    std::size_t pos = 0;
    for (int c = 0; c < n_clients; ++c) {
        const std::size_t count = base + (static_cast<std::size_t>(c) < extra ? 1 : 0);
        for (std::size_t j = 0; j < count; ++j) shards[c].samples.push_back(dataset.samples[order[pos++]]);
    }
    return shards;
}

Shard mix_poison(const Shard& clean, const PoisonedDataset& poison, double ratio, std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidConfig("mix_poison: ratio must lie in [0, 1]");
    const std::size_t n = clean.size();
    const auto n_poison = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    if (n_poison > 0 && poison.samples.empty()) throw InvalidConfig("mix_poison: poison set is empty");

    Rng rng(derive_seed(seed, {stream::mix}));
    std::vector<std::size_t> clean_order(n);
    for (std::size_t i = 0; i < n; ++i) clean_order[i] = i;
    std::shuffle(clean_order.begin(), clean_order.end(), rng);

    std::vector<std::size_t> poison_order(poison.samples.size());
    for (std::size_t i = 0; i < poison_order.size(); ++i) poison_order[i] = i;
    std::shuffle(poison_order.begin(), poison_order.end(), rng);

    Shard out = empty_like(clean);
    out.samples.reserve(n);
    for (std::size_t i = 0; i < n - n_poison; ++i) out.samples.push_back(clean.samples[clean_order[i]]);
    for (std::size_t i = 0; i < n_poison; ++i)
        out.samples.push_back(poison.samples[poison_order[i % poison_order.size()]]);
    std::shuffle(out.samples.begin(), out.samples.end(), rng);
    return out;
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& dataset, int test_per_class, std::uint64_t seed) {
    Dataset train = empty_like(dataset), test = empty_like(dataset);
    Rng rng(derive_seed(seed, {stream::data, 1}));
    for (int c = 0; c < dataset.num_classes; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < dataset.size(); ++i)
            if (dataset.samples[i].label == c) idx.push_back(i);
        if (static_cast<int>(idx.size()) <= test_per_class)
            throw InvalidDataset("stratified_split: class " + std::to_string(c) + " has too few samples");
        std::shuffle(idx.begin(), idx.end(), rng);
        std::sort(idx.begin(), idx.begin() + test_per_class);
        std::sort(idx.begin() + test_per_class, idx.end());
        for (std::size_t j = 0; j < idx.size(); ++j)
            (static_cast<int>(j) < test_per_class ? test : train).samples.push_back(dataset.samples[idx[j]]);
    }
    return {std::move(train), std::move(test)};
}

Dataset filter_by_label(const Dataset& dataset, int label, bool exclude) {
    Dataset out = empty_like(dataset);
    for (const auto& s : dataset.samples)
        if ((s.label == label) != exclude) out.samples.push_back(s);
    return out;
}

nn::Tensor to_tensor(const Dataset& dataset, std::span<const std::size_t> indices) {
    nn::Tensor t(static_cast<int>(indices.size()), dataset.image_shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& px = dataset.samples[indices[i]].pixels;
        if (px.size() != t.sample_size()) throw ShapeError("to_tensor: sample size does not match image shape");
        std::copy(px.begin(), px.end(), t.sample(static_cast<int>(i)));
    }
    return t;
}

nn::Tensor to_tensor(const Dataset& dataset) {
    std::vector<std::size_t> idx(dataset.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return to_tensor(dataset, idx);
}

std::vector<int> labels_of(const Dataset& dataset, std::span<const std::size_t> indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(dataset.samples[i].label);
    return out;
}

}  // namespace fplab::data
