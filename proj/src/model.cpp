#include "fplab/model.hpp"

#include <algorithm>

#include "fplab/errors.hpp"
#include "fplab/rng.hpp"

namespace fplab {

namespace {

nn::Network build(const ClassifierSpec& spec) {
    std::vector<std::unique_ptr<nn::Layer>> layers;
    if (spec.kind == ClassifierKind::linear) {
        layers.push_back(nn::dense(static_cast<int>(spec.input.size()), spec.num_classes));
        return nn::Network(spec.input, std::move(layers));
    }
    if (spec.input.h % 4 != 0 || spec.input.w % 4 != 0)
        throw InvalidConfig("classifier: image size must be divisible by 4");
    layers.push_back(nn::conv2d(spec.input.c, spec.conv1_channels, 3, 1, 1));
    layers.push_back(nn::relu());
    layers.push_back(nn::max_pool2d(2));
    layers.push_back(nn::conv2d(spec.conv1_channels, spec.conv2_channels, 3, 1, 1));
    layers.push_back(nn::relu());
    layers.push_back(nn::max_pool2d(2));
    const int flat = spec.conv2_channels * (spec.input.h / 4) * (spec.input.w / 4);
    layers.push_back(nn::dense(flat, spec.hidden));
    layers.push_back(nn::relu());
    layers.push_back(nn::dense(spec.hidden, spec.num_classes));
    return nn::Network(spec.input, std::move(layers));
}

constexpr int kEvalChunk = 256;

}  // namespace

Classifier::Classifier(ClassifierSpec spec) : spec_(spec), template_(build(spec)) {
    if (spec.num_classes < 2) throw InvalidConfig("classifier: need at least 2 classes");
}

ParamVector Classifier::initial_params(std::uint64_t seed) const {
    nn::Network net = template_;
    Rng rng(derive_seed(seed, {stream::init}));
    net.init(rng);
    return ParamVector(net.params());
}

nn::Network Classifier::network(const ParamVector& params) const {
    if (params.dim() != dim())
        throw ShapeError("classifier: expected " + std::to_string(dim()) + " params, got " +
                         std::to_string(params.dim()));
    nn::Network net = template_;
    net.params() = params.values();
    return net;
}

std::vector<int> Classifier::predict(const ParamVector& params, const data::Dataset& dataset) const {
    nn::Network net = network(params);
    std::vector<int> out;
    out.reserve(dataset.size());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < dataset.size(); start += kEvalChunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(dataset.size(), start + kEvalChunk); ++i) idx.push_back(i);
        auto pred = nn::argmax_rows(net.forward(data::to_tensor(dataset, idx), false));
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

double Classifier::loss(const ParamVector& params, const data::Dataset& dataset) const {
    if (dataset.empty()) throw InvalidInput("classifier loss: empty dataset");
    nn::Network net = network(params);
    double total = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < dataset.size(); start += kEvalChunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(dataset.size(), start + kEvalChunk); ++i) idx.push_back(i);
        auto labels = data::labels_of(dataset, idx);
        auto res = nn::softmax_cross_entropy(net.forward(data::to_tensor(dataset, idx), false), labels);
        total += res.loss * static_cast<double>(idx.size());
    }
    return total / static_cast<double>(dataset.size());
}

}  // namespace fplab
