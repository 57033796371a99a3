#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fplab/data.hpp"
#include "fplab/nn.hpp"
#include "fplab/param_vector.hpp"

namespace fplab {

enum class ClassifierKind { cnn, linear };

/// Image classifier architecture. The CNN is conv-relu-pool twice followed by
/// two dense layers; the linear variant is a single dense layer on raw pixels.
struct ClassifierSpec {
    ClassifierKind kind = ClassifierKind::cnn;
    nn::Shape input{1, 16, 16};
    int num_classes = 4;
    int conv1_channels = 8;
    int conv2_channels = 16;
    int hidden = 32;
};

class Classifier {
public:
    explicit Classifier(ClassifierSpec spec);

    const ClassifierSpec& spec() const noexcept { return spec_; }
    std::size_t dim() const noexcept { return template_.params().size(); }

    ParamVector initial_params(std::uint64_t seed) const;
    /// Fresh network instance loaded with `params`.
    nn::Network network(const ParamVector& params) const;

    std::vector<int> predict(const ParamVector& params, const data::Dataset& dataset) const;
    /// Mean cross-entropy over the whole dataset.
    double loss(const ParamVector& params, const data::Dataset& dataset) const;

private:
    ClassifierSpec spec_;
    nn::Network template_;
};

}  // namespace fplab
