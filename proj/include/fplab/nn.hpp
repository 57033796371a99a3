#pragma once

// Minimal dense/convolutional network toolkit with explicit backward passes.
//
// Parameters of a whole network live in one contiguous vector so that a model
// can be exchanged as a flat parameter vector. Layers never own parameters;
// they receive spans into the network's storage on every call.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fplab/rng.hpp"

namespace fplab::nn {

struct Shape {
    int c = 0;
    int h = 1;
    int w = 1;

    std::size_t size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Batch of samples in N×C×H×W order.
struct Tensor {
    int n = 0;
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int batch, Shape s, double fill = 0.0)
        : n(batch), shape(s), data(static_cast<std::size_t>(batch) * s.size(), fill) {}

    std::size_t sample_size() const noexcept { return shape.size(); }
    double* sample(int i) noexcept { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
    const double* sample(int i) const noexcept {
        return data.data() + static_cast<std::size_t>(i) * sample_size();
    }
};

class Layer {
public:
    virtual ~Layer() = default;

    /// Fixes the input shape and returns the output shape.
    virtual Shape configure(const Shape& in) = 0;
    virtual std::size_t param_count() const { return 0; }
    /// Non-trainable state (batch-norm running statistics).
    virtual std::size_t state_count() const { return 0; }
    virtual void init(std::span<double> /*params*/, std::span<double> /*state*/, Rng& /*rng*/) const {}

    virtual Tensor forward(const Tensor& x, std::span<const double> params, std::span<double> state,
                           bool training) = 0;
    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    virtual Tensor backward(const Tensor& dy, std::span<const double> params, std::span<double> grads) = 0;

    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual std::string name() const = 0;
};

/// Weight initialisation: std > 0 draws N(0, std); otherwise U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
struct InitSpec {
    double std = 0.0;
};

std::unique_ptr<Layer> conv2d(int in_channels, int out_channels, int kernel, int stride, int pad,
                              InitSpec init = {});
std::unique_ptr<Layer> conv_transpose2d(int in_channels, int out_channels, int kernel, int stride, int pad,
                                        InitSpec init = {});
std::unique_ptr<Layer> dense(int in_features, int out_features, InitSpec init = {});
std::unique_ptr<Layer> batch_norm2d(int channels, InitSpec init = {});
std::unique_ptr<Layer> max_pool2d(int size);
std::unique_ptr<Layer> relu();
std::unique_ptr<Layer> leaky_relu(double slope);
std::unique_ptr<Layer> tanh_layer();
std::unique_ptr<Layer> sigmoid_layer();

class Network {
public:
    Network() = default;
    Network(Shape input, std::vector<std::unique_ptr<Layer>> layers);
    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    void init(Rng& rng);

    Tensor forward(const Tensor& x, bool training);
    /// Back-propagates dy from the last forward call; gradients accumulate.
    Tensor backward(const Tensor& dy);
    void zero_grad();

    std::vector<double>& params() noexcept { return params_; }
    const std::vector<double>& params() const noexcept { return params_; }
    std::vector<double>& grads() noexcept { return grads_; }
    const std::vector<double>& grads() const noexcept { return grads_; }
    std::vector<double>& state() noexcept { return state_; }
    const std::vector<double>& state() const noexcept { return state_; }

    Shape input_shape() const noexcept { return input_; }
    Shape output_shape() const noexcept { return output_; }
    std::size_t layer_count() const noexcept { return layers_.size(); }
    std::string describe() const;

private:
    Shape input_;
    Shape output_;
    std::vector<std::unique_ptr<Layer>> layers_;
    std::vector<std::size_t> param_offsets_;
    std::vector<std::size_t> state_offsets_;
    std::vector<double> params_;
    std::vector<double> grads_;
    std::vector<double> state_;
};

/// Adaptive-moment optimiser. Moment buffers are sized lazily on the first step.
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m;
    std::vector<double> v;
    long long t = 0;

    void step(std::span<double> params, std::span<const double> grads);
};

struct LossAndGrad {
    double loss = 0.0;
    Tensor grad;
};

/// Mean softmax cross-entropy over the batch; logits shaped (N, classes, 1, 1).
LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Argmax per sample; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& scores);

}  // namespace fplab::nn
