#include "fplab/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "fplab/errors.hpp"

namespace fplab::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void init_weights(std::span<double> w, int fan_in, InitSpec spec, Rng& rng) {
    if (spec.std > 0.0) {
        std::normal_distribution<double> dist(0.0, spec.std);
        for (auto& x : w) x = dist(rng);
    } else {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& x : w) x = dist(rng);
    }
}

void check_input(const Tensor& x, const Shape& expected, const std::string& layer) {
    if (x.shape != expected)
        throw ShapeError(layer + ": expected input " + to_string(expected) + ", got " + to_string(x.shape));
}

// Geometry of a strided window sweep over a (channels, h, w) image.
struct Window {
    int channels, h, w, k, stride, pad, out_h, out_w;

    int rows() const { return channels * k * k; }
    int cols() const { return out_h * out_w; }
};

// Writes the windows of one image into columns [col_offset, col_offset + out_h*out_w) of `col`,
// a row-major matrix with `ld` columns.
void im2col(const double* img, const Window& g, double* col, int ld, int col_offset) {
    for (int c = 0; c < g.channels; ++c) {
        for (int ki = 0; ki < g.k; ++ki) {
            for (int kj = 0; kj < g.k; ++kj) {
                double* row = col + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * ld + col_offset;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + ki;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + kj;
                        const bool inside = ih >= 0 && ih < g.h && iw >= 0 && iw < g.w;
                        row[oh * g.out_w + ow] = inside ? img[(c * g.h + ih) * g.w + iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* col, const Window& g, int ld, int col_offset, double* img) {
    for (int c = 0; c < g.channels; ++c) {
        for (int ki = 0; ki < g.k; ++ki) {
            for (int kj = 0; kj < g.k; ++kj) {
                const double* row =
                    col + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * ld + col_offset;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + ki;
                    if (ih < 0 || ih >= g.h) continue;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + kj;
                        if (iw < 0 || iw >= g.w) continue;
                        img[(c * g.h + ih) * g.w + iw] += row[oh * g.out_w + ow];
                    }
                }
            }
        }
    }
}

class Conv2d final : public Layer {
public:
    Conv2d(int cin, int cout, int k, int stride, int pad, InitSpec init)
        : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad), init_(init) {}

    Shape configure(const Shape& in) override {
        if (in.c != cin_) throw ShapeError("conv2d: expected " + std::to_string(cin_) + " input channels");
        in_ = in;
        geom_ = Window{cin_, in.h, in.w, k_, stride_, pad_, (in.h + 2 * pad_ - k_) / stride_ + 1,
                       (in.w + 2 * pad_ - k_) / stride_ + 1};
        if (geom_.out_h <= 0 || geom_.out_w <= 0) throw ShapeError("conv2d: kernel larger than input");
        return {cout_, geom_.out_h, geom_.out_w};
    }
    std::size_t param_count() const override { return weight_count() + cout_; }
    void init(std::span<double> p, std::span<double>, Rng& rng) const override {
        init_weights(p.first(weight_count()), cin_ * k_ * k_, init_, rng);
        if (init_.std > 0.0)
            std::fill(p.begin() + weight_count(), p.end(), 0.0);
        else
            init_weights(p.subspan(weight_count()), cin_ * k_ * k_, init_, rng);
    }

    Tensor forward(const Tensor& x, std::span<const double> p, std::span<double>, bool) override {
        check_input(x, in_, name());
        n_ = x.n;
        const int P = geom_.cols();
        const int ld = n_ * P;
        cols_.assign(static_cast<std::size_t>(geom_.rows()) * ld, 0.0);
        for (int i = 0; i < n_; ++i) im2col(x.sample(i), geom_, cols_.data(), ld, i * P);

        ConstMatMap W(p.data(), cout_, geom_.rows());
        ConstMatMap C(cols_.data(), geom_.rows(), ld);
        RowMat Y = W * C;
        const double* b = p.data() + weight_count();
        Tensor y(n_, {cout_, geom_.out_h, geom_.out_w});
        for (int i = 0; i < n_; ++i) {
            double* out = y.sample(i);
            for (int o = 0; o < cout_; ++o)
                for (int q = 0; q < P; ++q) out[o * P + q] = Y(o, i * P + q) + b[o];
        }
        return y;
    }

    Tensor backward(const Tensor& dy, std::span<const double> p, std::span<double> g) override {
        const int P = geom_.cols();
        const int ld = n_ * P;
        RowMat dY(cout_, ld);
        double* db = g.data() + weight_count();
        for (int i = 0; i < n_; ++i) {
            const double* src = dy.sample(i);
            for (int o = 0; o < cout_; ++o)
                for (int q = 0; q < P; ++q) {
                    dY(o, i * P + q) = src[o * P + q];
                    db[o] += src[o * P + q];
                }
        }
        ConstMatMap C(cols_.data(), geom_.rows(), ld);
        MatMap dW(g.data(), cout_, geom_.rows());
        dW.noalias() += dY * C.transpose();
        ConstMatMap W(p.data(), cout_, geom_.rows());
        RowMat dC = W.transpose() * dY;
        Tensor dx(n_, in_);
        for (int i = 0; i < n_; ++i) col2im(dC.data(), geom_, ld, i * P, dx.sample(i));
        return dx;
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
    std::string name() const override {
        return "conv2d(" + std::to_string(cin_) + "->" + std::to_string(cout_) + ", k" + std::to_string(k_) +
               "/s" + std::to_string(stride_) + "/p" + std::to_string(pad_) + ")";
    }

private:
    std::size_t weight_count() const { return static_cast<std::size_t>(cout_) * cin_ * k_ * k_; }

    int cin_, cout_, k_, stride_, pad_;
    InitSpec init_;
    Shape in_;
    Window geom_{};
    int n_ = 0;
    std::vector<double> cols_;
};

// Transposed convolution: the adjoint of Conv2d with the same kernel geometry.
class ConvTranspose2d final : public Layer {
public:
    ConvTranspose2d(int cin, int cout, int k, int stride, int pad, InitSpec init)
        : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad), init_(init) {}

    Shape configure(const Shape& in) override {
        if (in.c != cin_)
            throw ShapeError("conv_transpose2d: expected " + std::to_string(cin_) + " input channels");
        in_ = in;
        const int oh = (in.h - 1) * stride_ - 2 * pad_ + k_;
        const int ow = (in.w - 1) * stride_ - 2 * pad_ + k_;
        if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: empty output");
        // Window over the output image whose sweep positions are the input pixels.
        geom_ = Window{cout_, oh, ow, k_, stride_, pad_, in.h, in.w};
        return {cout_, oh, ow};
    }
    std::size_t param_count() const override { return weight_count() + cout_; }
    void init(std::span<double> p, std::span<double>, Rng& rng) const override {
        init_weights(p.first(weight_count()), cout_ * k_ * k_, init_, rng);
        if (init_.std > 0.0)
            std::fill(p.begin() + weight_count(), p.end(), 0.0);
        else
            init_weights(p.subspan(weight_count()), cout_ * k_ * k_, init_, rng);
    }

    Tensor forward(const Tensor& x, std::span<const double> p, std::span<double>, bool) override {
        check_input(x, in_, name());
        n_ = x.n;
        const int P = in_.h * in_.w;
        const int ld = n_ * P;
        xs_.resize(static_cast<std::size_t>(cin_) * ld);
        for (int i = 0; i < n_; ++i) {
            const double* src = x.sample(i);
            for (int c = 0; c < cin_; ++c)
                std::copy_n(src + c * P, P, xs_.data() + static_cast<std::size_t>(c) * ld + i * P);
        }
        ConstMatMap W(p.data(), cin_, geom_.rows());
        ConstMatMap X(xs_.data(), cin_, ld);
        RowMat C = W.transpose() * X;
        Tensor y(n_, {cout_, geom_.h, geom_.w});
        const double* b = p.data() + weight_count();
        const int out_plane = geom_.h * geom_.w;
        for (int i = 0; i < n_; ++i) {
            double* out = y.sample(i);
            for (int o = 0; o < cout_; ++o) std::fill_n(out + o * out_plane, out_plane, b[o]);
            col2im(C.data(), geom_, ld, i * P, out);
        }
        return y;
    }

    Tensor backward(const Tensor& dy, std::span<const double> p, std::span<double> g) override {
        const int P = in_.h * in_.w;
        const int ld = n_ * P;
        const int out_plane = geom_.h * geom_.w;
        double* db = g.data() + weight_count();
        RowMat dC(geom_.rows(), ld);
        for (int i = 0; i < n_; ++i) {
            const double* src = dy.sample(i);
            for (int o = 0; o < cout_; ++o)
                for (int q = 0; q < out_plane; ++q) db[o] += src[o * out_plane + q];
            im2col(src, geom_, dC.data(), ld, i * P);
        }
        ConstMatMap X(xs_.data(), cin_, ld);
        MatMap dW(g.data(), cin_, geom_.rows());
        dW.noalias() += X * dC.transpose();
        ConstMatMap W(p.data(), cin_, geom_.rows());
        RowMat dX = W * dC;
        Tensor dx(n_, in_);
        for (int i = 0; i < n_; ++i) {
            double* dst = dx.sample(i);
            for (int c = 0; c < cin_; ++c)
                for (int q = 0; q < P; ++q) dst[c * P + q] = dX(c, i * P + q);
        }
        return dx;
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }
    std::string name() const override {
        return "deconv2d(" + std::to_string(cin_) + "->" + std::to_string(cout_) + ", k" + std::to_string(k_) +
               "/s" + std::to_string(stride_) + "/p" + std::to_string(pad_) + ")";
    }

private:
    std::size_t weight_count() const { return static_cast<std::size_t>(cin_) * cout_ * k_ * k_; }

    int cin_, cout_, k_, stride_, pad_;
    InitSpec init_;
    Shape in_;
    Window geom_{};
    int n_ = 0;
    std::vector<double> xs_;
};

// Fully connected; treats each sample as a flat vector regardless of its shape.
class Dense final : public Layer {
public:
    Dense(int in, int out, InitSpec init) : in_features_(in), out_(out), init_(init) {}

    Shape configure(const Shape& in) override {
        if (static_cast<int>(in.size()) != in_features_)
            throw ShapeError("dense: expected " + std::to_string(in_features_) + " input features, got " +
                             std::to_string(in.size()));
        in_ = in;
        return {out_, 1, 1};
    }
    std::size_t param_count() const override { return static_cast<std::size_t>(out_) * in_features_ + out_; }
    void init(std::span<double> p, std::span<double>, Rng& rng) const override {
        const std::size_t wc = static_cast<std::size_t>(out_) * in_features_;
        init_weights(p.first(wc), in_features_, init_, rng);
        if (init_.std > 0.0)
            std::fill(p.begin() + wc, p.end(), 0.0);
        else
            init_weights(p.subspan(wc), in_features_, init_, rng);
    }

    Tensor forward(const Tensor& x, std::span<const double> p, std::span<double>, bool) override {
        check_input(x, in_, name());
        x_ = x;
        ConstMatMap X(x.data.data(), x.n, in_features_);
        ConstMatMap W(p.data(), out_, in_features_);
        Eigen::Map<const Eigen::RowVectorXd> b(p.data() + static_cast<std::size_t>(out_) * in_features_, out_);
        Tensor y(x.n, {out_, 1, 1});
        MatMap Y(y.data.data(), x.n, out_);
        Y.noalias() = X * W.transpose();
        Y.rowwise() += b;
        return y;
    }

    Tensor backward(const Tensor& dy, std::span<const double> p, std::span<double> g) override {
        ConstMatMap dY(dy.data.data(), dy.n, out_);
        ConstMatMap X(x_.data.data(), x_.n, in_features_);
        MatMap dW(g.data(), out_, in_features_);
        dW.noalias() += dY.transpose() * X;
        Eigen::Map<Eigen::RowVectorXd> db(g.data() + static_cast<std::size_t>(out_) * in_features_, out_);
        db += dY.colwise().sum();
        ConstMatMap W(p.data(), out_, in_features_);
        Tensor dx(dy.n, in_);
        MatMap dX(dx.data.data(), dy.n, in_features_);
        dX.noalias() = dY * W;
        return dx;
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
    std::string name() const override {
        return "dense(" + std::to_string(in_features_) + "->" + std::to_string(out_) + ")";
    }

private:
    int in_features_, out_;
    InitSpec init_;
    Shape in_;
    Tensor x_;
};

// Per-channel batch normalisation. Training mode normalises with batch statistics
// and updates the running estimates; evaluation mode uses the running estimates.
class BatchNorm2d final : public Layer {
public:
    BatchNorm2d(int channels, InitSpec init) : channels_(channels), init_(init) {}

    Shape configure(const Shape& in) override {
        if (in.c != channels_) throw ShapeError("batch_norm2d: channel mismatch");
        in_ = in;
        return in;
    }
    std::size_t param_count() const override { return 2 * static_cast<std::size_t>(channels_); }
    std::size_t state_count() const override { return 2 * static_cast<std::size_t>(channels_); }
    void init(std::span<double> p, std::span<double> s, Rng& rng) const override {
        if (init_.std > 0.0) {
            std::normal_distribution<double> dist(1.0, init_.std);
            for (int c = 0; c < channels_; ++c) p[c] = dist(rng);
        } else {
            std::fill_n(p.begin(), channels_, 1.0);
        }
        std::fill(p.begin() + channels_, p.end(), 0.0);
        std::fill_n(s.begin(), channels_, 0.0);
        std::fill(s.begin() + channels_, s.end(), 1.0);
    }

    Tensor forward(const Tensor& x, std::span<const double> p, std::span<double> s, bool training) override {
        check_input(x, in_, name());
        n_ = x.n;
        training_ = training;
        const int plane = in_.h * in_.w;
        const double m = static_cast<double>(n_) * plane;
        xhat_ = Tensor(n_, in_);
        inv_std_.assign(channels_, 0.0);
        Tensor y(n_, in_);
        for (int c = 0; c < channels_; ++c) {
            double mean, var;
            if (training) {
                double sum = 0.0;
                for (int i = 0; i < n_; ++i) {
                    const double* src = x.sample(i) + c * plane;
                    for (int q = 0; q < plane; ++q) sum += src[q];
                }
                mean = sum / m;
                double sq = 0.0;
                for (int i = 0; i < n_; ++i) {
                    const double* src = x.sample(i) + c * plane;
                    for (int q = 0; q < plane; ++q) sq += (src[q] - mean) * (src[q] - mean);
                }
                var = sq / m;
                const double unbiased = m > 1 ? sq / (m - 1) : var;
                s[c] = (1.0 - kMomentum) * s[c] + kMomentum * mean;
                s[channels_ + c] = (1.0 - kMomentum) * s[channels_ + c] + kMomentum * unbiased;
            } else {
                mean = s[c];
                var = s[channels_ + c];
            }
            const double inv = 1.0 / std::sqrt(var + kEps);
            inv_std_[c] = inv;
            const double gamma = p[c], beta = p[channels_ + c];
            for (int i = 0; i < n_; ++i) {
                const double* src = x.sample(i) + c * plane;
                double* xh = xhat_.sample(i) + c * plane;
                double* dst = y.sample(i) + c * plane;
                for (int q = 0; q < plane; ++q) {
                    xh[q] = (src[q] - mean) * inv;
                    dst[q] = gamma * xh[q] + beta;
                }
            }
        }
        return y;
    }

    Tensor backward(const Tensor& dy, std::span<const double> p, std::span<double> g) override {
        const int plane = in_.h * in_.w;
        const double m = static_cast<double>(n_) * plane;
        Tensor dx(n_, in_);
        for (int c = 0; c < channels_; ++c) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int i = 0; i < n_; ++i) {
                const double* d = dy.sample(i) + c * plane;
                const double* xh = xhat_.sample(i) + c * plane;
                for (int q = 0; q < plane; ++q) {
                    sum_dy += d[q];
                    sum_dy_xhat += d[q] * xh[q];
                }
            }
            g[c] += sum_dy_xhat;
            g[channels_ + c] += sum_dy;
            const double gamma = p[c];
            const double inv = inv_std_[c];
            for (int i = 0; i < n_; ++i) {
                const double* d = dy.sample(i) + c * plane;
                const double* xh = xhat_.sample(i) + c * plane;
                double* out = dx.sample(i) + c * plane;
                for (int q = 0; q < plane; ++q) {
                    if (training_)
                        out[q] = gamma * inv * (d[q] - sum_dy / m - xh[q] * sum_dy_xhat / m);
                    else
                        out[q] = gamma * inv * d[q];
                }
            }
        }
        return dx;
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
    std::string name() const override { return "batch_norm2d(" + std::to_string(channels_) + ")"; }

private:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    int channels_;
    InitSpec init_;
    Shape in_;
    int n_ = 0;
    bool training_ = true;
    Tensor xhat_;
    std::vector<double> inv_std_;
};

class MaxPool2d final : public Layer {
public:
    explicit MaxPool2d(int size) : size_(size) {}

    Shape configure(const Shape& in) override {
        if (in.h % size_ != 0 || in.w % size_ != 0) throw ShapeError("max_pool2d: size must divide input");
        in_ = in;
        return {in.c, in.h / size_, in.w / size_};
    }

    Tensor forward(const Tensor& x, std::span<const double>, std::span<double>, bool) override {
        check_input(x, in_, name());
        const Shape out{in_.c, in_.h / size_, in_.w / size_};
        Tensor y(x.n, out);
        argmax_.assign(y.data.size(), 0);
        std::size_t idx = 0;
        for (int i = 0; i < x.n; ++i) {
            const double* src = x.sample(i);
            for (int c = 0; c < in_.c; ++c)
                for (int oh = 0; oh < out.h; ++oh)
                    for (int ow = 0; ow < out.w; ++ow, ++idx) {
                        int best = (c * in_.h + oh * size_) * in_.w + ow * size_;
                        for (int a = 0; a < size_; ++a)
                            for (int b = 0; b < size_; ++b) {
                                const int pos = (c * in_.h + oh * size_ + a) * in_.w + ow * size_ + b;
                                if (src[pos] > src[best]) best = pos;
                            }
                        argmax_[idx] = best;
                        y.data[idx] = src[best];
                    }
        }
        return y;
    }

    Tensor backward(const Tensor& dy, std::span<const double>, std::span<double>) override {
        Tensor dx(dy.n, in_);
        const std::size_t per = dy.sample_size();
        for (int i = 0; i < dy.n; ++i) {
            double* dst = dx.sample(i);
            for (std::size_t q = 0; q < per; ++q) {
                const std::size_t idx = static_cast<std::size_t>(i) * per + q;
                dst[argmax_[idx]] += dy.data[idx];
            }
        }
        return dx;
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }
    std::string name() const override { return "max_pool2d(" + std::to_string(size_) + ")"; }

private:
    int size_;
    Shape in_;
    std::vector<int> argmax_;
};

enum class ActKind { relu, leaky_relu, tanh, sigmoid };

class Activation final : public Layer {
public:
    Activation(ActKind kind, double slope = 0.0) : kind_(kind), slope_(slope) {}

    Shape configure(const Shape& in) override {
        in_ = in;
        return in;
    }

    Tensor forward(const Tensor& x, std::span<const double>, std::span<double>, bool) override {
        x_ = x;
        Tensor y = x;
        for (auto& v : y.data) {
            switch (kind_) {
                case ActKind::relu: v = v > 0.0 ? v : 0.0; break;
                case ActKind::leaky_relu: v = v > 0.0 ? v : slope_ * v; break;
                case ActKind::tanh: v = std::tanh(v); break;
                case ActKind::sigmoid: v = 1.0 / (1.0 + std::exp(-v)); break;
            }
        }
        y_ = y;
        return y;
    }

    Tensor backward(const Tensor& dy, std::span<const double>, std::span<double>) override {
        Tensor dx = dy;
        for (std::size_t i = 0; i < dx.data.size(); ++i) {
            const double x = x_.data[i], y = y_.data[i];
            double d = 0.0;
            switch (kind_) {
                case ActKind::relu: d = x > 0.0 ? 1.0 : 0.0; break;
                case ActKind::leaky_relu: d = x > 0.0 ? 1.0 : slope_; break;
                case ActKind::tanh: d = 1.0 - y * y; break;
                case ActKind::sigmoid: d = y * (1.0 - y); break;
            }
            dx.data[i] *= d;
        }
        return dx;
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<Activation>(*this); }
    std::string name() const override {
        switch (kind_) {
            case ActKind::relu: return "relu";
            case ActKind::leaky_relu: return "leaky_relu";
            case ActKind::tanh: return "tanh";
            case ActKind::sigmoid: return "sigmoid";
        }
        return "activation";
    }

private:
    ActKind kind_;
    double slope_;
    Shape in_;
    Tensor x_;
    Tensor y_;
};

}  // namespace

std::string to_string(const Shape& s) {
    return "(" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w) + ")";
}

std::unique_ptr<Layer> conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, InitSpec init) {
    return std::make_unique<Conv2d>(in_channels, out_channels, kernel, stride, pad, init);
}
std::unique_ptr<Layer> conv_transpose2d(int in_channels, int out_channels, int kernel, int stride, int pad,
                                        InitSpec init) {
    return std::make_unique<ConvTranspose2d>(in_channels, out_channels, kernel, stride, pad, init);
}
std::unique_ptr<Layer> dense(int in_features, int out_features, InitSpec init) {
    return std::make_unique<Dense>(in_features, out_features, init);
}
std::unique_ptr<Layer> batch_norm2d(int channels, InitSpec init) {
    return std::make_unique<BatchNorm2d>(channels, init);
}
std::unique_ptr<Layer> max_pool2d(int size) { return std::make_unique<MaxPool2d>(size); }
std::unique_ptr<Layer> relu() { return std::make_unique<Activation>(ActKind::relu); }
std::unique_ptr<Layer> leaky_relu(double slope) { return std::make_unique<Activation>(ActKind::leaky_relu, slope); }
std::unique_ptr<Layer> tanh_layer() { return std::make_unique<Activation>(ActKind::tanh); }
std::unique_ptr<Layer> sigmoid_layer() { return std::make_unique<Activation>(ActKind::sigmoid); }

Network::Network(Shape input, std::vector<std::unique_ptr<Layer>> layers)
    : input_(input), layers_(std::move(layers)) {
    Shape s = input;
    std::size_t np = 0, ns = 0;
    for (auto& layer : layers_) {
        s = layer->configure(s);
        param_offsets_.push_back(np);
        state_offsets_.push_back(ns);
        np += layer->param_count();
        ns += layer->state_count();
    }
    output_ = s;
    params_.assign(np, 0.0);
    grads_.assign(np, 0.0);
    state_.assign(ns, 0.0);
}

Network::Network(const Network& other)
    : input_(other.input_),
      output_(other.output_),
      param_offsets_(other.param_offsets_),
      state_offsets_(other.state_offsets_),
      params_(other.params_),
      grads_(other.grads_),
      state_(other.state_) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
    if (this != &other) {
        Network copy(other);
        *this = std::move(copy);
    }
    return *this;
}

void Network::init(Rng& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto p = std::span<double>(params_).subspan(param_offsets_[i], layers_[i]->param_count());
        auto s = std::span<double>(state_).subspan(state_offsets_[i], layers_[i]->state_count());
        layers_[i]->init(p, s, rng);
    }
}

Tensor Network::forward(const Tensor& x, bool training) {
    if (x.shape != input_) throw ShapeError("network input " + to_string(x.shape) + " != " + to_string(input_));
    Tensor cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto p = std::span<const double>(params_).subspan(param_offsets_[i], layers_[i]->param_count());
        auto s = std::span<double>(state_).subspan(state_offsets_[i], layers_[i]->state_count());
        cur = layers_[i]->forward(cur, p, s, training);
    }
    return cur;
}

Tensor Network::backward(const Tensor& dy) {
    Tensor cur = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        auto p = std::span<const double>(params_).subspan(param_offsets_[i], layers_[i]->param_count());
        auto g = std::span<double>(grads_).subspan(param_offsets_[i], layers_[i]->param_count());
        cur = layers_[i]->backward(cur, p, g);
    }
    return cur;
}

void Network::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

std::string Network::describe() const {
    std::ostringstream os;
    os << to_string(input_);
    for (const auto& l : layers_) os << " -> " << l->name();
    os << " -> " << to_string(output_) << " [" << params_.size() << " params]";
    return os.str();
}

void Adam::step(std::span<double> params, std::span<const double> grads) {
    if (m.size() != params.size()) {
        m.assign(params.size(), 0.0);
        v.assign(params.size(), 0.0);
        t = 0;
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
        params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
}

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    const int n = logits.n;
    const int k = static_cast<int>(logits.sample_size());
    if (static_cast<int>(labels.size()) != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
    LossAndGrad out{0.0, Tensor(n, logits.shape)};
    for (int i = 0; i < n; ++i) {
        const double* z = logits.sample(i);
        double* g = out.grad.sample(i);
        const double zmax = *std::max_element(z, z + k);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
        const double log_denom = std::log(denom) + zmax;
        const int y = labels[i];
        if (y < 0 || y >= k) throw InvalidInput("softmax_cross_entropy: label out of range");
        out.loss += log_denom - z[y];
        for (int j = 0; j < k; ++j) g[j] = std::exp(z[j] - log_denom) / n;
        g[y] -= 1.0 / n;
    }
    out.loss /= n;
    return out;
}

std::vector<int> argmax_rows(const Tensor& scores) {
    std::vector<int> out(scores.n);
    const int k = static_cast<int>(scores.sample_size());
    for (int i = 0; i < scores.n; ++i) {
        const double* z = scores.sample(i);
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (z[j] > z[best]) best = j;
        out[i] = best;
    }
    return out;
}

}  // namespace fplab::nn
