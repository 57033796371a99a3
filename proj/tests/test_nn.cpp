#include <doctest.h>

#include <cmath>

#include "fplab/errors.hpp"
#include "fplab/nn.hpp"
#include "support.hpp"

using namespace fplab;
using namespace fplab::nn;

namespace {

// Loss = <r, layer(x)> for a fixed random r; checks parameter and input gradients.
void check_layer(std::unique_ptr<Layer> layer, Shape in, int batch, bool training, std::uint64_t seed = 5) {
    std::mt19937_64 rng(seed);
    const Shape out = layer->configure(in);
    std::vector<double> params = testing::random_vector(rng, layer->param_count());
    std::vector<double> state(layer->state_count(), 0.0);
    if (state.size()) std::fill(state.begin() + state.size() / 2, state.end(), 1.0);
    Tensor x(batch, in);
    x.data = testing::random_vector(rng, x.data.size());
    const auto r = testing::random_vector(rng, static_cast<std::size_t>(batch) * out.size());

    auto loss = [&] {
        auto st = state;
        const Tensor y = layer->forward(x, params, st, training);
        double s = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * y.data[i];
        return s;
    };

    auto st = state;
    layer->forward(x, params, st, training);
    Tensor dy(batch, out);
    dy.data = r;
    std::vector<double> grads(params.size(), 0.0);
    const Tensor dx = layer->backward(dy, params, grads);

    if (!params.empty()) {
        const auto num = testing::numeric_gradient(params, loss);
        CHECK(testing::relative_error(grads, num) < 1e-6);
    }
    const auto num_x = testing::numeric_gradient(x.data, loss);
    CHECK(testing::relative_error(dx.data, num_x) < 1e-6);
}

}  // namespace

TEST_CASE("layer gradients match central differences") {
    SUBCASE("dense") { check_layer(dense(6, 4), {6, 1, 1}, 3, true); }
    SUBCASE("conv2d stride 1") { check_layer(conv2d(2, 3, 3, 1, 1), {2, 5, 5}, 2, true); }
    SUBCASE("conv2d stride 2") { check_layer(conv2d(3, 2, 4, 2, 1), {3, 8, 8}, 2, true); }
    SUBCASE("conv_transpose2d 1x1 to 4x4") { check_layer(conv_transpose2d(5, 3, 4, 1, 0), {5, 1, 1}, 2, true); }
    SUBCASE("conv_transpose2d upsample") { check_layer(conv_transpose2d(3, 2, 4, 2, 1), {3, 4, 4}, 2, true); }
    SUBCASE("batch norm, training") { check_layer(batch_norm2d(3), {3, 4, 4}, 4, true); }
    SUBCASE("batch norm, eval") { check_layer(batch_norm2d(3), {3, 4, 4}, 2, false); }
    SUBCASE("max pool") { check_layer(max_pool2d(2), {2, 4, 4}, 2, true); }
    SUBCASE("relu") { check_layer(relu(), {3, 3, 3}, 2, true); }
    SUBCASE("leaky relu") { check_layer(leaky_relu(0.2), {3, 3, 3}, 2, true); }
    SUBCASE("tanh") { check_layer(tanh_layer(), {3, 3, 3}, 2, true); }
    SUBCASE("sigmoid") { check_layer(sigmoid_layer(), {3, 3, 3}, 2, true); }
}

TEST_CASE("conv2d matches a direct convolution") {
    std::mt19937_64 rng(11);
    const int cin = 2, cout = 3, k = 3, stride = 2, pad = 1, h = 7, w = 6;
    auto layer = conv2d(cin, cout, k, stride, pad);
    const Shape out = layer->configure({cin, h, w});
    auto p = testing::random_vector(rng, layer->param_count());
    Tensor x(2, {cin, h, w});
    x.data = testing::random_vector(rng, x.data.size());
    std::vector<double> none;
    const Tensor y = layer->forward(x, p, none, true);

    const double* bias = p.data() + cout * cin * k * k;
    for (int n = 0; n < 2; ++n)
        for (int o = 0; o < cout; ++o)
            for (int oy = 0; oy < out.h; ++oy)
                for (int ox = 0; ox < out.w; ++ox) {
                    double s = bias[o];
                    for (int c = 0; c < cin; ++c)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                s += p[((o * cin + c) * k + ky) * k + kx] * x.sample(n)[(c * h + iy) * w + ix];
                            }
                    CHECK(y.sample(n)[(o * out.h + oy) * out.w + ox] == doctest::Approx(s).epsilon(1e-12));
                }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d with shared weights") {
    // <convT(u), v> == <u, conv(v)> when both use the same kernel and no bias.
    std::mt19937_64 rng(3);
    const int a = 3, b = 2, k = 4, stride = 2, pad = 1;
    auto conv = conv2d(b, a, k, stride, pad);
    auto convt = conv_transpose2d(a, b, k, stride, pad);
    const Shape big{b, 8, 8};
    const Shape small = conv->configure(big);
    CHECK(convt->configure(small) == big);

    // conv weights are [a][b][k][k]; the transposed layer stores [in=a][out=b][k][k].
    auto wc = testing::random_vector(rng, static_cast<std::size_t>(a) * b * k * k);
    std::vector<double> pc = wc, pt = wc;
    pc.resize(conv->param_count(), 0.0);
    pt.resize(convt->param_count(), 0.0);
    Tensor u(1, small), v(1, big);
    u.data = testing::random_vector(rng, u.data.size());
    v.data = testing::random_vector(rng, v.data.size());
    std::vector<double> none;
    const Tensor tu = convt->forward(u, pt, none, true);
    const Tensor cv = conv->forward(v, pc, none, true);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < v.data.size(); ++i) lhs += tu.data[i] * v.data[i];
    for (std::size_t i = 0; i < u.data.size(); ++i) rhs += u.data[i] * cv.data[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy") {
    Tensor logits(2, {4, 1, 1}, 0.0);
    const std::vector<int> labels{1, 3};
    const auto out = softmax_cross_entropy(logits, labels);
    CHECK(out.loss == doctest::Approx(std::log(4.0)));
    CHECK(out.grad.data[1] == doctest::Approx((0.25 - 1.0) / 2));
    CHECK(out.grad.data[0] == doctest::Approx(0.25 / 2));

    std::mt19937_64 rng(9);
    logits.data = testing::random_vector(rng, 8, -3, 3);
    const auto analytic = softmax_cross_entropy(logits, labels).grad.data;
    const auto num = testing::numeric_gradient(logits.data, [&] { return softmax_cross_entropy(logits, labels).loss; });
    CHECK(testing::relative_error(analytic, num) < 1e-7);
}

TEST_CASE("softmax cross-entropy rejects bad labels") {
    Tensor logits(1, {3, 1, 1});
    const std::vector<int> labels{3};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, labels), InvalidInput);
}

TEST_CASE("argmax ties resolve to the lowest index") {
    Tensor s(2, {3, 1, 1});
    s.data = {0.5, 0.5, 0.1, -1.0, 2.0, 2.0};
    CHECK(argmax_rows(s) == std::vector<int>{0, 1});
}

TEST_CASE("network copies are deep") {
    std::vector<std::unique_ptr<Layer>> layers;
    layers.push_back(dense(3, 2));
    Network a({3, 1, 1}, std::move(layers));
    Rng rng(1);
    a.init(rng);
    Network b = a;
    b.params()[0] += 1.0;
    CHECK(a.params()[0] != b.params()[0]);
    Tensor x(1, {3, 1, 1}, 1.0);
    const auto ya = a.forward(x, false).data;
    const auto yb = b.forward(x, false).data;
    CHECK(ya != yb);
}

TEST_CASE("network gradient of a small CNN matches central differences") {
    std::vector<std::unique_ptr<Layer>> layers;
    layers.push_back(conv2d(1, 2, 3, 1, 1));
    layers.push_back(relu());
    layers.push_back(max_pool2d(2));
    layers.push_back(dense(2 * 3 * 3, 3));
    Network net({1, 6, 6}, std::move(layers));
    Rng rng(4);
    net.init(rng);
    Tensor x(3, {1, 6, 6});
    std::mt19937_64 r(8);
    x.data = testing::random_vector(r, x.data.size());
    const std::vector<int> labels{0, 2, 1};
    auto loss = [&] { return softmax_cross_entropy(net.forward(x, true), labels).loss; };
    net.zero_grad();
    net.backward(softmax_cross_entropy(net.forward(x, true), labels).grad);
    const auto analytic = net.grads();
    const auto num = testing::numeric_gradient(net.params(), loss);
    CHECK(testing::relative_error(analytic, num) < 1e-6);
}

TEST_CASE("adam first step moves each coordinate by about lr against the gradient sign") {
    Adam opt;
    opt.lr = 0.01;
    std::vector<double> p{1.0, 1.0, 1.0};
    const std::vector<double> g{3.0, -0.001, 0.0};
    opt.step(p, g);
    CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(1.01).epsilon(1e-3));
    CHECK(p[2] == 1.0);
}

TEST_CASE("batch norm eval mode uses running statistics") {
    auto bn = batch_norm2d(1);
    bn->configure({1, 1, 2});
    std::vector<double> params{1.0, 0.0};  // gamma, beta
    std::vector<double> state{0.0, 1.0};   // running mean, running var
    Tensor x(1, {1, 1, 2});
    x.data = {2.0, 4.0};
    const auto y = bn->forward(x, params, state, false);
    CHECK(y.data[0] == doctest::Approx(2.0 / std::sqrt(1.0 + 1e-5)));
    // Training mode normalises the batch and updates the running mean.
    bn->forward(x, params, state, true);
    CHECK(state[0] == doctest::Approx(0.3));
}

TEST_CASE("shape mismatch is reported") {
    auto layer = dense(4, 2);
    CHECK_THROWS_AS(layer->configure({3, 1, 1}), ShapeError);
}
