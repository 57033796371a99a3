#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "fplab/data.hpp"
#include "fplab/fl_core.hpp"
#include "fplab/nn.hpp"
#include "fplab/param_vector.hpp"

namespace testing {

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

// Central differences of f over every entry of x (restored afterwards).
inline std::vector<double> numeric_gradient(std::vector<double>& x, const std::function<double()>& f,
                                            double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

// ||a - b|| / (||a|| + ||b||); zero when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(na) + std::sqrt(nb);
    return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

inline fplab::ClientUpdate update(int id, std::vector<double> params, int count = 1,
                                  fplab::Role role = fplab::Role::benign) {
    fplab::ClientUpdate u;
    u.client_id = id;
    u.params = fplab::ParamVector(std::move(params));
    u.sample_count = count;
    u.role = role;
    return u;
}

inline fplab::data::Dataset labelled(std::vector<int> labels, int classes, int size = 4) {
    fplab::data::Dataset d;
    d.num_classes = classes;
    d.image_shape = {1, size, size};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        fplab::data::LabeledSample s;
        s.id = static_cast<std::int64_t>(i);
        s.label = labels[i];
        s.pixels.assign(static_cast<std::size_t>(size) * size, -1.0 + 0.1 * static_cast<double>(i % 20));
        d.samples.push_back(std::move(s));
    }
    return d;
}

}  // namespace testing
