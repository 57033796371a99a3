#include "fplab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fplab/errors.hpp"

namespace fplab::metrics {

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

std::int64_t ConfusionMatrix::row_total(int truth) const {
    std::int64_t s = 0;
    for (int p = 0; p < num_classes; ++p) s += at(truth, p);
    return s;
}

std::int64_t ConfusionMatrix::trace() const {
    std::int64_t s = 0;
    for (int c = 0; c < num_classes; ++c) s += at(c, c);
    return s;
}

ConfusionMatrix confusion_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                           int num_classes) {
    if (truth.size() != predicted.size()) throw ShapeError("confusion: label/prediction count mismatch");
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes)
            throw InvalidInput("confusion: label out of range");
        ++cm.at(truth[i], predicted[i]);
    }
    return cm;
}

ConfusionMatrix confusion_matrix(const Classifier& model, const ParamVector& params, const data::Dataset& test) {
    if (test.empty()) throw InvalidInput("confusion_matrix: empty test set");
    auto pred = model.predict(params, test);
    std::vector<int> truth;
    truth.reserve(test.size());
    for (const auto& s : test.samples) truth.push_back(s.label);
    return confusion_from_predictions(truth, pred, test.num_classes);
}

double accuracy(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) throw InvalidInput("accuracy: empty test set");
    return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

double accuracy(const Classifier& model, const ParamVector& params, const data::Dataset& test) {
    return accuracy(confusion_matrix(model, params, test));
}

double attack_success_rate(const ConfusionMatrix& cm, int source, int target) {
    if (source == target) throw InvalidInput("attack_success_rate: source equals target");
    if (source < 0 || source >= cm.num_classes || target < 0 || target >= cm.num_classes)
        throw InvalidInput("attack_success_rate: class out of range");
    const auto n_source = cm.row_total(source);
    if (n_source == 0) throw InvalidInput("attack_success_rate: no source-class samples in test set");
    return static_cast<double>(cm.at(source, target)) / static_cast<double>(n_source);
}

double attack_success_rate(const Classifier& model, const ParamVector& params, const data::Dataset& test,
                           int source, int target) {
    return attack_success_rate(confusion_matrix(model, params, test), source, target);
}

std::vector<double> per_class_accuracy(const ConfusionMatrix& cm) {
    std::vector<double> out(cm.num_classes, std::numeric_limits<double>::quiet_NaN());
    for (int c = 0; c < cm.num_classes; ++c) {
        const auto n = cm.row_total(c);
        if (n > 0) out[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
    }
    return out;
}

void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& values, std::vector<double>& vectors) {
    std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[i * n + i] = 1.0;
    auto A = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };

    double scale = 0.0;
    for (double x : a) scale += x * x;
    scale = std::sqrt(scale);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
        if (std::sqrt(off) <= 1e-15 * scale || off == 0.0) break;

        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (apq == 0.0) continue;
                const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return A(x, x) > A(y, y); });
    values.resize(n);
    vectors.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int k = 0; k < n; ++k) {
        values[k] = A(order[k], order[k]);
        for (int i = 0; i < n; ++i) vectors[i * n + k] = v[i * n + order[k]];
    }
}

PcaResult pca_project(std::span<const ParamVector> rows, int out_dims) {
    const int n = static_cast<int>(rows.size());
    if (n < 2) throw InvalidInput("pca_project: need at least 2 rows");
    const std::size_t d = rows[0].dim();
    for (const auto& r : rows)
        if (r.dim() != d) throw ShapeError("pca_project: rows differ in dimension");
    if (out_dims < 1 || static_cast<std::size_t>(out_dims) > std::min<std::size_t>(n, d))
        throw InvalidInput("pca_project: out_dims must be in [1, min(rows, dim)]");

    // Centred data, row-major n×d.
    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    for (auto& m : mean) m /= n;
    std::vector<double> x(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) x[i * d + j] = rows[i][j] - mean[j];

    // Principal axes as unit d-vectors, leading first.
    std::vector<std::vector<double>> axes;
    std::vector<double> eigenvalues;
    const bool use_gram = d > static_cast<std::size_t>(n);
    const int m = use_gram ? n : static_cast<int>(d);
    std::vector<double> mat(static_cast<std::size_t>(m) * m, 0.0);
    if (use_gram) {
        for (int i = 0; i < n; ++i)
            for (int k = i; k < n; ++k) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[k * d + j];
                mat[i * m + k] = mat[k * m + i] = s;
            }
    } else {
        for (int i = 0; i < n; ++i)
            for (int a = 0; a < m; ++a)
                for (int b = a; b < m; ++b) mat[a * m + b] += x[i * d + a] * x[i * d + b];
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < a; ++b) mat[a * m + b] = mat[b * m + a];
    }
    std::vector<double> vals, vecs;
    jacobi_eigen(mat, m, vals, vecs);

    const double top = vals.empty() ? 0.0 : std::max(vals[0], 0.0);
    const double tol = std::max(top * 1e-12, 1e-300);
    PcaResult out;
    for (int k = 0; k < out_dims; ++k) {
        std::vector<double> axis(d, 0.0);
        const bool usable = k < m && vals[k] > tol;
        if (usable) {
            if (use_gram) {
                for (int i = 0; i < n; ++i) {
                    const double u = vecs[i * m + k];
                    for (std::size_t j = 0; j < d; ++j) axis[j] += x[i * d + j] * u;
                }
            } else {
                for (std::size_t j = 0; j < d; ++j) axis[j] = vecs[j * m + k];
            }
            const double norm = l2_norm(axis);
            for (auto& a : axis) a /= norm;
            std::size_t big = 0;
            for (std::size_t j = 1; j < d; ++j)
                if (std::abs(axis[j]) > std::abs(axis[big])) big = j;
            if (axis[big] < 0)
                for (auto& a : axis) a = -a;
            ++out.rank;
        } else {
            out.padded = true;
        }
        axes.push_back(std::move(axis));
        eigenvalues.push_back(k < m ? std::max(vals[k], 0.0) / (n - 1) : 0.0);
    }

    out.coords.assign(n, std::vector<double>(out_dims, 0.0));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < out_dims; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * axes[k][j];
            out.coords[i][k] = s;
        }
    out.eigenvalues = std::move(eigenvalues);
    return out;
}

MisReport mis(std::span<const ProjectedPoint> projected) {
    MisReport r;
    int nb = 0, np = 0;
    for (const auto& p : projected) {
        auto& c = p.role == Role::benign ? r.benign_centroid : r.poisoned_centroid;
        c[0] += p.xy[0];
        c[1] += p.xy[1];
        (p.role == Role::benign ? nb : np)++;
    }
    if (nb == 0 || np == 0) throw InvalidInput("mis: need at least one benign and one poisoned point");
    for (auto& v : r.benign_centroid) v /= nb;
    for (auto& v : r.poisoned_centroid) v /= np;
    r.distance = std::hypot(r.benign_centroid[0] - r.poisoned_centroid[0],
                            r.benign_centroid[1] - r.poisoned_centroid[1]);
    if (r.distance < 1e-12) {
        r.coincident = true;
        r.mis = std::numeric_limits<double>::infinity();
        r.diagnostic = "benign and poisoned centroids coincide; MIS is unbounded";
    } else {
        r.mis = 1.0 / r.distance;
    }
    r.points.assign(projected.begin(), projected.end());
    return r;
}

MisReport mis_from_updates(std::span<const ClientUpdate> updates) {
    std::vector<ParamVector> rows;
    rows.reserve(updates.size());
    for (const auto& u : updates) rows.push_back(u.params);
    auto proj = pca_project(rows, 2);
    std::vector<ProjectedPoint> pts;
    for (std::size_t i = 0; i < updates.size(); ++i)
        pts.push_back({{proj.coords[i][0], proj.coords[i][1]}, updates[i].role, updates[i].client_id});
    auto report = mis(pts);
    if (proj.padded) {
        if (!report.diagnostic.empty()) report.diagnostic += "; ";
        report.diagnostic += "projection rank " + std::to_string(proj.rank) + " < 2, padded with zeros";
    }
    return report;
}

nlohmann::json to_json(const MisReport& report) {
    nlohmann::json j;
    j["benign_centroid"] = report.benign_centroid;
    j["poisoned_centroid"] = report.poisoned_centroid;
    j["distance"] = report.distance;
    // JSON has no infinity; coincident centroids serialise as null with the flag set.
    j["mis"] = report.coincident ? nlohmann::json(nullptr) : nlohmann::json(report.mis);
    j["coincident"] = report.coincident;
    j["diagnostic"] = report.diagnostic;
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : report.points)
        pts.push_back({{"x", p.xy[0]},
                       {"y", p.xy[1]},
                       {"role", p.role == Role::benign ? "benign" : "poisoned"},
                       {"client_id", p.client_id}});
    j["points"] = pts;
    return j;
}

}  // namespace fplab::metrics
