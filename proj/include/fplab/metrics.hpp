#pragma once

#include <array>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "fplab/data.hpp"
#include "fplab/fl_core.hpp"
#include "fplab/model.hpp"

namespace fplab::metrics {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<std::int64_t> counts;

    explicit ConfusionMatrix(int classes = 0)
        : num_classes(classes), counts(static_cast<std::size_t>(classes) * classes, 0) {}

    std::int64_t at(int truth, int predicted) const { return counts[truth * num_classes + predicted]; }
    std::int64_t& at(int truth, int predicted) { return counts[truth * num_classes + predicted]; }
    std::int64_t total() const;
    std::int64_t row_total(int truth) const;
    std::int64_t trace() const;
};

ConfusionMatrix confusion_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                           int num_classes);
ConfusionMatrix confusion_matrix(const Classifier& model, const ParamVector& params, const data::Dataset& test);

/// N_right / N_total.
double accuracy(const ConfusionMatrix& cm);
double accuracy(const Classifier& model, const ParamVector& params, const data::Dataset& test);

/// N_{s->t} / N_source.
double attack_success_rate(const ConfusionMatrix& cm, int source, int target);
double attack_success_rate(const Classifier& model, const ParamVector& params, const data::Dataset& test,
                           int source, int target);

/// Recall of every class; classes absent from the test set report NaN.
std::vector<double> per_class_accuracy(const ConfusionMatrix& cm);

struct PcaResult {
    /// One row of `out_dims` coordinates per input row.
    std::vector<std::vector<double>> coords;
    std::vector<double> eigenvalues;
    int rank = 0;
    /// True when fewer than `out_dims` non-degenerate components existed and zeros were padded in.
    bool padded = false;
};

/// Projects mean-centred rows onto the leading eigenvectors of their covariance.
/// Each eigenvector is signed so that its largest-magnitude entry is positive.
/// Uses the Gram matrix when the dimension exceeds the row count.
PcaResult pca_project(std::span<const ParamVector> rows, int out_dims = 2);

/// Symmetric eigen-decomposition by cyclic Jacobi rotations. `a` is row-major n×n.
/// Eigenvalues are returned in descending order; eigenvectors are the columns of `vectors`.
void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& values, std::vector<double>& vectors);

struct ProjectedPoint {
    std::array<double, 2> xy{};
    Role role = Role::benign;
    int client_id = -1;
};

struct MisReport {
    std::array<double, 2> benign_centroid{};
    std::array<double, 2> poisoned_centroid{};
    double distance = 0.0;
    /// 1 / distance; +infinity when the centroids coincide.
    double mis = 0.0;
    bool coincident = false;
    std::string diagnostic;
    std::vector<ProjectedPoint> points;
};

MisReport mis(std::span<const ProjectedPoint> projected);

/// PCA to two dimensions over the submitted models, then MIS by known role.
MisReport mis_from_updates(std::span<const ClientUpdate> updates);

nlohmann::json to_json(const MisReport& report);

}  // namespace fplab::metrics
