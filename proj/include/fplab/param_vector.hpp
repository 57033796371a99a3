#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace fplab {

/// Flat model parameter state exchanged between clients and the server.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
    ParamVector(std::initializer_list<double> values) : values_(values) {}

    std::size_t dim() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }
    double operator[](std::size_t i) const noexcept { return values_[i]; }
    double& operator[](std::size_t i) noexcept { return values_[i]; }

    std::span<const double> span() const noexcept { return values_; }
    std::span<double> span() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }
    std::vector<double>& values() noexcept { return values_; }

    bool all_finite() const noexcept;

    friend bool operator==(const ParamVector&, const ParamVector&) = default;

private:
    std::vector<double> values_;
};

/// Throws ShapeError unless both vectors have the same dimension.
void require_same_dim(const ParamVector& a, const ParamVector& b, const char* context);

double squared_distance(const ParamVector& a, const ParamVector& b);
double l2_norm(std::span<const double> v);

}  // namespace fplab
