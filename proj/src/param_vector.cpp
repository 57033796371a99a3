#include "fplab/param_vector.hpp"

#include <cmath>
#include <string>

#include "fplab/errors.hpp"

namespace fplab {

bool ParamVector::all_finite() const noexcept {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

void require_same_dim(const ParamVector& a, const ParamVector& b, const char* context) {
    if (a.dim() != b.dim())
        throw ShapeError(std::string(context) + ": dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()) + ")");
}

double squared_distance(const ParamVector& a, const ParamVector& b) {
    require_same_dim(a, b, "squared_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace fplab
