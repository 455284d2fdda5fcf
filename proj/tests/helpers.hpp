// Shared test utilities: finite-difference gradient checking and small
// random-tensor generators. Kept independent of the library's backward pass
// so gradcheck stays an oracle.
#pragma once

#include <distillkit/tensor.hpp>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testutil {

using distillkit::Shape;
using distillkit::Tensor;

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool requires_grad = true, double lo = -1.0,
                            double hi = 1.0) {
    return Tensor::from_data(shape, random_values(rng, distillkit::numel(shape), lo, hi), requires_grad);
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    bool ok = true;
};

// Central finite differences with h = 1e-4 against the analytic gradient of
// a scalar-valued function of `leaves`. Relative error uses a unit floor so
// near-zero gradients compare absolutely.
inline GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                 std::vector<Tensor> leaves, double h = 1e-4, double tol = 1e-3) {
    Tensor out = fn(leaves);
    out.backward();
    GradCheckResult result;
    for (auto& leaf : leaves) {
        if (!leaf.requires_grad()) continue;
        std::vector<double> analytic =
            leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.size(), 0.0);
        for (std::size_t i = 0; i < leaf.size(); ++i) {
            const double saved = leaf.data()[i];
            leaf.mutable_data()[i] = saved + h;
            const double f_plus = fn(leaves).item();
            leaf.mutable_data()[i] = saved - h;
            const double f_minus = fn(leaves).item();
            leaf.mutable_data()[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double denom = std::max({std::fabs(numeric), std::fabs(analytic[i]), 1.0});
            const double rel = std::fabs(numeric - analytic[i]) / denom;
            result.max_rel_error = std::max(result.max_rel_error, rel);
            if (rel > tol) result.ok = false;
        }
        leaf.zero_grad();
    }
    return result;
}

}  // namespace testutil
