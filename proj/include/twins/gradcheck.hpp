#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "twins/ops.hpp"
#include "twins/tensor.hpp"

namespace twins {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Relative error with a small absolute floor so near-zero gradients are
/// judged on absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of scalar `f(inputs)` against central
/// differences with step h. Every entry of every input is perturbed.
inline GradCheckResult gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h = 1e-5) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    active_tape().clear();
    auto loss = f();
    backward(loss);

    GradCheckResult r;
    NoGradGuard guard;
    for (auto& t : inputs) {
        const auto analytic = t.grad();
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t[i];
            t[i] = orig + h;
            const double fp = f().item();
            t[i] = orig - h;
            const double fm = f().item();
            t[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[i], numeric));
            ++r.checked;
        }
    }
    return r;
}

/// Reduces a tensor to a scalar through a fixed random projection so every
/// output element carries a distinct weight.
inline Tensor project(const Tensor& y, std::uint64_t seed = 7) {
    Rng rng(seed);
    auto r = uniform(y.shape(), -1.0, 1.0, rng, false);
    return ops::sum(ops::mul(y, r));
}

}  // namespace twins
