#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "twins/tensor.hpp"

namespace twins {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list. Moments start at zero.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamOptions opt = {}) : params_(std::move(params)), opt_(opt) {
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            if (!p.has_grad()) continue;
            const auto& g = p.impl()->grad;
            if (g.size() != p.size()) throw ShapeError("adam: gradient/parameter size mismatch");
            auto& m = m_[k];
            auto& v = v_[k];
            auto w = p.values();
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
                v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1, vhat = v[i] / bc2;
                w[i] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::uint64_t steps() const { return t_; }
    const AdamOptions& options() const { return opt_; }
    const std::vector<double>& first_moment(std::size_t k) const { return m_.at(k); }
    const std::vector<double>& second_moment(std::size_t k) const { return v_.at(k); }

private:
    std::vector<Tensor> params_;
    AdamOptions opt_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t t_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (double g : p.impl()->grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double c = max_norm / norm;
        for (auto& p : params)
            for (double& g : p.impl()->grad) g *= c;
    }
    return norm;
}

}  // namespace twins
