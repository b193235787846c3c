#pragma once

#include <cmath>
#include <vector>

#include "twins/ops.hpp"
#include "twins/tensor.hpp"

namespace twins {

/// Point-resolution feature map, batched as [B, C, d, L].
struct PointFeatureMap {
    Tensor data;

    std::size_t batch() const { return data.dim(0); }
    std::size_t channels() const { return data.dim(1); }
    std::size_t width() const { return data.dim(2); }
    std::size_t length() const { return data.dim(3); }
};

/// Patch sequence [B, C, P, D] plus what is needed to fold it back.
struct PatchedFeatureMap {
    Tensor data;
    std::size_t scale = 0;
    std::size_t stride = 0;
    std::size_t layer = 0;
    Shape parent;  // (B, C, d, L) of the point map this came from; empty if none

    std::size_t batch() const { return data.dim(0); }
    std::size_t channels() const { return data.dim(1); }
    std::size_t patches() const { return data.dim(2); }
    std::size_t dim() const { return data.dim(3); }

    PatchedFeatureMap with(Tensor t) const {
        PatchedFeatureMap p = *this;
        p.data = std::move(t);
        return p;
    }
};

/// One shared kernel store realizing every nested scale. Scale i (1-based)
/// uses the centered window of width 2^i - 1 of `base_weights` [d, 1, 2^n - 1].
struct WaveletKernelBank {
    Tensor base_weights;
    std::size_t num_scales = 0;

    std::size_t width() const { return base_weights.dim(0); }
    std::size_t k_max() const { return base_weights.dim(2); }
    static std::size_t kernel_size(std::size_t i) { return (std::size_t{1} << i) - 1; }
    std::vector<std::size_t> kernel_sizes() const {
        std::vector<std::size_t> ks;
        for (std::size_t i = 1; i <= num_scales; ++i) ks.push_back(kernel_size(i));
        return ks;
    }
};

inline WaveletKernelBank build_kernel_bank(std::size_t d, std::size_t num_scales, Rng& rng) {
    if (num_scales < 1) throw ShapeError("kernel bank needs at least one scale");
    if (d < 1) throw ShapeError("kernel bank width must be positive");
    const std::size_t kmax = WaveletKernelBank::kernel_size(num_scales);
    const double bound = 1.0 / std::sqrt(static_cast<double>(kmax));
    return {uniform({d, 1, kmax}, -bound, bound, rng), num_scales};
}

inline WaveletKernelBank build_kernel_bank(std::size_t d, std::size_t num_scales, std::uint64_t seed) {
    Rng rng(seed);
    return build_kernel_bank(d, num_scales, rng);
}

/// Centered sub-window of the shared weights for scale i in [1, num_scales].
inline Tensor extract_scale_kernel(const WaveletKernelBank& bank, std::size_t i) {
    if (i < 1 || i > bank.num_scales)
        throw ShapeError("scale index " + std::to_string(i) + " outside [1, " + std::to_string(bank.num_scales) + "]");
    const std::size_t k = WaveletKernelBank::kernel_size(i);
    return ops::slice(bank.base_weights, 2, (bank.k_max() - k) / 2, k);
}

/// Sum over all scales of the per-series convolution with that scale's
/// kernel. x is [B, C, L]; every series is embedded independently with the
/// same bank.
inline PointFeatureMap wconv_embed(const Tensor& x, const WaveletKernelBank& bank) {
    if (x.ndim() != 3) throw ShapeError("wconv_embed expects [B, C, L], got " + to_string(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
    auto series = ops::reshape(x, {B * C, 1, L});
    Tensor acc;
    for (std::size_t i = 1; i <= bank.num_scales; ++i) {
        auto y = ops::conv1d(series, extract_scale_kernel(bank, i));
        acc = acc.defined() ? ops::add(acc, y) : y;
    }
    return {ops::reshape(acc, {B, C, bank.width(), L})};
}

/// Trainable [d, L] table shared by every series.
struct PositionEmbedding {
    Tensor table;
};

inline PositionEmbedding make_position_embedding(std::size_t d, std::size_t L, Rng& rng) {
    return {uniform({d, L}, -0.02, 0.02, rng)};
}

inline PointFeatureMap add_position(const PointFeatureMap& x, const PositionEmbedding& pos) {
    if (pos.table.ndim() != 2 || pos.table.dim(0) != x.width() || pos.table.dim(1) != x.length())
        throw ShapeError("position table " + to_string(pos.table.shape()) + " does not match point map " +
                         to_string(x.data.shape()));
    return {ops::add(x.data, pos.table)};
}

/// Shared affine map from each length-`patch_len` segment to D features.
struct LinearPatchEmbedding {
    Tensor weight;  // [patch_len, D]
    Tensor bias;    // [D]
    std::size_t patch_len = 0;
};

inline LinearPatchEmbedding make_linear_patch_embedding(std::size_t patch_len, std::size_t D, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(patch_len));
    return {uniform({patch_len, D}, -bound, bound, rng), uniform({D}, -bound, bound, rng), patch_len};
}

/// x [B, C, L] -> [B, C, L / patch_len, D], non-overlapping (stride == patch_len).
inline PatchedFeatureMap linear_patch_embed(const Tensor& x, const LinearPatchEmbedding& emb) {
    if (x.ndim() != 3) throw ShapeError("linear_patch_embed expects [B, C, L], got " + to_string(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2), s = emb.patch_len;
    if (s == 0 || L % s != 0)
        throw ShapeError("lookback " + std::to_string(L) + " not divisible by patch length " + std::to_string(s));
    auto segs = ops::reshape(x, {B, C, L / s, s});
    PatchedFeatureMap out;
    out.data = ops::linear(segs, emb.weight, emb.bias);
    out.scale = out.stride = s;
    return out;
}

}  // namespace twins
