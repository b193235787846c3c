#pragma once

#include "twins/embedding.hpp"
#include "twins/ops.hpp"

namespace twins {

/// Groups each run of `scale` time steps into one patch token of width
/// d * scale (feature index = channel * scale + offset).
inline PatchedFeatureMap window_unfold(const PointFeatureMap& x, std::size_t scale, std::size_t stride,
                                       std::size_t layer = 0) {
    if (scale != stride)
        throw ShapeError("window patching needs scale == stride, got " + std::to_string(scale) + " and " +
                         std::to_string(stride));
    const std::size_t B = x.batch(), C = x.channels(), d = x.width(), L = x.length();
    if (scale == 0 || L % scale != 0)
        throw ShapeError("length " + std::to_string(L) + " not divisible by window scale " + std::to_string(scale));
    const std::size_t P = L / scale;
    auto t = ops::reshape(x.data, {B, C, d, P, scale});
    t = ops::permute(t, {0, 1, 3, 2, 4});
    PatchedFeatureMap out;
    out.data = ops::reshape(t, {B, C, P, d * scale});
    out.scale = scale;
    out.stride = stride;
    out.layer = layer;
    out.parent = x.data.shape();
    return out;
}

/// Exact inverse of window_unfold.
inline PointFeatureMap window_fold(const PatchedFeatureMap& x) {
    if (x.parent.size() != 4 || x.scale == 0 || x.scale != x.stride)
        throw ShapeError("window_fold: patched map carries no valid unfold metadata");
    const std::size_t B = x.parent[0], C = x.parent[1], d = x.parent[2], L = x.parent[3];
    if (x.data.ndim() != 4 || x.batch() != B || x.channels() != C || x.patches() * x.scale != L ||
        x.dim() != d * x.scale)
        throw ShapeError("window_fold: data " + to_string(x.data.shape()) + " inconsistent with parent " +
                         to_string(x.parent) + " at scale " + std::to_string(x.scale));
    const std::size_t P = L / x.scale;
    auto t = ops::reshape(x.data, {B, C, P, d, x.scale});
    t = ops::permute(t, {0, 1, 3, 2, 4});
    return {ops::reshape(t, {B, C, d, L})};
}

/// Cyclic shift of the patch axis by r.
inline PatchedFeatureMap window_roll(const PatchedFeatureMap& x, long r) {
    if (r == 0) return x;
    return x.with(ops::roll(x.data, r, 2));
}

}  // namespace twins
