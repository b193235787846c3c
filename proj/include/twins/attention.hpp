#pragma once

#include <cmath>

#include "twins/embedding.hpp"
#include "twins/ops.hpp"

namespace twins {

/// Projections of one attention block, all [D, D] without bias. The keyless
/// variant leaves wq/wk undefined.
struct AttentionWeights {
    Tensor wq, wk, wv, wo;
    std::size_t heads = 1;
};

/// Periodic score sub-network: a depthwise convolution along the patch axis
/// over D features (S contiguous groups of D/S), GELU, then a per-head map
/// from D/S features to P key positions.
struct ScoreSubnet {
    Tensor dw_kernels;  // [D, k]
    Tensor dw_bias;     // [D]
    Tensor wp;          // [S, D/S, P_max]
    std::size_t aware_heads = 1;

    std::size_t kernel() const { return dw_kernels.dim(1); }
    std::size_t max_patches() const { return wp.dim(2); }
};

/// Scores in (0, 1), laid out [B, C, S, P, P].
struct ScoreTensor {
    Tensor data;
};

/// Post-softmax attention [B, C, M, P, P] captured during a forward pass.
struct AttentionTrace {
    Tensor probs;
};

inline AttentionWeights make_attention_weights(std::size_t D, std::size_t heads, bool with_keys, Rng& rng) {
    const double b = 1.0 / std::sqrt(static_cast<double>(D));
    AttentionWeights w;
    w.heads = heads;
    if (with_keys) {
        w.wq = uniform({D, D}, -b, b, rng);
        w.wk = uniform({D, D}, -b, b, rng);
    }
    w.wv = uniform({D, D}, -b, b, rng);
    w.wo = uniform({D, D}, -b, b, rng);
    return w;
}

inline ScoreSubnet make_score_subnet(std::size_t D, std::size_t aware_heads, std::size_t k, std::size_t p_max,
                                     Rng& rng) {
    if (D % aware_heads != 0) throw ShapeError("patch dim not divisible by aware heads");
    const double bk = 1.0 / std::sqrt(static_cast<double>(k));
    const double bp = 1.0 / std::sqrt(static_cast<double>(D / aware_heads));
    return {uniform({D, k}, -bk, bk, rng), uniform({D}, -bk, bk, rng), uniform({aware_heads, D / aware_heads, p_max}, -bp, bp, rng),
            aware_heads};
}

namespace detail {

/// [N, P, D] -> [N, M, P, D/M]
inline Tensor split_heads(const Tensor& x, std::size_t M) {
    const std::size_t N = x.dim(0), P = x.dim(1), D = x.dim(2);
    return ops::permute(ops::reshape(x, {N, P, M, D / M}), {0, 2, 1, 3});
}

/// [N, M, P, Dh] -> [N, P, M * Dh]
inline Tensor merge_heads(const Tensor& x) {
    const std::size_t N = x.dim(0), M = x.dim(1), P = x.dim(2), Dh = x.dim(3);
    return ops::reshape(ops::permute(x, {0, 2, 1, 3}), {N, P, M * Dh});
}

inline void check_weights(const PatchedFeatureMap& x, const Tensor& w, const char* name) {
    if (!w.defined() || w.ndim() != 2 || w.dim(0) != x.dim() || w.dim(1) != x.dim())
        throw ShapeError(std::string("attention weight ") + name + " must be [" + std::to_string(x.dim()) + ", " +
                         std::to_string(x.dim()) + "]");
}

/// probs [N, M, P, P] against v heads, then output projection.
inline PatchedFeatureMap attend(const PatchedFeatureMap& x, const Tensor& probs, const Tensor& vh, const Tensor& wo,
                                AttentionTrace* trace) {
    const std::size_t B = x.batch(), C = x.channels(), P = x.patches(), D = x.dim();
    if (trace) trace->probs = ops::reshape(probs, {B, C, probs.dim(1), P, P}).detach();
    Tensor ctx;
    {
        MacSection s("values");
        ctx = ops::matmul(probs, vh);
    }
    MacSection s("projection");
    auto y = ops::linear(merge_heads(ctx), wo);
    return x.with(ops::reshape(y, {B, C, P, D}));
}

inline Tensor project_heads(const Tensor& x2, const Tensor& w, std::size_t M) {
    MacSection s("projection");
    return split_heads(ops::linear(x2, w), M);
}

/// Scaled q.k^T logits [N, M, P, P].
inline Tensor dot_logits(const Tensor& qh, const Tensor& kh) {
    MacSection s("attention");
    const double c = 1.0 / std::sqrt(static_cast<double>(qh.dim(3)));
    return ops::scale(ops::matmul(qh, ops::transpose(kh, 2, 3)), c);
}

inline void check_heads(const PatchedFeatureMap& x, std::size_t M) {
    if (M == 0 || x.dim() % M != 0)
        throw ShapeError("patch dim " + std::to_string(x.dim()) + " not divisible by " + std::to_string(M) + " heads");
}

}  // namespace detail

/// Multi-head scaled dot-product self-attention over the patch axis, each
/// series attended independently. No residual.
inline PatchedFeatureMap mhsa(const PatchedFeatureMap& x, const AttentionWeights& w, AttentionTrace* trace = nullptr) {
    detail::check_heads(x, w.heads);
    detail::check_weights(x, w.wq, "wq");
    detail::check_weights(x, w.wk, "wk");
    detail::check_weights(x, w.wv, "wv");
    detail::check_weights(x, w.wo, "wo");
    const std::size_t N = x.batch() * x.channels(), P = x.patches(), D = x.dim(), M = w.heads;
    auto x2 = ops::reshape(x.data, {N, P, D});
    auto qh = detail::project_heads(x2, w.wq, M);
    auto kh = detail::project_heads(x2, w.wk, M);
    auto vh = detail::project_heads(x2, w.wv, M);
    auto probs = ops::softmax(detail::dot_logits(qh, kh), 3);
    return detail::attend(x, probs, vh, w.wo, trace);
}

/// Periodic relevance scores, [B, C, S, P, P], each entry in (0, 1).
inline ScoreTensor paa_scores(const PatchedFeatureMap& x, const ScoreSubnet& net) {
    const std::size_t S = net.aware_heads, B = x.batch(), C = x.channels(), P = x.patches(), D = x.dim();
    if (S == 0 || D % S != 0)
        throw ShapeError("patch dim " + std::to_string(D) + " not divisible by " + std::to_string(S) + " aware heads");
    if (net.dw_kernels.dim(0) != D || net.wp.dim(0) != S || net.wp.dim(1) != D / S)
        throw ShapeError("score sub-network sized for a different patch dim");
    if (P > net.max_patches())
        throw ShapeError("patch count " + std::to_string(P) + " exceeds score map width " +
                         std::to_string(net.max_patches()));
    MacSection section("attention");
    const std::size_t N = B * C;
    auto feats = ops::transpose(ops::reshape(x.data, {N, P, D}), 1, 2);  // [N, D, P]
    auto h = ops::gelu(ops::depthwise_conv1d(feats, net.dw_kernels, net.dw_bias));
    h = ops::transpose(ops::reshape(h, {N, S, D / S, P}), 2, 3);  // [N, S, P, D/S]
    auto wp = P == net.max_patches() ? net.wp : ops::slice(net.wp, 2, 0, P);
    auto logits = ops::matmul(h, wp);  // [N, S, P, P]
    return {ops::reshape(ops::sigmoid(logits), {B, C, S, P, P})};
}

/// Repeats each aware head M/S times in order -> [B, C, M, P, P].
inline Tensor align_heads(const ScoreTensor& scores, std::size_t M) {
    const std::size_t S = scores.data.dim(2);
    if (M % S != 0)
        throw ShapeError("attention heads " + std::to_string(M) + " not a multiple of aware heads " + std::to_string(S));
    if (M == S) return scores.data;
    return ops::repeat_interleave(scores.data, 2, M / S);
}

/// Dot-product attention whose logits are modulated elementwise by the
/// aligned periodic scores.
inline PatchedFeatureMap twins_plus_attention(const PatchedFeatureMap& x, const AttentionWeights& w,
                                              const Tensor& aligned, AttentionTrace* trace = nullptr) {
    detail::check_heads(x, w.heads);
    detail::check_weights(x, w.wq, "wq");
    detail::check_weights(x, w.wk, "wk");
    detail::check_weights(x, w.wv, "wv");
    detail::check_weights(x, w.wo, "wo");
    const std::size_t N = x.batch() * x.channels(), P = x.patches(), D = x.dim(), M = w.heads;
    const Shape expect{x.batch(), x.channels(), M, P, P};
    if (aligned.shape() != expect)
        throw ShapeError("aligned scores " + to_string(aligned.shape()) + " expected " + to_string(expect));
    auto x2 = ops::reshape(x.data, {N, P, D});
    auto qh = detail::project_heads(x2, w.wq, M);
    auto kh = detail::project_heads(x2, w.wk, M);
    auto vh = detail::project_heads(x2, w.wv, M);
    auto logits = detail::dot_logits(qh, kh);
    auto probs = ops::softmax(ops::mul(ops::reshape(aligned, {N, M, P, P}), logits), 3);
    return detail::attend(x, probs, vh, w.wo, trace);
}

/// Keyless attention: the row-softmax of the aligned scores weights v.
inline PatchedFeatureMap twins_attention(const PatchedFeatureMap& x, const Tensor& wv, const Tensor& wo,
                                         const Tensor& aligned, AttentionTrace* trace = nullptr) {
    detail::check_weights(x, wv, "wv");
    detail::check_weights(x, wo, "wo");
    if (aligned.ndim() != 5 || aligned.dim(0) != x.batch() || aligned.dim(1) != x.channels() ||
        aligned.dim(3) != x.patches() || aligned.dim(4) != x.patches())
        throw ShapeError("aligned scores " + to_string(aligned.shape()) + " do not match patched map " +
                         to_string(x.data.shape()));
    const std::size_t M = aligned.dim(2);
    detail::check_heads(x, M);
    const std::size_t N = x.batch() * x.channels(), P = x.patches(), D = x.dim();
    auto x2 = ops::reshape(x.data, {N, P, D});
    auto vh = detail::project_heads(x2, wv, M);
    auto probs = ops::softmax(ops::reshape(aligned, {N, M, P, P}), 3);
    return detail::attend(x, probs, vh, wo, trace);
}

}  // namespace twins
