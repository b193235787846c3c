#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "twins/attention.hpp"
#include "twins/config.hpp"
#include "twins/embedding.hpp"
#include "twins/ops.hpp"
#include "twins/patching.hpp"

namespace twins {

// ---------------------------------------------------------------------------
// Instance normalization
// ---------------------------------------------------------------------------

/// Per (window, channel) lookback mean and population std.
struct NormStats {
    std::vector<double> mean, stddev;  // [B * C]
    double eps = 1e-5;
};

/// x [B, C, L] -> ((x - mean) / (std + eps), stats). Stats are constants.
inline std::pair<Tensor, NormStats> instance_normalize(const Tensor& x, double eps = 1e-5) {
    if (x.ndim() != 3) throw ShapeError("instance_normalize expects [B, C, L], got " + to_string(x.shape()));
    const std::size_t rows = x.dim(0) * x.dim(1), L = x.dim(2);
    NormStats st;
    st.eps = eps;
    st.mean.resize(rows);
    st.stddev.resize(rows);
    auto out = Tensor::zeros(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (std::size_t t = 0; t < L; ++t) mu += x[r * L + t];
        mu /= static_cast<double>(L);
        double var = 0.0;
        for (std::size_t t = 0; t < L; ++t) var += (x[r * L + t] - mu) * (x[r * L + t] - mu);
        const double sd = std::sqrt(var / static_cast<double>(L));
        st.mean[r] = mu;
        st.stddev[r] = sd;
        for (std::size_t t = 0; t < L; ++t) out[r * L + t] = (x[r * L + t] - mu) / (sd + eps);
    }
    return {out, st};
}

/// y [B, C, T] back to the input scale: y * (std + eps) + mean.
inline Tensor denormalize(const Tensor& y, const NormStats& st) {
    const std::size_t rows = st.mean.size(), T = y.size() / rows;
    if (y.size() != rows * T) throw ShapeError("denormalize: shape does not match stats");
    auto scale = Tensor::zeros(y.shape());
    auto shift = Tensor::zeros(y.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < T; ++t) {
            scale[r * T + t] = st.stddev[r] + st.eps;
            shift[r * T + t] = st.mean[r];
        }
    return ops::add(ops::mul(y, scale), shift);
}

// ---------------------------------------------------------------------------
// Sublayers
// ---------------------------------------------------------------------------

struct FeedForwardWeights {
    Tensor w1, b1, w2, b2;  // [D, F], [F], [F, D], [D]
};

/// Position-wise D -> F -> D with GELU in between.
inline PatchedFeatureMap feed_forward(const PatchedFeatureMap& x, const FeedForwardWeights& w) {
    if (w.w1.dim(0) != x.dim() || w.w2.dim(1) != x.dim())
        throw ShapeError("feed-forward weights do not match patch dim " + std::to_string(x.dim()));
    return x.with(ops::linear(ops::gelu(ops::linear(x.data, w.w1, w.b1)), w.w2, w.b2));
}

struct MixerWeights {
    Tensor w1, b1, w2, b2;  // [C*P, h], [h], [h, C*P], [C*P]
};

/// Channel-temporal mixer: per feature row, an MLP over the flattened
/// (channel, patch) axis of length C*P.
inline PatchedFeatureMap ct_mlp(const PatchedFeatureMap& x, const MixerWeights& w) {
    const std::size_t B = x.batch(), C = x.channels(), P = x.patches(), D = x.dim();
    if (w.w1.dim(0) != C * P || w.w2.dim(1) != C * P)
        throw ShapeError("CT-MLP sized for width " + std::to_string(w.w1.dim(0)) + ", layer has C*P = " +
                         std::to_string(C * P));
    auto h = ops::reshape(ops::permute(x.data, {0, 3, 1, 2}), {B, D, C * P});
    h = ops::linear(ops::gelu(ops::linear(h, w.w1, w.b1)), w.w2, w.b2);
    return x.with(ops::permute(ops::reshape(h, {B, D, C, P}), {0, 2, 3, 1}));
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct LayerParams {
    Tensor ln1_g, ln1_b;
    AttentionWeights attn;
    ScoreSubnet subnet;  // tensors undefined for plain MHSA
    Tensor ln2_g, ln2_b;
    FeedForwardWeights ffn;
    Tensor ln3_g, ln3_b;
    MixerWeights mixer;  // undefined when CT-MLP is off
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Per-layer forward captures for inspection tools.
struct ForwardTrace {
    std::vector<AttentionTrace> attention;
    std::vector<Tensor> scores;  // [B, C, S, P, P] per layer when PAA is active
};

class TwinSModel {
public:
    explicit TwinSModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        init(rng);
    }

    const ModelConfig& config() const { return cfg_; }

    /// All trainable tensors in a fixed order with stable names.
    std::vector<NamedTensor> named_parameters() const {
        std::vector<NamedTensor> out;
        auto put = [&](std::string n, const Tensor& t) {
            if (t.defined()) out.push_back({std::move(n), t});
        };
        if (cfg_.use_wconv) {
            put("embed.kernel_bank", bank_.base_weights);
        } else {
            put("embed.linear.weight", linear_embed_.weight);
            put("embed.linear.bias", linear_embed_.bias);
        }
        put("embed.position", position_.table);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& p = layers_[l];
            const std::string k = "layer" + std::to_string(l) + ".";
            put(k + "ln1.gamma", p.ln1_g);
            put(k + "ln1.beta", p.ln1_b);
            put(k + "attn.wq", p.attn.wq);
            put(k + "attn.wk", p.attn.wk);
            put(k + "attn.wv", p.attn.wv);
            put(k + "attn.wo", p.attn.wo);
            put(k + "score.dw_kernels", p.subnet.dw_kernels);
            put(k + "score.dw_bias", p.subnet.dw_bias);
            put(k + "score.wp", p.subnet.wp);
            put(k + "ln2.gamma", p.ln2_g);
            put(k + "ln2.beta", p.ln2_b);
            put(k + "ffn.w1", p.ffn.w1);
            put(k + "ffn.b1", p.ffn.b1);
            put(k + "ffn.w2", p.ffn.w2);
            put(k + "ffn.b2", p.ffn.b2);
            put(k + "ln3.gamma", p.ln3_g);
            put(k + "ln3.beta", p.ln3_b);
            put(k + "mix.w1", p.mixer.w1);
            put(k + "mix.b1", p.mixer.b1);
            put(k + "mix.w2", p.mixer.w2);
            put(k + "mix.b2", p.mixer.b2);
        }
        put("head.weight", head_w_);
        put("head.bias", head_b_);
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto& nt : named_parameters()) out.push_back(nt.tensor);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto& nt : named_parameters()) n += nt.tensor.size();
        return n;
    }

    /// Closed-form parameter count for `cfg`.
    ///   embedding: d(2^n - 1) + dL                (wavelet)  | s*D + D + P*D   (linear patch)
    ///   per layer: 6D (norms) + {2,4}D^2 (attention) + [Dk + D + D*P_max] (scores)
    ///              + 2DF + F + D (ffn) + [2*CP*h + h + CP] (mixer)
    ///   head:      dL*T + T
    static std::size_t expected_parameter_count(const ModelConfig& cfg) {
        const std::size_t d = cfg.d_model, L = cfg.lookback, T = cfg.horizon, C = cfg.channels;
        std::size_t n = 0;
        if (cfg.use_wconv) {
            n += d * ((std::size_t{1} << cfg.num_scales) - 1) + d * L;
        } else {
            const std::size_t D = cfg.patch_dim(0), P = cfg.patches(0);
            n += cfg.patch_len * D + D + P * D;
        }
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const std::size_t D = cfg.patch_dim(l), P = cfg.patches(l), F = cfg.ffn_hidden, h = cfg.ctmlp_hidden;
            n += 6 * D;
            n += (cfg.uses_keys() ? 4 : 2) * D * D;
            if (cfg.uses_scores()) n += D * cfg.subnet_kernel + D + D * cfg.max_patches();
            n += 2 * D * F + F + D;
            if (cfg.use_ctmlp) n += 2 * C * P * h + h + C * P;
        }
        n += d * L * T + T;
        return n;
    }

    LayerParams& layer(std::size_t l) { return layers_.at(l); }
    const LayerParams& layer(std::size_t l) const { return layers_.at(l); }
    WaveletKernelBank& bank() { return bank_; }
    PositionEmbedding& position() { return position_; }
    LinearPatchEmbedding& linear_embedding() { return linear_embed_; }
    Tensor& head_weight() { return head_w_; }
    Tensor& head_bias() { return head_b_; }

    /// Sets every parameter value to zero.
    void zero_parameters() {
        for (auto& t : parameters())
            for (auto& v : t.values()) v = 0.0;
    }

    /// Pre-norm residual block on a patch sequence: attention, feed-forward,
    /// then (optionally) the channel-temporal mixer.
    PatchedFeatureMap encoder_block(const PatchedFeatureMap& x, std::size_t l, ForwardTrace* trace = nullptr,
                                    Rng* dropout_rng = nullptr) const {
        const auto& p = layers_.at(l);
        auto norm = [&](const PatchedFeatureMap& m, const Tensor& g, const Tensor& b) {
            return m.with(ops::layer_norm(m.data, g, b, 3));
        };
        auto residual = [&](const PatchedFeatureMap& base, const PatchedFeatureMap& branch) {
            return base.with(ops::add(base.data, dropout(branch.data, dropout_rng)));
        };

        AttentionTrace at;
        AttentionTrace* atp = trace ? &at : nullptr;
        auto h = norm(x, p.ln1_g, p.ln1_b);
        PatchedFeatureMap a;
        switch (cfg_.attention()) {
            case Variant::mhsa: a = mhsa(h, p.attn, atp); break;
            case Variant::twins: {
                auto sc = paa_scores(h, p.subnet);
                if (trace) trace->scores.push_back(sc.data.detach());
                a = twins_attention(h, p.attn.wv, p.attn.wo, align_heads(sc, p.attn.heads), atp);
                break;
            }
            case Variant::twins_plus: {
                auto sc = paa_scores(h, p.subnet);
                if (trace) trace->scores.push_back(sc.data.detach());
                a = twins_plus_attention(h, p.attn, align_heads(sc, p.attn.heads), atp);
                break;
            }
        }
        if (trace) trace->attention.push_back(at);
        auto y = residual(x, a);
        y = residual(y, feed_forward(norm(y, p.ln2_g, p.ln2_b), p.ffn));
        if (cfg_.use_ctmlp) y = residual(y, ct_mlp(norm(y, p.ln3_g, p.ln3_b), p.mixer));
        return y;
    }

    /// unfold -> roll(r) -> block -> roll(-r) -> fold, at this layer's scale.
    PointFeatureMap encoder_layer(const PointFeatureMap& x, std::size_t l, ForwardTrace* trace = nullptr,
                                  Rng* dropout_rng = nullptr) const {
        const std::size_t s = cfg_.scale(l);
        const long r = cfg_.roll(l);
        auto patched = window_roll(window_unfold(x, s, s, l), r);
        patched = encoder_block(patched, l, trace, dropout_rng);
        return window_fold(window_roll(patched, -r));
    }

    /// x_raw [B, C, L] -> forecast [B, C, T] on the input scale.
    Tensor forward(const Tensor& x_raw, ForwardTrace* trace = nullptr, Rng* dropout_rng = nullptr) const {
        if (x_raw.ndim() != 3 || x_raw.dim(1) != cfg_.channels || x_raw.dim(2) != cfg_.lookback)
            throw ShapeError("forward expects [B, " + std::to_string(cfg_.channels) + ", " +
                             std::to_string(cfg_.lookback) + "], got " + to_string(x_raw.shape()));
        const std::size_t B = x_raw.dim(0), C = cfg_.channels;
        auto [xn, stats] = instance_normalize(x_raw);
        Tensor features;
        if (cfg_.use_wconv) {
            auto pm = add_position(wconv_embed(xn, bank_), position_);
            for (std::size_t l = 0; l < cfg_.layers; ++l) {
                try {
                    pm = encoder_layer(pm, l, trace, dropout_rng);
                } catch (const ShapeError& e) {
                    throw ShapeError("layer " + std::to_string(l) + ": " + e.what());
                }
            }
            features = pm.data;
        } else {
            auto pt = linear_patch_embed(xn, linear_embed_);
            pt = pt.with(ops::add(pt.data, position_.table));
            for (std::size_t l = 0; l < cfg_.layers; ++l) {
                try {
                    pt = encoder_block(pt, l, trace, dropout_rng);
                } catch (const ShapeError& e) {
                    throw ShapeError("layer " + std::to_string(l) + ": " + e.what());
                }
            }
            features = pt.data;
        }
        auto flat = ops::reshape(features, {B, C, features.size() / (B * C)});
        auto y = ops::linear(flat, head_w_, head_b_);
        return denormalize(y, stats);
    }

private:
    Tensor dropout(const Tensor& x, Rng* rng) const {
        if (!rng || cfg_.dropout <= 0.0) return x;
        auto mask = Tensor::zeros(x.shape());
        std::bernoulli_distribution keep(1.0 - cfg_.dropout);
        const double s = 1.0 / (1.0 - cfg_.dropout);
        for (auto& m : mask.values()) m = keep(*rng) ? s : 0.0;
        return ops::mul(x, mask);
    }

    void init(Rng& rng) {
        const auto& c = cfg_;
        if (c.use_wconv) {
            bank_ = build_kernel_bank(c.d_model, c.num_scales, rng);
            position_ = make_position_embedding(c.d_model, c.lookback, rng);
        } else {
            linear_embed_ = make_linear_patch_embedding(c.patch_len, c.patch_dim(0), rng);
            position_ = {uniform({c.patches(0), c.patch_dim(0)}, -0.02, 0.02, rng)};
        }
        for (std::size_t l = 0; l < c.layers; ++l) {
            const std::size_t D = c.patch_dim(l), P = c.patches(l), F = c.ffn_hidden;
            LayerParams p;
            p.ln1_g = Tensor::full({D}, 1.0, true);
            p.ln1_b = Tensor::zeros({D}, true);
            p.attn = make_attention_weights(D, c.heads, c.uses_keys(), rng);
            if (c.uses_scores()) p.subnet = make_score_subnet(D, c.aware_heads, c.subnet_kernel, c.max_patches(), rng);
            p.ln2_g = Tensor::full({D}, 1.0, true);
            p.ln2_b = Tensor::zeros({D}, true);
            const double bd = 1.0 / std::sqrt(static_cast<double>(D)), bf = 1.0 / std::sqrt(static_cast<double>(F));
            p.ffn = {uniform({D, F}, -bd, bd, rng), uniform({F}, -bd, bd, rng), uniform({F, D}, -bf, bf, rng),
                     uniform({D}, -bf, bf, rng)};
            p.ln3_g = Tensor::full({D}, 1.0, true);
            p.ln3_b = Tensor::zeros({D}, true);
            if (c.use_ctmlp) {
                const std::size_t CP = c.channels * P, h = c.ctmlp_hidden;
                const double bc = 1.0 / std::sqrt(static_cast<double>(CP)), bh = 1.0 / std::sqrt(static_cast<double>(h));
                p.mixer = {uniform({CP, h}, -bc, bc, rng), uniform({h}, -bc, bc, rng), uniform({h, CP}, -bh, bh, rng),
                           uniform({CP}, -bh, bh, rng)};
            }
            layers_.push_back(std::move(p));
        }
        const std::size_t in = c.d_model * c.lookback;
        const double bh = 1.0 / std::sqrt(static_cast<double>(in));
        head_w_ = uniform({in, c.horizon}, -bh, bh, rng);
        head_b_ = uniform({c.horizon}, -bh, bh, rng);
    }

    ModelConfig cfg_;
    WaveletKernelBank bank_;
    LinearPatchEmbedding linear_embed_;
    PositionEmbedding position_;
    std::vector<LayerParams> layers_;
    Tensor head_w_, head_b_;
};

}  // namespace twins
