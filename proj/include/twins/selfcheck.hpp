#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "twins/analysis.hpp"
#include "twins/checkpoint.hpp"
#include "twins/gradcheck.hpp"
#include "twins/model.hpp"

namespace twins {

struct CheckResult {
    std::string name;
    double value = 0.0;      // max error (or other measured quantity)
    double tolerance = 0.0;  // pass when value < tolerance (or <= for exact checks)
    bool passed = false;
};

/// Micro model used by the end-to-end gradient checks.
inline ModelConfig micro_config(Variant v) {
    ModelConfig c;
    c.channels = 2;
    c.lookback = 8;
    c.horizon = 4;
    c.d_model = 2;
    c.num_scales = 2;
    c.layers = 1;
    c.patch_len = 2;
    c.heads = 2;
    c.aware_heads = 2;
    c.subnet_kernel = 3;
    c.ctmlp_hidden = 3;
    c.ffn_hidden = 4;
    c.variant = v;
    c.seed = 5;
    return c;
}

/// Finite-difference checks for every differentiable op plus the micro model.
inline std::vector<CheckResult> gradient_checks(double tol = 1e-4) {
    std::vector<CheckResult> out;
    Rng rng(123);
    auto rnd = [&](Shape s) { return normal(std::move(s), 0.0, 1.0, rng, true); };
    auto away_from_zero = [&](Shape s) {
        auto t = rnd(std::move(s));
        for (auto& v : t.values()) v = (v >= 0 ? 0.2 : -0.2) + v;
        return t;
    };
    auto check = [&](const std::string& name, std::function<Tensor(const std::vector<Tensor>&)> f,
                     std::vector<Tensor> inputs) {
        auto r = gradcheck([&] { return f(inputs); }, inputs);
        out.push_back({name, r.max_rel_error, tol, r.max_rel_error < tol});
    };
    using V = const std::vector<Tensor>&;
    const std::vector<Shape> shapes = {{5}, {3, 4}, {2, 3, 4}};
    for (const auto& s : shapes) {
        const std::string tag = to_string(s);
        check("add" + tag, [](V t) { return project(ops::add(t[0], t[1])); }, {rnd(s), rnd(s)});
        check("sub" + tag, [](V t) { return project(ops::sub(t[0], t[1])); }, {rnd(s), rnd(s)});
        check("mul" + tag, [](V t) { return project(ops::mul(t[0], t[1])); }, {rnd(s), rnd(s)});
        check("scale" + tag, [](V t) { return project(ops::scale(t[0], -1.7)); }, {rnd(s)});
        check("sigmoid" + tag, [](V t) { return project(ops::sigmoid(t[0])); }, {rnd(s)});
        check("gelu" + tag, [](V t) { return project(ops::gelu(t[0])); }, {rnd(s)});
        check("relu" + tag, [](V t) { return project(ops::relu(t[0])); }, {away_from_zero(s)});
        check("softmax" + tag, [](V t) { return project(ops::softmax(t[0], t[0].ndim() - 1)); }, {rnd(s)});
        check("sum" + tag, [](V t) { return ops::sum(ops::mul(t[0], t[0])); }, {rnd(s)});
        check("mse" + tag, [](V t) { return ops::mse(t[0], t[1]); }, {rnd(s), rnd(s)});
        check("mae" + tag, [](V t) { return ops::mae(t[0], t[1]); }, {away_from_zero(s), Tensor::zeros(s)});
        check("roll" + tag, [](V t) { return project(ops::roll(t[0], 2, 0)); }, {rnd(s)});
    }
    check("add_broadcast", [](V t) { return project(ops::add(t[0], t[1])); }, {rnd({2, 3, 4}), rnd({3, 4})});
    check("mul_broadcast", [](V t) { return project(ops::mul(t[0], t[1])); }, {rnd({2, 3, 4}), rnd({4})});
    check("softmax_axis0", [](V t) { return project(ops::softmax(t[0], 0)); }, {rnd({3, 4})});
    check("matmul(3x4,4x2)", [](V t) { return project(ops::matmul(t[0], t[1])); }, {rnd({3, 4}), rnd({4, 2})});
    check("matmul(batched)", [](V t) { return project(ops::matmul(t[0], t[1])); }, {rnd({2, 3, 4}), rnd({2, 4, 5})});
    check("matmul(broadcast)", [](V t) { return project(ops::matmul(t[0], t[1])); }, {rnd({2, 2, 3, 4}), rnd({2, 4, 3})});
    check("conv1d(1ch)", [](V t) { return project(ops::conv1d(t[0], t[1])); }, {rnd({1, 7}), rnd({2, 1, 3})});
    check("conv1d(2ch)", [](V t) { return project(ops::conv1d(t[0], t[1])); }, {rnd({2, 2, 6}), rnd({3, 2, 5})});
    check("conv1d(k1)", [](V t) { return project(ops::conv1d(t[0], t[1])); }, {rnd({1, 3, 4}), rnd({2, 3, 1})});
    check("depthwise_conv1d", [](V t) { return project(ops::depthwise_conv1d(t[0], t[1], t[2])); },
          {rnd({2, 3, 5}), rnd({3, 3}), rnd({3})});
    check("depthwise_conv1d(k5)", [](V t) { return project(ops::depthwise_conv1d(t[0], t[1])); },
          {rnd({4, 6}), rnd({4, 5})});
    check("depthwise_conv1d(batched)", [](V t) { return project(ops::depthwise_conv1d(t[0], t[1])); },
          {rnd({2, 2, 2, 4}), rnd({2, 3})});
    check("layer_norm(last)", [](V t) { return project(ops::layer_norm(t[0], t[1], t[2], 1)); },
          {rnd({3, 5}), rnd({5}), rnd({5})});
    check("layer_norm(mid)", [](V t) { return project(ops::layer_norm(t[0], t[1], t[2], 1)); },
          {rnd({2, 4, 3}), rnd({4}), rnd({4})});
    check("layer_norm(3d)", [](V t) { return project(ops::layer_norm(t[0], t[1], t[2], 2)); },
          {rnd({2, 2, 6}), rnd({6}), rnd({6})});
    check("reshape", [](V t) { return project(ops::reshape(t[0], {4, 3})); }, {rnd({3, 4})});
    check("permute", [](V t) { return project(ops::permute(t[0], {2, 0, 1})); }, {rnd({2, 3, 4})});
    check("transpose", [](V t) { return project(ops::transpose(t[0], 0, 1)); }, {rnd({3, 5})});
    check("slice", [](V t) { return project(ops::slice(t[0], 1, 1, 2)); }, {rnd({3, 4})});
    check("concat", [](V t) { return project(ops::concat({t[0], t[1]}, 1)); }, {rnd({2, 3}), rnd({2, 2})});
    check("repeat_interleave", [](V t) { return project(ops::repeat_interleave(t[0], 1, 2)); }, {rnd({2, 3, 2})});
    check("linear", [](V t) { return project(ops::linear(t[0], t[1], t[2])); }, {rnd({2, 3, 4}), rnd({4, 5}), rnd({5})});

    for (Variant v : {Variant::mhsa, Variant::twins, Variant::twins_plus}) {
        TwinSModel model(micro_config(v));
        Rng xr(9);
        auto x = normal({2, 2, 8}, 0.0, 1.0, xr);
        auto y = normal({2, 2, 4}, 0.0, 1.0, xr);
        auto params = model.parameters();
        auto r = gradcheck([&] { return ops::mse(model.forward(x), y); }, params);
        out.push_back({"model(" + to_string(v) + ")", r.max_rel_error, tol, r.max_rel_error < tol});
    }
    return out;
}

inline std::vector<CheckResult> structural_checks() {
    std::vector<CheckResult> out;
    Rng rng(77);
    auto exact = [&](const std::string& name, double err) { out.push_back({name, err, 0.0, err == 0.0}); };
    auto max_diff = [](const Tensor& a, const Tensor& b) {
        double m = a.shape() == b.shape() ? 0.0 : INFINITY;
        for (std::size_t i = 0; m != INFINITY && i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
        return m;
    };

    NoGradGuard guard;
    PointFeatureMap pm{normal({2, 3, 4, 24}, 0.0, 1.0, rng)};
    double err = 0.0;
    for (std::size_t s : {1, 2, 3, 4, 6, 8, 12, 24}) err = std::max(err, max_diff(window_fold(window_unfold(pm, s, s)).data, pm.data));
    exact("fold(unfold(x))", err);

    auto pt = window_unfold(pm, 4, 4);
    err = 0.0;
    for (long r : {-7L, -1L, 0L, 1L, 3L, 6L, 13L}) err = std::max(err, max_diff(window_roll(window_roll(pt, r), -r).data, pt.data));
    exact("roll(-r)(roll(r)(x))", err);

    auto raw = normal({3, 2, 16}, 5.0, 3.0, rng);
    auto [xn, st] = instance_normalize(raw);
    auto back = denormalize(xn, st);
    const double nd = max_diff(back, raw);
    out.push_back({"denormalize(normalize(x))", nd, 1e-9, nd < 1e-9});

    ModelConfig cfg = micro_config(Variant::twins);
    TwinSModel m(cfg);
    std::stringstream buf;
    save_checkpoint(m, buf);
    auto m2 = load_checkpoint(buf);
    auto x = normal({2, 2, 8}, 0.0, 1.0, rng);
    exact("checkpoint save/load forward", max_diff(m.forward(x), m2.forward(x)));
    return out;
}

/// Scans sub-network scores for range violations and attention rows for
/// normalization.
inline std::vector<CheckResult> attention_checks() {
    std::vector<CheckResult> out;
    Rng rng(31);
    NoGradGuard guard;
    double min_score = 1.0, max_score = 0.0, row_err = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        PatchedFeatureMap x;
        x.data = normal({2, 3, 6, 8}, 0.0, trial + 1.0, rng);
        auto net = make_score_subnet(8, 2, 3, 6, rng);
        auto w = make_attention_weights(8, 4, true, rng);
        auto sc = paa_scores(x, net);
        for (double v : sc.data.values()) {
            min_score = std::min(min_score, v);
            max_score = std::max(max_score, v);
        }
        auto aligned = align_heads(sc, 4);
        AttentionTrace t1, t2, t3;
        mhsa(x, w, &t1);
        twins_plus_attention(x, w, aligned, &t2);
        twins_attention(x, w.wv, w.wo, aligned, &t3);
        for (auto* t : {&t1, &t2, &t3}) {
            const std::size_t P = t->probs.dim(4);
            for (std::size_t r = 0; r < t->probs.size() / P; ++r) {
                double s = 0.0;
                for (std::size_t j = 0; j < P; ++j) s += t->probs[r * P + j];
                row_err = std::max(row_err, std::abs(s - 1.0));
            }
        }
    }
    const bool in_range = min_score > 0.0 && max_score < 1.0;
    out.push_back({"score range (0,1)", in_range ? 0.0 : 1.0, 0.0, in_range});
    out.push_back({"attention row sums", row_err, 1e-9, row_err < 1e-9});
    return out;
}

inline std::vector<CheckResult> flop_checks() {
    std::vector<CheckResult> out;
    const auto a = flop_analytic(96, 8, 128, 3);
    const bool formula = a.analytic_mhsa == 823296 && a.analytic_paa == 434688;
    out.push_back({"flop formulas (96,8,128,3)", formula ? 0.0 : 1.0, 0.0, formula});
    const auto m = flop_measured(Variant::twins, 96, 8, 128, 3, 4, 4);
    const double em = std::abs(m.ratio_mhsa() - 1.0), ep = std::abs(m.ratio_paa() - 1.0);
    out.push_back({"measured/analytic mhsa", em, 0.05, em < 0.05});
    out.push_back({"measured/analytic paa", ep, 0.05, ep < 0.05});
    const bool cheaper = m.measured_paa < m.measured_mhsa;
    out.push_back({"measured paa < mhsa", cheaper ? 0.0 : 1.0, 0.0, cheaper});
    return out;
}

inline std::vector<CheckResult> run_selfcheck() {
    std::vector<CheckResult> all;
    for (auto&& group : {gradient_checks(), structural_checks(), attention_checks(), flop_checks()})
        all.insert(all.end(), group.begin(), group.end());
    return all;
}

}  // namespace twins
