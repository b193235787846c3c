#pragma once

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "twins/attention.hpp"
#include "twins/data.hpp"
#include "twins/model.hpp"
#include "twins/training.hpp"

namespace twins {

// ---------------------------------------------------------------------------
// Morlet scalogram
// ---------------------------------------------------------------------------

/// energy is [scales.size() x length], row-major.
struct Scalogram {
    std::vector<double> scales;
    std::vector<double> energy;
    std::size_t length = 0;
    double omega0 = 6.0;

    double at(std::size_t scale_idx, std::size_t t) const { return energy[scale_idx * length + t]; }
};

/// Geometric scale grid with `voices` scales per octave from lo to hi.
inline std::vector<double> geometric_scales(double lo, double hi, std::size_t voices = 12) {
    std::vector<double> s;
    for (std::size_t j = 0;; ++j) {
        const double a = lo * std::pow(2.0, static_cast<double>(j) / static_cast<double>(voices));
        if (a > hi * (1.0 + 1e-12)) break;
        s.push_back(a);
    }
    return s;
}

inline std::vector<double> default_scales(std::size_t length) {
    return geometric_scales(2.0, static_cast<double>(length) / 2.0, 12);
}

/// Fourier wavelength seen at Morlet scale a.
inline double morlet_fourier_wavelength(double a, double omega0 = 6.0) {
    return 4.0 * std::numbers::pi * a / (omega0 + std::sqrt(2.0 + omega0 * omega0));
}

/// |(1/sqrt a) sum_t x(t) psi*((t - tau)/a)|^2 by direct summation, psi the
/// complex Morlet wavelet truncated at |(t - tau)/a| <= 4.
inline Scalogram morlet_cwt(std::span<const double> x, const std::vector<double>& scales, double omega0 = 6.0) {
    if (x.size() < 8) throw ShapeError("scalogram needs at least 8 samples");
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (!(scales[i] > 0)) throw ShapeError("wavelet scales must be positive");
        if (i && scales[i] <= scales[i - 1]) throw ShapeError("wavelet scales must be strictly increasing");
    }
    const long L = static_cast<long>(x.size());
    const double norm = std::pow(std::numbers::pi, -0.25);
    Scalogram sg{scales, std::vector<double>(scales.size() * x.size(), 0.0), x.size(), omega0};
    for (std::size_t si = 0; si < scales.size(); ++si) {
        const double a = scales[si];
        const long half = static_cast<long>(std::floor(4.0 * a));
        // psi*(u) for u = k / a, k in [-half, half]
        std::vector<std::complex<double>> kern(2 * half + 1);
        for (long k = -half; k <= half; ++k) {
            const double u = static_cast<double>(k) / a;
            kern[k + half] = norm * std::exp(-0.5 * u * u) * std::complex<double>(std::cos(omega0 * u), -std::sin(omega0 * u));
        }
        const double inv_sqrt_a = 1.0 / std::sqrt(a);
        for (long tau = 0; tau < L; ++tau) {
            std::complex<double> acc = 0.0;
            const long lo = std::max(0L, tau - half), hi = std::min(L - 1, tau + half);
            for (long t = lo; t <= hi; ++t) acc += x[t] * kern[t - tau + half];
            sg.energy[si * x.size() + tau] = std::norm(acc * inv_sqrt_a);
        }
    }
    return sg;
}

/// Index of the scale with the largest energy summed over [t0, t1).
inline std::size_t dominant_scale(const Scalogram& sg, std::size_t t0 = 0, std::size_t t1 = 0) {
    if (t1 == 0) t1 = sg.length;
    std::size_t best = 0;
    double best_e = -1.0;
    for (std::size_t s = 0; s < sg.scales.size(); ++s) {
        double e = 0.0;
        for (std::size_t t = t0; t < t1; ++t) e += sg.at(s, t);
        if (e > best_e) {
            best_e = e;
            best = s;
        }
    }
    return best;
}

/// One row per scale: scale value followed by the energy over time.
inline void write_scalogram_csv(const Scalogram& sg, std::ostream& os) {
    os << "scale";
    for (std::size_t t = 0; t < sg.length; ++t) os << ',' << t;
    os << '\n';
    os.precision(17);
    for (std::size_t s = 0; s < sg.scales.size(); ++s) {
        os << sg.scales[s];
        for (std::size_t t = 0; t < sg.length; ++t) os << ',' << sg.at(s, t);
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Attention export
// ---------------------------------------------------------------------------

/// Post-softmax P x P matrix of one (layer, head, channel) for a single
/// window [1, C, L]; written as CSV when `path` is non-empty.
inline std::vector<std::vector<double>> export_attention(const TwinSModel& model, const Tensor& window,
                                                         std::size_t layer, std::size_t head, std::size_t channel,
                                                         const std::string& path = {}) {
    const auto& cfg = model.config();
    if (layer >= cfg.layers) throw ShapeError("layer " + std::to_string(layer) + " out of range");
    if (head >= cfg.heads) throw ShapeError("head " + std::to_string(head) + " out of range");
    if (channel >= cfg.channels) throw ShapeError("channel " + std::to_string(channel) + " out of range");
    Tensor x = window;
    if (x.ndim() == 2) x = ops::reshape(x, {1, x.dim(0), x.dim(1)});
    if (x.ndim() != 3 || x.dim(0) != 1) throw ShapeError("export_attention takes one window [1, C, L]");
    ForwardTrace trace;
    {
        NoGradGuard guard;
        model.forward(x, &trace);
    }
    const auto& probs = trace.attention.at(layer).probs;  // [1, C, M, P, P]
    const std::size_t M = probs.dim(2), P = probs.dim(3);
    std::vector<std::vector<double>> mat(P, std::vector<double>(P));
    for (std::size_t i = 0; i < P; ++i)
        for (std::size_t j = 0; j < P; ++j) mat[i][j] = probs[((channel * M + head) * P + i) * P + j];
    if (!path.empty()) {
        std::ofstream os(path);
        if (!os) throw DataError("cannot write attention matrix to '" + path + "'");
        os.precision(17);
        for (const auto& row : mat) {
            for (std::size_t j = 0; j < P; ++j) os << (j ? "," : "") << row[j];
            os << '\n';
        }
    }
    return mat;
}

// ---------------------------------------------------------------------------
// Complexity ledger
// ---------------------------------------------------------------------------

/// Multiply-accumulate counts of one attention block over a length-T input
/// cut into T/P patches of width D.
struct FlopReport {
    std::uint64_t T = 0, P = 0, D = 0, k = 0;
    std::uint64_t analytic_mhsa = 0, analytic_paa = 0;
    std::uint64_t measured_mhsa = 0, measured_paa = 0;
    // measured per-term breakdown: {projection, attention, values}
    std::uint64_t mhsa_terms[3] = {0, 0, 0};
    std::uint64_t paa_terms[3] = {0, 0, 0};
    bool k_below_2d = false;

    double ratio_mhsa() const { return analytic_mhsa ? double(measured_mhsa) / double(analytic_mhsa) : 0.0; }
    double ratio_paa() const { return analytic_paa ? double(measured_paa) / double(analytic_paa) : 0.0; }
};

/// MHSA: 4(T/P)D^2 + 2(T/P)^2 D.  PAA: 2(T/P)D^2 + (k + T/P)(T/P)D + (T/P)^2 D.
inline FlopReport flop_analytic(std::uint64_t T, std::uint64_t P, std::uint64_t D, std::uint64_t k) {
    if (P == 0 || T % P != 0) throw ShapeError("patch length must divide the sequence length");
    const std::uint64_t n = T / P;
    FlopReport r;
    r.T = T;
    r.P = P;
    r.D = D;
    r.k = k;
    r.analytic_mhsa = 4 * n * D * D + n * n * D + n * n * D;
    r.analytic_paa = 2 * n * D * D + (k + n) * n * D + n * n * D;
    r.k_below_2d = k < 2 * D;
    return r;
}

/// Counts MACs of one instrumented forward pass through the MHSA block and
/// through the chosen periodic-aware variant (twins or twins_plus).
inline FlopReport flop_measured(Variant variant, std::uint64_t T, std::uint64_t P, std::uint64_t D, std::uint64_t k,
                                std::size_t M, std::size_t S) {
    FlopReport r = flop_analytic(T, P, D, k);
    const std::size_t n = T / P;
    Rng rng(11);
    PatchedFeatureMap x;
    x.data = normal({1, 1, n, D}, 0.0, 1.0, rng);
    auto w = make_attention_weights(D, M, true, rng);
    auto net = make_score_subnet(D, S, k, n, rng);

    NoGradGuard guard;
    auto& ctr = mac_counter();
    const bool was = ctr.enabled();
    auto run = [&](auto&& fn, std::uint64_t terms[3]) {
        ctr.reset();
        ctr.enable(true);
        fn();
        ctr.enable(false);
        terms[0] = ctr.get("projection");
        terms[1] = ctr.get("attention");
        terms[2] = ctr.get("values");
        return terms[0] + terms[1] + terms[2];
    };
    r.measured_mhsa = run([&] { mhsa(x, w); }, r.mhsa_terms);
    r.measured_paa = run(
        [&] {
            auto aligned = align_heads(paa_scores(x, net), M);
            if (variant == Variant::twins_plus) twins_plus_attention(x, w, aligned);
            else twins_attention(x, w.wv, w.wo, aligned);
        },
        r.paa_terms);
    ctr.reset();
    ctr.enable(was);
    return r;
}

inline void write_flop_report(const FlopReport& r, std::ostream& os) {
    os << "{\"T\":" << r.T << ",\"P\":" << r.P << ",\"D\":" << r.D << ",\"k\":" << r.k
       << ",\"analytic_mhsa\":" << r.analytic_mhsa << ",\"analytic_paa\":" << r.analytic_paa
       << ",\"measured_mhsa\":" << r.measured_mhsa << ",\"measured_paa\":" << r.measured_paa
       << ",\"ratio_mhsa\":" << r.ratio_mhsa() << ",\"ratio_paa\":" << r.ratio_paa()
       << ",\"k_below_2d\":" << (r.k_below_2d ? "true" : "false") << "}\n";
}

// ---------------------------------------------------------------------------
// Module ablation
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string variant;
    Metrics test;
    double seconds = 0.0;
    std::string error;  // non-empty when this row's run failed
    std::string dataset;
    std::size_t lookback = 0, horizon = 0;
    std::uint64_t seed = 0;
};

/// The four module configurations: full, linear-patch embedding without
/// window patching, no channel-temporal mixer, plain MHSA.
inline std::vector<std::pair<std::string, ModelConfig>> ablation_variants(const ModelConfig& base) {
    std::vector<std::pair<std::string, ModelConfig>> v;
    ModelConfig full = base;
    full.use_wconv = full.use_ctmlp = full.use_paa = true;
    v.emplace_back("full", full);
    ModelConfig wc = full;
    wc.use_wconv = false;
    wc.scales.clear();
    v.emplace_back("wo_wc_rwp", wc);
    ModelConfig ct = full;
    ct.use_ctmlp = false;
    v.emplace_back("wo_ctmlp", ct);
    ModelConfig paa = full;
    paa.use_paa = false;
    v.emplace_back("wo_paa", paa);
    return v;
}

inline std::vector<AblationRow> ablation_run(const ModelConfig& base, const SplitDataset& data,
                                             const std::string& dataset_name = "", const TrainOptions& opt = {}) {
    std::vector<AblationRow> rows;
    for (auto& [name, cfg] : ablation_variants(base)) {
        AblationRow row;
        row.variant = name;
        row.dataset = dataset_name;
        row.lookback = cfg.lookback;
        row.horizon = cfg.horizon;
        row.seed = cfg.seed;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            TwinSModel model(cfg);
            train(model, data, opt);
            row.test = evaluate(model, data.test(), cfg.lookback, cfg.horizon, opt.eval_batch);
        } catch (const std::exception& e) {
            row.error = e.what();
            row.test.mse = row.test.mae = std::numeric_limits<double>::quiet_NaN();
        }
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back(row);
    }
    return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& os) {
    os << "variant,mse,mae,seconds\n";
    os.precision(10);
    for (const auto& r : rows) os << r.variant << ',' << r.test.mse << ',' << r.test.mae << ',' << r.seconds << '\n';
}

}  // namespace twins
