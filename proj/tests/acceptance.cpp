// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.
//   acceptance            run every criterion
//   acceptance 3 5        run only the listed criteria
// ETTh1 is read from $TWINS_ETTH1, else data/ETTh1.csv under the source tree.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include "twins/twins.hpp"

using namespace twins;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kRoundTripTol = 1e-9;
constexpr double kRowSumTol = 1e-9;
constexpr double kUnitScoreTol = 1e-12;
constexpr double kFlopRatioTol = 0.05;
constexpr double kFlopSeconds = 60.0;
constexpr double kWaveletSeconds = 60.0;
constexpr double kWindowEnergyRatio = 5.0;
constexpr double kBaselineFraction = 0.5;
constexpr std::size_t kSanityEpochs = 30;
constexpr double kSanitySeconds = 300.0;
constexpr double kEtthMse = 0.45;
constexpr double kEtthMae = 0.46;
constexpr double kEtthBudget = 1800.0;
constexpr double kAblationSlack = 0.01;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Outcome gradients() {
    const auto t0 = Clock::now();
    const auto rs = gradient_checks(kGradTol);
    const double secs = since(t0);
    double worst = 0.0;
    std::string worst_name, failed;
    bool micro[3] = {false, false, false};
    for (const auto& r : rs) {
        if (r.value >= worst) {
            worst = r.value;
            worst_name = r.name;
        }
        if (!r.passed) failed += " " + r.name;
        if (r.name == "model(mhsa)") micro[0] = r.passed;
        if (r.name == "model(twins)") micro[1] = r.passed;
        if (r.name == "model(twins_plus)") micro[2] = r.passed;
    }
    const bool ok = failed.empty() && micro[0] && micro[1] && micro[2] && secs < kGradSeconds;
    return {ok, std::to_string(rs.size()) + " checks, max rel err " + fmt(worst) + " (" + worst_name + ") < " +
                    fmt(kGradTol) + ", " + fmt(secs) + " s" + (failed.empty() ? "" : ", failed:" + failed)};
}

Outcome round_trips() {
    const auto rs = structural_checks();
    std::string detail;
    bool ok = rs.size() == 4;
    for (const auto& r : rs) {
        const double tol = r.tolerance > 0 ? std::min(r.tolerance, kRoundTripTol) : 0.0;
        const bool pass = tol > 0 ? r.value < tol : r.value == 0.0;
        ok = ok && pass;
        detail += (detail.empty() ? "" : "; ") + r.name + " err " + fmt(r.value);
    }
    return {ok, detail};
}

Outcome attention_contracts() {
    const auto rs = attention_checks();
    bool ok = true;
    std::string detail;
    for (const auto& r : rs) {
        const bool pass = r.name == "attention row sums" ? r.value < kRowSumTol : r.passed;
        ok = ok && pass;
        detail += r.name + " err " + fmt(r.value) + "; ";
    }

    // twins_plus with every score equal to one is plain multi-head attention
    Rng rng(404);
    NoGradGuard guard;
    PatchedFeatureMap x;
    x.data = normal({2, 3, 6, 8}, 0.0, 1.0, rng);
    auto w = make_attention_weights(8, 4, true, rng);
    auto ones = Tensor::full({2, 3, 4, 6, 6}, 1.0);
    const double unit = max_abs_diff(twins_plus_attention(x, w, ones).data, mhsa(x, w).data);
    ok = ok && unit < kUnitScoreTol;
    detail += "unit scores vs mhsa " + fmt(unit) + "; ";

    // channel permutation commutes with the model iff the mixer is off
    auto perm_gap = [&](bool ctmlp) {
        ModelConfig cfg;
        cfg.channels = 4;
        cfg.lookback = 32;
        cfg.horizon = 8;
        cfg.d_model = 2;
        cfg.num_scales = 2;
        cfg.patch_len = 4;
        cfg.heads = 2;
        cfg.aware_heads = 2;
        cfg.ctmlp_hidden = 6;
        cfg.ffn_hidden = 8;
        cfg.use_ctmlp = ctmlp;
        TwinSModel m(cfg);
        Rng r(9);
        auto in = normal({2, 4, 32}, 0.0, 1.0, r);
        const std::size_t perm[4] = {2, 0, 3, 1};
        auto pin = Tensor::zeros(in.shape());
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 4; ++c)
                for (std::size_t t = 0; t < 32; ++t) pin[(b * 4 + c) * 32 + t] = in[(b * 4 + perm[c]) * 32 + t];
        auto y = m.forward(in), py = m.forward(pin);
        double gap = 0.0;
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 4; ++c)
                for (std::size_t t = 0; t < 8; ++t)
                    gap = std::max(gap, std::abs(py[(b * 4 + c) * 8 + t] - y[(b * 4 + perm[c]) * 8 + t]));
        return gap;
    };
    const double off = perm_gap(false), on = perm_gap(true);
    ok = ok && off == 0.0 && on > 1e-6;
    detail += "permutation gap without mixer " + fmt(off) + ", with mixer " + fmt(on);
    return {ok, detail};
}

Outcome complexity() {
    const auto t0 = Clock::now();
    const auto a = flop_analytic(96, 8, 128, 3);
    bool ok = a.analytic_mhsa == 823296 && a.analytic_paa == 434688;
    std::string detail = "analytic " + std::to_string(a.analytic_mhsa) + " / " + std::to_string(a.analytic_paa);

    double worst_ratio = 0.0;
    std::size_t points = 0, cheaper = 0;
    for (std::uint64_t D : {4, 8, 16, 32, 64}) {
        for (std::uint64_t k : {std::uint64_t{1}, std::uint64_t{3}, 2 * D - 3, 2 * D - 1}) {
            // the PAA ledger counts the keyless variant
            const auto r = flop_measured(Variant::twins, 96, 8, D, k, 4, 4);
            worst_ratio = std::max({worst_ratio, std::abs(r.ratio_mhsa() - 1.0), std::abs(r.ratio_paa() - 1.0)});
            ++points;
            if (r.measured_paa < r.measured_mhsa) ++cheaper;
        }
        // even kernels are not admissible, so the crossover is bracketed by
        // measured runs at 2D-1 and 2D+1 and the equality point is analytic
        const auto above = flop_measured(Variant::twins, 96, 8, D, 2 * D + 1, 4, 4);
        const auto eq = flop_analytic(96, 8, D, 2 * D);
        ok = ok && above.measured_paa > above.measured_mhsa && eq.analytic_paa == eq.analytic_mhsa;
    }
    const double secs = since(t0);
    ok = ok && worst_ratio <= kFlopRatioTol && cheaper == points && points == 20 && secs < kFlopSeconds;
    detail += "; measured/analytic max deviation " + fmt(worst_ratio) + "; paa < mhsa on " + std::to_string(cheaper) +
              "/" + std::to_string(points) + " grid points with k < 2D; k = 2D equal, k = 2D+1 above; " + fmt(secs) +
              " s";
    return {ok, detail};
}

Outcome wavelet() {
    const auto t0 = Clock::now();
    const std::size_t N = 512;
    std::vector<double> x(N);
    for (std::size_t t = 0; t < N; ++t) x[t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 16.0);
    const auto sg = morlet_cwt(x, default_scales(N));
    const std::size_t best = dominant_scale(sg, 64, N - 64);
    const double a_pred = 16.0 / morlet_fourier_wavelength(1.0, sg.omega0);
    const double bins = std::abs(std::log2(sg.scales[best] / a_pred)) * 12.0;
    bool ok = bins <= 1.0;
    std::string detail = "argmax scale " + fmt(sg.scales[best]) + " vs " + fmt(a_pred) + " (" + fmt(bins) + " bins)";

    SynthSpec spec;
    spec.length = N;
    spec.components = {{64.0, 1.0, 0, 0}, {12.0, 1.0, 181, 330}};
    const auto raw = synth_multiperiod(spec);
    std::vector<double> y(raw.values.values().begin(), raw.values.values().begin() + N);
    const auto sg2 = morlet_cwt(y, default_scales(N));
    std::size_t row = 0;
    const double a12 = 12.0 / morlet_fourier_wavelength(1.0, sg2.omega0);
    for (std::size_t i = 0; i < sg2.scales.size(); ++i)
        if (std::abs(std::log(sg2.scales[i] / a12)) < std::abs(std::log(sg2.scales[row] / a12))) row = i;
    double in = 0.0, out = 0.0;
    std::size_t nin = 0, nout = 0;
    for (std::size_t t = 0; t < N; ++t) {
        if (t > 180 && t < 330) in += sg2.at(row, t), ++nin;
        else out += sg2.at(row, t), ++nout;
    }
    const double ratio = (in / nin) / (out / nout);
    const double secs = since(t0);
    ok = ok && ratio > kWindowEnergyRatio && secs < kWaveletSeconds;
    detail += "; inside/outside energy " + fmt(ratio) + " > " + fmt(kWindowEnergyRatio) + "; " + fmt(secs) + " s";
    return {ok, detail};
}

Outcome learning() {
    const auto t0 = Clock::now();
    const auto raw = synth_multiperiod(parse_synth_spec("len=1600,channels=2,period=8,period=32,lag=5,noise=0.1,seed=3"));
    const auto data = split_standardize(raw);
    ModelConfig cfg;
    cfg.channels = 2;
    cfg.lookback = 96;
    cfg.horizon = 48;
    cfg.layers = 2;
    cfg.d_model = 8;
    cfg.patch_len = 8;
    cfg.ffn_hidden = 128;
    cfg.ctmlp_hidden = 64;
    cfg.epochs = kSanityEpochs;
    cfg.lr = 1e-3;
    cfg.seed = 11;
    TwinSModel model(cfg);
    TrainOptions opt;
    opt.time_budget_seconds = kSanitySeconds - 30.0;
    const auto hist = train(model, data, opt);
    const auto m = evaluate(model, data.test(), cfg.lookback, cfg.horizon);
    const auto base = mean_baseline(data.test(), cfg.lookback, cfg.horizon);
    const double secs = since(t0);
    const bool ok = m.mse < kBaselineFraction * base.mse && hist.epochs.size() <= kSanityEpochs && secs < kSanitySeconds;
    return {ok, "test mse " + fmt(m.mse) + " vs baseline " + fmt(base.mse) + " (ratio " + fmt(m.mse / base.mse) +
                    " < " + fmt(kBaselineFraction) + "), " + std::to_string(hist.epochs.size()) + " epochs, " +
                    fmt(secs) + " s"};
}

std::string etth1_path() {
    if (const char* env = std::getenv("TWINS_ETTH1"); env && *env) return env;
    return std::string(TWINS_SOURCE_DIR) + "/data/ETTh1.csv";
}

ModelConfig etth1_config(std::size_t channels) {
    ModelConfig cfg;
    cfg.channels = channels;
    cfg.lookback = 96;
    cfg.horizon = 96;
    cfg.patch_len = 8;
    cfg.d_model = 16;
    cfg.heads = 4;
    cfg.aware_heads = 4;
    cfg.subnet_kernel = 3;
    cfg.lr = 1e-4;
    return cfg;
}

SplitDataset etth1_split(const RawSeries& raw) { return split_standardize(raw, {0.6, 0.2, 0.2}); }

Outcome etth1_quantitative() {
    const auto path = etth1_path();
    if (!std::filesystem::exists(path)) return {false, "dataset not found at " + path + " (set TWINS_ETTH1)"};
    const auto t0 = Clock::now();
    const auto raw = load_csv(path);
    const auto data = etth1_split(raw);
    const auto cfg = etth1_config(raw.channels());
    TwinSModel model(cfg);
    TrainOptions opt;
    opt.time_budget_seconds = kEtthBudget - 120.0;
    train(model, data, opt);
    const auto m = evaluate(model, data.test(), cfg.lookback, cfg.horizon);
    const double secs = since(t0);
    const bool ok = m.mse <= kEtthMse && m.mae <= kEtthMae && secs <= kEtthBudget;
    return {ok, "test mse " + fmt(m.mse) + " (<= " + fmt(kEtthMse) + "), mae " + fmt(m.mae) + " (<= " + fmt(kEtthMae) +
                    "), " + fmt(secs) + " s"};
}

Outcome etth1_ablation() {
    const auto path = etth1_path();
    if (!std::filesystem::exists(path)) return {false, "dataset not found at " + path + " (set TWINS_ETTH1)"};
    const auto raw = load_csv(path);
    const auto data = etth1_split(raw);
    TrainOptions opt;
    opt.time_budget_seconds = kEtthBudget - 120.0;
    const auto rows = ablation_run(etth1_config(raw.channels()), data, path, opt);
    std::ostringstream csv;
    write_ablation_csv(rows, csv);
    std::cout << csv.str();
    double full = NAN, wowc = NAN;
    std::set<std::string> names;
    for (const auto& r : rows) {
        names.insert(r.variant);
        if (r.variant == "full") full = r.test.mse;
        if (r.variant == "wo_wc_rwp") wowc = r.test.mse;
    }
    const bool all = names == std::set<std::string>{"full", "wo_wc_rwp", "wo_ctmlp", "wo_paa"};
    const bool ok = all && full <= wowc + kAblationSlack;
    return {ok, "full " + fmt(full) + " vs wo_wc_rwp " + fmt(wowc) + " (slack " + fmt(kAblationSlack) + "), " +
                    std::to_string(rows.size()) + " variants"};
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        Outcome (*run)();
    };
    const Criterion all[] = {
        {1, "gradient correctness", gradients},
        {2, "structural round-trips", round_trips},
        {3, "attention contracts", attention_contracts},
        {4, "complexity ledger", complexity},
        {5, "wavelet analysis", wavelet},
        {6, "learning sanity", learning},
        {7, "ETTh1 quantitative", etth1_quantitative},
        {8, "ETTh1 ablation direction", etth1_ablation},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.id)) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << o.detail
                  << std::endl;
    }
    return failed ? 1 : 0;
}
