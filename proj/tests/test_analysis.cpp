#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "twins/analysis.hpp"

using namespace twins;

namespace {

std::vector<double> sine(std::size_t n, double period, std::size_t shift = 0) {
    std::vector<double> x(n);
    for (std::size_t t = 0; t < n; ++t)
        x[t] = std::sin(2.0 * std::numbers::pi * (static_cast<double>(t) - static_cast<double>(shift)) / period);
    return x;
}

ModelConfig tiny(std::size_t channels = 2) {
    ModelConfig c;
    c.channels = channels;
    c.lookback = 48;
    c.horizon = 8;
    c.d_model = 2;
    c.num_scales = 2;
    c.layers = 2;
    c.patch_len = 4;
    c.heads = 2;
    c.aware_heads = 2;
    c.ctmlp_hidden = 8;
    c.ffn_hidden = 8;
    c.epochs = 1;
    c.batch = 32;
    return c;
}

}  // namespace

TEST(Morlet, ZeroSeriesZeroEnergy) {
    std::vector<double> x(64, 0.0);
    for (double e : morlet_cwt(x, default_scales(64)).energy) EXPECT_EQ(e, 0.0);
}

TEST(Morlet, EnergyIsNonNegative) {
    Rng rng(1);
    auto t = normal({128}, 0, 1, rng);
    for (double e : morlet_cwt(t.values(), default_scales(128)).energy) EXPECT_GE(e, 0.0);
}

TEST(Morlet, FourierFactor) {
    EXPECT_NEAR(morlet_fourier_wavelength(1.0), 1.033, 1e-3);
}

TEST(Morlet, SinusoidArgmaxWithinOneBin) {
    const auto sg = morlet_cwt(sine(256, 16.0), default_scales(256));
    const std::size_t best = dominant_scale(sg, 64, 192);
    const double a_star = sg.scales[best];
    EXPECT_NEAR(a_star, 15.5, 15.5 * (std::pow(2.0, 1.0 / 12.0) - 1.0));
    const double bins = std::abs(std::log2(morlet_fourier_wavelength(a_star) / 16.0)) * 12.0;
    EXPECT_LE(bins, 1.0);
}

TEST(Morlet, TimeShiftEquivariantInInterior) {
    Rng rng(2);
    const std::size_t N = 200, s = 10;
    auto base = normal({N}, 0, 1, rng);
    std::vector<double> x(base.values().begin(), base.values().end()), y(N);
    for (std::size_t t = 0; t < N; ++t) y[t] = t >= s ? x[t - s] : 7.0;
    const auto scales = geometric_scales(2.0, 8.0, 12);
    const auto sx = morlet_cwt(x, scales), sy = morlet_cwt(y, scales);
    const std::size_t margin = 32;
    double worst = 0;
    for (std::size_t i = 0; i < scales.size(); ++i)
        for (std::size_t t = s + margin; t + margin < N; ++t) worst = std::max(worst, std::abs(sy.at(i, t) - sx.at(i, t - s)));
    EXPECT_LT(worst, 1e-6);
}

TEST(Morlet, SegmentLimitedComponentLocalised) {
    SynthSpec spec;
    spec.length = 512;
    spec.components = {{64.0, 1.0, 0, static_cast<std::size_t>(-1)}, {12.0, 1.0, 181, 330}};
    auto raw = synth_multiperiod(spec);
    std::vector<double> x(raw.values.values().begin(), raw.values.values().end());
    auto sg = morlet_cwt(x, default_scales(512));
    std::size_t row = 0;
    for (std::size_t i = 0; i < sg.scales.size(); ++i)
        if (std::abs(morlet_fourier_wavelength(sg.scales[i]) - 12.0) <
            std::abs(morlet_fourier_wavelength(sg.scales[row]) - 12.0))
            row = i;
    double in = 0, out = 0;
    for (std::size_t t = 200; t < 310; ++t) in += sg.at(row, t) / 110.0;
    for (std::size_t t = 64; t < 150; ++t) out += sg.at(row, t) / 172.0;
    for (std::size_t t = 362; t < 448; ++t) out += sg.at(row, t) / 172.0;
    EXPECT_GT(in, 5.0 * out);
}

TEST(Morlet, BadScalesRejected) {
    std::vector<double> x(32, 1.0);
    EXPECT_THROW(morlet_cwt(x, {2.0, 1.0}), ShapeError);
    EXPECT_THROW(morlet_cwt(x, {0.0}), ShapeError);
}

TEST(Morlet, CsvHasScaleRows) {
    const auto sg = morlet_cwt(sine(40, 8.0), geometric_scales(2, 4, 2));
    std::stringstream os;
    write_scalogram_csv(sg, os);
    std::string line;
    std::size_t rows = 0;
    std::getline(os, line);
    EXPECT_EQ(line.substr(0, 8), "scale,0,");
    while (std::getline(os, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 40);
    }
    EXPECT_EQ(rows, sg.scales.size());
}

TEST(ExportAttention, ZeroScoresGiveUniformRows) {
    auto cfg = tiny();
    cfg.lookback = 48;
    TwinSModel m(cfg);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        auto& net = m.layer(l).subnet;
        for (auto* t : {&net.dw_kernels, &net.dw_bias, &net.wp})
            for (auto& v : t->values()) v = 0.0;
    }
    Rng rng(3);
    auto mat = export_attention(m, normal({1, 2, 48}, 0, 1, rng), 1, 1, 0);
    ASSERT_EQ(mat.size(), 12u);
    for (const auto& row : mat) {
        ASSERT_EQ(row.size(), 12u);
        for (double v : row) EXPECT_NEAR(v, 1.0 / 12.0, 1e-15);
    }
}

TEST(ExportAttention, FileRowsAreStochastic) {
    TwinSModel m(tiny());
    Rng rng(4);
    const auto path = (std::filesystem::temp_directory_path() / "twins_attn_test.csv").string();
    export_attention(m, normal({1, 2, 48}, 0, 1, rng), 0, 0, 1, path);
    std::ifstream is(path);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string cell;
        double sum = 0;
        std::size_t cols = 0;
        while (std::getline(ss, cell, ',')) {
            sum += std::stod(cell);
            ++cols;
        }
        EXPECT_EQ(cols, 12u);
        EXPECT_NEAR(sum, 1.0, 1e-6);
        ++rows;
    }
    EXPECT_EQ(rows, 12u);
    std::filesystem::remove(path);
}

TEST(ExportAttention, OutOfRangeRejected) {
    TwinSModel m(tiny());
    auto x = Tensor::zeros({1, 2, 48});
    EXPECT_THROW(export_attention(m, x, 2, 0, 0), ShapeError);
    EXPECT_THROW(export_attention(m, x, 0, 2, 0), ShapeError);
    EXPECT_THROW(export_attention(m, x, 0, 0, 2), ShapeError);
}

TEST(Flops, AnalyticDefaultGrid) {
    const auto r = flop_analytic(96, 8, 128, 3);
    EXPECT_EQ(r.analytic_mhsa, 4u * 12 * 16384 + 2u * 144 * 128);
    EXPECT_EQ(r.analytic_mhsa, 823296u);
    EXPECT_EQ(r.analytic_paa, 2u * 12 * 16384 + 15u * 12 * 128 + 144u * 128);
    EXPECT_EQ(r.analytic_paa, 434688u);
}

TEST(Flops, EqualityAtTwiceTheWidth) {
    for (std::uint64_t D : {4, 16, 64, 128, 256}) {
        const auto r = flop_analytic(96, 8, D, 2 * D);
        EXPECT_EQ(r.analytic_paa, r.analytic_mhsa);
        EXPECT_FALSE(r.k_below_2d);
    }
}

TEST(Flops, CrossoverFlagMatchesCondition) {
    for (std::uint64_t D : {2, 8, 32})
        for (std::uint64_t k = 1; k < 5 * D; k += 3) {
            const auto r = flop_analytic(96, 8, D, k);
            EXPECT_EQ(r.k_below_2d, k < 2 * D);
            EXPECT_EQ(r.analytic_paa < r.analytic_mhsa, k < 2 * D);
        }
}

TEST(Flops, MeasuredMatchesAnalytic) {
    const auto r = flop_measured(Variant::twins, 96, 8, 128, 3, 4, 4);
    EXPECT_LE(std::abs(r.ratio_mhsa() - 1.0), 0.05);
    EXPECT_LE(std::abs(r.ratio_paa() - 1.0), 0.05);
    EXPECT_LT(r.measured_paa, r.measured_mhsa);
}

TEST(Flops, ScoreModulatedVariantKeepsAllProjections) {
    const auto r = flop_measured(Variant::twins_plus, 96, 8, 128, 3, 4, 4);
    EXPECT_EQ(r.paa_terms[0], r.mhsa_terms[0]);
    EXPECT_GT(r.measured_paa, r.measured_mhsa);
}

TEST(Flops, KeylessProjectionIsHalf) {
    const auto r = flop_measured(Variant::twins, 96, 8, 128, 3, 4, 4);
    EXPECT_EQ(2 * r.paa_terms[0], r.mhsa_terms[0]);
}

TEST(Flops, RejectsNonDividingPatch) { EXPECT_THROW(flop_analytic(96, 7, 16, 3), ShapeError); }

TEST(Flops, ReportRecord) {
    std::stringstream os;
    write_flop_report(flop_measured(Variant::twins, 96, 8, 128, 3, 4, 4), os);
    const auto s = os.str();
    EXPECT_NE(s.find("\"analytic_mhsa\":823296"), std::string::npos);
    EXPECT_NE(s.find("\"analytic_paa\":434688"), std::string::npos);
}

TEST(Ablation, FourVariantsWithSharedMetadata) {
    auto data = split_standardize(synth_multiperiod(parse_synth_spec("len=400,channels=2,period=8,noise=0.1")));
    auto rows = ablation_run(tiny(), data, "synthetic");
    ASSERT_EQ(rows.size(), 4u);
    const char* names[4] = {"full", "wo_wc_rwp", "wo_ctmlp", "wo_paa"};
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(rows[i].variant, names[i]);
        EXPECT_TRUE(rows[i].error.empty()) << rows[i].error;
        EXPECT_EQ(rows[i].dataset, "synthetic");
        EXPECT_EQ(rows[i].lookback, 48u);
        EXPECT_EQ(rows[i].horizon, 8u);
        EXPECT_EQ(rows[i].seed, rows[0].seed);
        EXPECT_TRUE(std::isfinite(rows[i].test.mse));
    }
    std::stringstream csv;
    write_ablation_csv(rows, csv);
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "variant,mse,mae,seconds");
}

TEST(Ablation, VariantsToggleOneModule) {
    auto vs = ablation_variants(tiny());
    ASSERT_EQ(vs.size(), 4u);
    EXPECT_FALSE(vs[1].second.use_wconv);
    EXPECT_FALSE(vs[2].second.use_ctmlp);
    EXPECT_FALSE(vs[3].second.use_paa);
    EXPECT_EQ(vs[3].second.attention(), Variant::mhsa);
}

TEST(Ablation, OnlyMixerFreeVariantIsChannelEquivariant) {
    auto vs = ablation_variants(tiny(3));
    Rng rng(5);
    auto x = normal({1, 3, 48}, 0, 1, rng);
    auto px = Tensor::zeros(x.shape());
    const std::size_t perm[3] = {1, 2, 0};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < 48; ++t) px[c * 48 + t] = x[perm[c] * 48 + t];
    for (const auto& [name, cfg] : vs) {
        TwinSModel m(cfg);
        NoGradGuard g;
        auto y = m.forward(x), py = m.forward(px);
        double gap = 0;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 0; t < 8; ++t) gap = std::max(gap, std::abs(py[c * 8 + t] - y[perm[c] * 8 + t]));
        if (name == "wo_ctmlp") EXPECT_EQ(gap, 0.0);
        if (name == "full") EXPECT_GT(gap, 1e-6);
    }
}
