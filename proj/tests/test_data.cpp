#include <gtest/gtest.h>

#include <sstream>

#include "twins/data.hpp"

using namespace twins;

namespace {

RawSeries from_text(const std::string& s) {
    std::istringstream is(s);
    return load_csv(is, "inline.csv");
}

std::string error_of(const std::string& csv) {
    try {
        from_text(csv);
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(LoadCsv, SmallFileShape) {
    auto r = from_text("a,b\n1,2\n3,4\n5,6\n");
    EXPECT_EQ(r.channels(), 2u);
    EXPECT_EQ(r.length(), 3u);
    EXPECT_EQ(r.names, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(r.values[0 * 3 + 2], 5.0);
    EXPECT_EQ(r.values[1 * 3 + 0], 2.0);
}

TEST(LoadCsv, DateColumnDetectedAndDropped) {
    auto r = from_text("date,HUFL,OT\n2016-07-01 00:00:00,5.8,30.5\n2016-07-01 01:00:00,5.6,27.8\n");
    EXPECT_EQ(r.names, (std::vector<std::string>{"HUFL", "OT"}));
    EXPECT_EQ(r.length(), 2u);
    EXPECT_DOUBLE_EQ(r.values[1 * 2 + 1], 27.8);
}

TEST(LoadCsv, NonNumericCellNamesRow) {
    const auto msg = error_of("a,b\n1,2\n3,4\n5,6\n7,8\n9,x\n10,11\n");
    EXPECT_NE(msg.find("row 5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'b'"), std::string::npos) << msg;
}

TEST(LoadCsv, MissingValueRejected) {
    const auto msg = error_of("a,b\n1,2\n3,\n");
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
}

TEST(LoadCsv, RaggedRowRejected) {
    const auto msg = error_of("a,b\n1,2\n3,4,5\n");
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
}

TEST(LoadCsv, MissingFileNamesPath) {
    try {
        load_csv("/nonexistent/series.csv");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/series.csv"), std::string::npos);
    }
}

TEST(LoadCsv, WriteThenReadRoundTrip) {
    auto r = synth_multiperiod(parse_synth_spec("len=20,channels=3,period=5,noise=0.3,seed=2"));
    std::stringstream buf;
    write_csv(r, buf);
    auto back = load_csv(buf);
    EXPECT_EQ(back.names, r.names);
    for (std::size_t i = 0; i < r.values.size(); ++i) EXPECT_EQ(back.values[i], r.values[i]);
}

TEST(Split, SizesForTen) {
    RawSeries r;
    r.names = {"x"};
    r.values = Tensor({1, 10}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto ds = split_standardize(r);
    EXPECT_EQ(ds.train_end - ds.train_begin, 6u);
    EXPECT_EQ(ds.val_end - ds.val_begin, 2u);
    EXPECT_EQ(ds.test_end - ds.test_begin, 2u);
    EXPECT_EQ(ds.val_begin, ds.train_end);
    EXPECT_EQ(ds.test_begin, ds.val_end);
}

TEST(Split, TrainStatsAreStandard) {
    auto r = synth_multiperiod(parse_synth_spec("len=500,channels=3,period=17,noise=2,seed=4"));
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < 500; ++t) r.values[c * 500 + t] = r.values[c * 500 + t] * (c + 2.0) + 10.0 * c;
    auto ds = split_standardize(r);
    auto tr = ds.train();
    const std::size_t n = tr.dim(1);
    for (std::size_t c = 0; c < 3; ++c) {
        double mu = 0, var = 0;
        for (std::size_t t = 0; t < n; ++t) mu += tr[c * n + t];
        mu /= n;
        for (std::size_t t = 0; t < n; ++t) var += (tr[c * n + t] - mu) * (tr[c * n + t] - mu);
        EXPECT_LT(std::abs(mu), 1e-9);
        EXPECT_LT(std::abs(std::sqrt(var / n) - 1.0), 1e-9);
    }
}

TEST(Split, ConstantChannelBecomesZeros) {
    RawSeries r;
    r.names = {"k", "x"};
    r.values = Tensor({2, 10}, {3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto ds = split_standardize(r);
    for (std::size_t t = 0; t < 10; ++t) EXPECT_EQ(ds.standardized[t], 0.0);
}

TEST(Split, DestandardizeInverts) {
    auto r = synth_multiperiod(parse_synth_spec("len=100,channels=2,period=9,noise=1,seed=5"));
    auto ds = split_standardize(r);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < ds.train_end; ++t)
            EXPECT_NEAR(ds.destandardize(c, ds.standardized[c * 100 + t]), r.values[c * 100 + t], 1e-9);
}

TEST(Split, EmptySplitRejected) {
    RawSeries r;
    r.names = {"x"};
    r.values = Tensor({1, 3}, {1, 2, 3});
    EXPECT_THROW(split_standardize(r), DataError);
    RawSeries big = r;
    big.values = Tensor::zeros({1, 100});
    EXPECT_THROW(split_standardize(big, {0.5, 0.3, 0.3}), DataError);
}

TEST(Windows, CountFormula) {
    auto s = Tensor::zeros({1, 10});
    EXPECT_EQ(make_windows(s, 4, 2).size(), 5u);
    EXPECT_EQ(make_windows(s, 4, 2, 10).size(), 1u);
    EXPECT_EQ(make_windows(s, 4, 2, 3).size(), 2u);
    EXPECT_THROW(make_windows(s, 8, 3), DataError);
}

TEST(Windows, EtthShapedTestSplitCount) {
    // 17420 steps split 0.6 / 0.2 / 0.2 leaves a 3484-step test range
    RawSeries r;
    r.values = Tensor::zeros({7, 17420});
    for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] = static_cast<double>(i % 97);
    r.names.assign(7, "v");
    auto ds = split_standardize(r);
    EXPECT_EQ(ds.test_end - ds.test_begin, 3484u);
    auto ws = make_windows(ds.test(), 96, 96);
    EXPECT_EQ(ws.size(), (3484u - 96 - 96) / 1 + 1);
    EXPECT_EQ(ws.size(), 3293u);
}

TEST(Windows, TargetsFollowInputsAndTile) {
    Tensor s({2, 12}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 100, 101, 102, 103, 104, 105, 106, 107, 108, 109, 110, 111});
    auto ws = make_windows(s, 4, 3);
    auto all = ws.batch_range(0, ws.size());
    for (std::size_t b = 0; b < ws.size(); ++b)
        for (std::size_t c = 0; c < 2; ++c) {
            EXPECT_EQ(all.targets[(b * 2 + c) * 3], all.inputs[(b * 2 + c) * 4 + 3] + 1);
            if (b + 1 < ws.size())
                for (std::size_t t = 0; t + 1 < 4; ++t)
                    EXPECT_EQ(all.inputs[((b + 1) * 2 + c) * 4 + t], all.inputs[(b * 2 + c) * 4 + t + 1]);
        }
}

TEST(Windows, NeverCrossSplitBoundary) {
    auto r = synth_multiperiod(parse_synth_spec("len=300,period=7,seed=1"));
    auto ds = split_standardize(r);
    for (auto [b, e] : {std::pair{ds.train_begin, ds.train_end}, std::pair{ds.val_begin, ds.val_end},
                        std::pair{ds.test_begin, ds.test_end}}) {
        auto ws = make_windows(ds.range(b, e), 10, 5);
        for (std::size_t s : ws.starts()) EXPECT_LE(b + s + 15, e);
    }
}

TEST(Synth, ActiveRangeIsSilentOutside) {
    SynthSpec spec;
    spec.length = 500;
    spec.components = {{6.0, 1.0, 180, 330}};
    auto r = synth_multiperiod(spec);
    for (std::size_t t = 0; t < 500; ++t)
        if (t < 180 || t >= 330) EXPECT_EQ(r.values[t], 0.0) << t;
    double e = 0;
    for (std::size_t t = 180; t < 330; ++t) e += r.values[t] * r.values[t];
    EXPECT_GT(e, 10.0);
}

TEST(Synth, LagShiftsChannels) {
    auto r = synth_multiperiod(parse_synth_spec("len=200,channels=2,period=13,period=40*0.5,lag=5"));
    for (std::size_t t = 5; t < 200; ++t) EXPECT_EQ(r.values[200 + t], r.values[t - 5]);
}

TEST(Synth, DeterministicPerSeed) {
    auto a = synth_multiperiod(parse_synth_spec("len=100,channels=2,period=8,noise=0.5,seed=9"));
    auto b = synth_multiperiod(parse_synth_spec("len=100,channels=2,period=8,noise=0.5,seed=9"));
    auto c = synth_multiperiod(parse_synth_spec("len=100,channels=2,period=8,noise=0.5,seed=10"));
    bool differs = false;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        EXPECT_EQ(a.values[i], b.values[i]);
        differs |= a.values[i] != c.values[i];
    }
    EXPECT_TRUE(differs);
}

TEST(Synth, SpecParsing) {
    auto s = parse_synth_spec("len=300,channels=3,period=8,period=32*0.5@100-200,lag=4,noise=0.1,seed=7");
    EXPECT_EQ(s.length, 300u);
    EXPECT_EQ(s.channels, 3u);
    ASSERT_EQ(s.components.size(), 2u);
    EXPECT_EQ(s.components[1].period, 32.0);
    EXPECT_EQ(s.components[1].amplitude, 0.5);
    EXPECT_EQ(s.components[1].active_begin, 100u);
    EXPECT_EQ(s.components[1].active_end, 200u);
    EXPECT_EQ(s.lag_per_channel, 4u);
    EXPECT_THROW(parse_synth_spec("len=100"), DataError);
    EXPECT_THROW(parse_synth_spec("period=8,colour=red"), DataError);
    EXPECT_THROW(parse_synth_spec("period=1"), DataError);
}
