#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(TWINS_CLI) + " " + args + " 2>&1";
    Result r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> v;
    std::stringstream ss(s);
    for (std::string l; std::getline(ss, l);) v.push_back(l);
    return v;
}

fs::path scratch(const std::string& name) {
    auto d = fs::temp_directory_path() / ("twins_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

const std::string kSynth = "--synthetic len=400,channels=2,period=8,noise=0.1,seed=2";
const std::string kSmall =
    "--lookback 24 --horizon 8 --patch-len 4 --d-model 2 --layers 1 --heads 2 --aware-heads 2 "
    "--ctmlp-hidden 8 --ffn-hidden 8 --num-scales 2 --epochs 2 --batch 32";

std::string value_after(const std::string& text, const std::string& key) {
    auto pos = text.find("\"" + key + "\":");
    if (pos == std::string::npos) return "";
    pos += key.size() + 3;
    auto end = text.find_first_of(",}", pos);
    return text.substr(pos, end - pos);
}

}  // namespace

TEST(Cli, MissingDataFileNamesPath) {
    auto r = run("train --data /nonexistent/etth1.csv --out " + scratch("missing").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("/nonexistent/etth1.csv"), std::string::npos) << r.out;
}

TEST(Cli, UnknownConfigKeyRejected) {
    auto r = run("train " + kSynth + " --set colour=red --out " + scratch("badkey").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("colour"), std::string::npos) << r.out;
}

TEST(Cli, TrainEvalForecastRoundTrip) {
    const auto dir = scratch("run");
    auto tr = run("train " + kSynth + " " + kSmall + " --out " + dir.string());
    ASSERT_EQ(tr.code, 0) << tr.out;
    for (const char* f : {"config.txt", "history.jsonl", "model.ckpt", "metrics.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;

    const auto metrics = slurp(dir / "metrics.json");
    auto ev = run("eval --run " + dir.string());
    ASSERT_EQ(ev.code, 0) << ev.out;
    EXPECT_EQ(value_after(ev.out, "test_mse"), value_after(metrics, "test_mse")) << ev.out << metrics;
    EXPECT_EQ(value_after(ev.out, "test_mae"), value_after(metrics, "test_mae"));
    EXPECT_FALSE(value_after(ev.out, "test_mse").empty());

    const auto fc_path = dir / "forecast.csv";
    auto fc = run("forecast --run " + dir.string() + " --out " + fc_path.string());
    ASSERT_EQ(fc.code, 0) << fc.out;
    auto rows = lines(slurp(fc_path));
    ASSERT_EQ(rows.size(), 9u);
    for (const auto& row : rows) EXPECT_EQ(std::count(row.begin(), row.end(), ','), 1) << row;

    auto bad = run("eval --run " + dir.string() + " --horizon 16");
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.out.find("horizon"), std::string::npos) << bad.out;

    auto attn = run("analyze attn --run " + dir.string() + " --layer 0 --head 1 --channel 1 --window 0");
    ASSERT_EQ(attn.code, 0) << attn.out;
    EXPECT_EQ(lines(attn.out).size(), 6u);
}

TEST(Cli, TrainingIsDeterministic) {
    const auto a = scratch("det_a"), b = scratch("det_b");
    ASSERT_EQ(run("train " + kSynth + " " + kSmall + " --out " + a.string()).code, 0);
    ASSERT_EQ(run("train " + kSynth + " " + kSmall + " --out " + b.string()).code, 0);
    EXPECT_EQ(slurp(a / "model.ckpt"), slurp(b / "model.ckpt"));
}

TEST(Cli, SelfcheckPasses) {
    auto r = run("selfcheck");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, SelfcheckCatchesInjectedFault) {
    auto r = run("selfcheck --inject-fault gelu");
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.out.find("FAIL"), std::string::npos);
    EXPECT_NE(r.out.find("gelu"), std::string::npos) << r.out;
}

TEST(Cli, FlopReport) {
    auto r = run("analyze flops --T 96 --P 8 --D 128 --k 3");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("823296"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("434688"), std::string::npos) << r.out;
}

TEST(Cli, ScalogramCsv) {
    const auto dir = scratch("scalogram");
    auto r = run("analyze scalogram --synthetic len=128,period=16 --column 0 --out " + (dir / "s.csv").string());
    ASSERT_EQ(r.code, 0) << r.out;
    auto rows = lines(slurp(dir / "s.csv"));
    ASSERT_GT(rows.size(), 12u);
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(std::count(rows[i].begin(), rows[i].end(), ','), 128);
}

TEST(Cli, ScalogramColumnOutOfRange) {
    auto r = run("analyze scalogram --synthetic len=128,period=16 --column 3");
    EXPECT_EQ(r.code, 1);
}

TEST(Cli, StandardHorizonsAccepted) {
    for (int T : {96, 192, 336, 720}) {
        const auto dir = scratch("h" + std::to_string(T));
        auto r = run("train --synthetic len=" + std::to_string(5 * (96 + T)) +
                     ",channels=1,period=24 --lookback 96 --horizon " + std::to_string(T) +
                     " --patch-len 8 --d-model 2 --layers 1 --heads 2 --aware-heads 2 --num-scales 2"
                     " --ctmlp-hidden 8 --ffn-hidden 8 --epochs 1 --batch 64 --out " +
                     dir.string());
        EXPECT_EQ(r.code, 0) << T << r.out;
    }
}
