#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "twins/twins.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Data source, split and model settings of one run; serialized as the
/// resolved-config snapshot next to every run's outputs.
struct RunConfig {
    std::string data;
    std::string synthetic;
    twins::SplitRatios split;
    twins::ModelConfig model;

    std::string to_text() const {
        std::ostringstream os;
        os.precision(17);
        os << "data = " << data << '\n'
           << "synthetic = " << synthetic << '\n'
           << "split = " << split.train << ',' << split.val << ',' << split.test << '\n'
           << model.to_text();
        return os.str();
    }

    void set(const std::string& key, const std::string& value) {
        if (key == "data") data = value;
        else if (key == "synthetic") synthetic = value;
        else if (key == "split") split = parse_split(value);
        else model.set(key, value);
    }

    static RunConfig from_text(const std::string& text) {
        RunConfig rc;
        for (const auto& [k, v] : twins::ModelConfig::parse_kv(text)) rc.set(k, v);
        return rc;
    }

    static twins::SplitRatios parse_split(const std::string& s) {
        auto parts = twins::ModelConfig::split_list(s);
        if (parts.size() != 3) throw twins::ConfigError("split: expected three comma-separated ratios");
        return {twins::ModelConfig::parse_double("split", parts[0]), twins::ModelConfig::parse_double("split", parts[1]),
                twins::ModelConfig::parse_double("split", parts[2])};
    }

    twins::RawSeries load_raw() const {
        if (!data.empty() && !synthetic.empty()) throw twins::ConfigError("give either --data or --synthetic, not both");
        if (!data.empty()) return twins::load_csv(data);
        if (!synthetic.empty()) return twins::synth_multiperiod(twins::parse_synth_spec(synthetic));
        throw twins::ConfigError("no dataset: pass --data PATH or --synthetic SPEC");
    }
};

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw twins::DataError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw twins::DataError("cannot write '" + path.string() + "'");
    os << content;
}

fs::path output_root() {
    if (const char* env = std::getenv("TWINS_OUTPUT_ROOT"); env && *env) return env;
    return "runs";
}

/// Flags that map onto model config keys.
struct ModelFlags {
    std::map<std::string, std::string> values;
    std::vector<std::string> sets;
    std::string config_file;
    bool no_wconv = false, no_ctmlp = false, no_paa = false;
    std::size_t patch_dim = 0;

    void attach(CLI::App* app) {
        auto opt = [&](const std::string& flag, const std::string& key, const std::string& help) {
            app->add_option_function<std::string>(flag, [this, key](const std::string& v) { values[key] = v; }, help);
        };
        opt("--lookback", "lookback", "lookback length L");
        opt("--horizon", "horizon", "forecast horizon T");
        opt("--variant", "variant", "attention: mhsa | twins | twins_plus");
        opt("--lr", "lr", "learning rate");
        opt("--patch-len", "patch_len", "window scale (= stride)");
        opt("--d-model", "d_model", "point embedding width d");
        opt("--ctmlp-hidden", "ctmlp_hidden", "CT-MLP hidden width h");
        opt("--ffn-hidden", "ffn_hidden", "feed-forward hidden width");
        opt("--heads", "heads", "attention heads M");
        opt("--aware-heads", "aware_heads", "periodic aware heads S");
        opt("--subnet-kernel", "subnet_kernel", "score sub-network kernel k");
        opt("--layers", "layers", "encoder layers");
        opt("--num-scales", "num_scales", "wavelet kernel scales n");
        opt("--scales", "scales", "per-layer window scales, comma separated");
        opt("--rolls", "rolls", "per-layer patch rolls, comma separated");
        opt("--epochs", "epochs", "maximum epochs");
        opt("--batch", "batch", "mini-batch size");
        opt("--patience", "patience", "early-stopping patience");
        opt("--seed", "seed", "random seed");
        opt("--dropout", "dropout", "dropout rate");
        app->add_option("--patch-dim", patch_dim, "hidden patch dim D (sets d = D / patch length)");
        app->add_flag("--no-wconv", no_wconv, "linear patch embedding instead of wavelet convolution");
        app->add_flag("--no-ctmlp", no_ctmlp, "drop the channel-temporal mixer");
        app->add_flag("--no-paa", no_paa, "plain multi-head self-attention");
        app->add_option("--set", sets, "extra config key=value (repeatable)");
        app->add_option("--config", config_file, "config file of key = value lines");
    }

    bool any() const { return !values.empty() || !sets.empty() || no_wconv || no_ctmlp || no_paa || patch_dim; }

    void apply(RunConfig& rc) const {
        if (!config_file.empty())
            for (const auto& [k, v] : twins::ModelConfig::parse_kv(read_file(config_file))) rc.set(k, v);
        for (const auto& [k, v] : values) rc.model.set(k, v);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw twins::ConfigError("--set expects key=value, got '" + s + "'");
            rc.set(twins::ModelConfig::trim(s.substr(0, eq)), twins::ModelConfig::trim(s.substr(eq + 1)));
        }
        if (no_wconv) rc.model.use_wconv = false;
        if (no_ctmlp) rc.model.use_ctmlp = false;
        if (no_paa) rc.model.use_paa = false;
        if (patch_dim) {
            if (patch_dim % rc.model.patch_len != 0)
                throw twins::ConfigError("patch dim " + std::to_string(patch_dim) + " not divisible by patch length " +
                                         std::to_string(rc.model.patch_len));
            rc.model.d_model = patch_dim / rc.model.patch_len;
        }
    }
};

json epoch_record(const twins::EpochRecord& r) {
    return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_mse", r.val_mse}, {"val_mae", r.val_mae},
            {"seconds", r.seconds}};
}

json test_record(const twins::Metrics& m, double seconds) {
    return {{"test_mse", m.mse}, {"test_mae", m.mae}, {"seconds", seconds}};
}

/// Loads a run directory: snapshot, dataset and checkpoint.
struct LoadedRun {
    RunConfig rc;
    twins::SplitDataset data;
    twins::TwinSModel model;
};

LoadedRun load_run(const fs::path& dir, const ModelFlags& flags) {
    auto rc = RunConfig::from_text(read_file((dir / "config.txt").string()));
    RunConfig expected = rc;
    flags.apply(expected);
    auto data = twins::split_standardize(rc.load_raw(), rc.split);
    auto model = twins::load_checkpoint((dir / "model.ckpt").string(), expected.model);
    return {rc, std::move(data), std::move(model)};
}

int cmd_train(const RunConfig& base, const ModelFlags& flags, const fs::path& out, double budget) {
    RunConfig rc = base;
    flags.apply(rc);
    const auto raw = rc.load_raw();
    rc.model.channels = raw.channels();
    rc.model.validate();
    auto data = twins::split_standardize(raw, rc.split);
    fs::create_directories(out);
    write_file(out / "config.txt", rc.to_text());

    std::ofstream hist(out / "history.jsonl");
    twins::TrainOptions opt;
    opt.time_budget_seconds = budget;
    opt.on_epoch = [&](const twins::EpochRecord& r) {
        const auto line = epoch_record(r).dump();
        hist << line << '\n' << std::flush;
        std::cout << line << '\n' << std::flush;
    };
    twins::TwinSModel model(rc.model);
    const auto t0 = std::chrono::steady_clock::now();
    twins::train(model, data, opt);
    twins::save_checkpoint(model, (out / "model.ckpt").string());
    const auto m = twins::evaluate(model, data.test(), rc.model.lookback, rc.model.horizon);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto line = test_record(m, secs).dump();
    hist << line << '\n';
    write_file(out / "metrics.json", line + "\n");
    std::cout << line << '\n';
    return 0;
}

int cmd_eval(const fs::path& run, const ModelFlags& flags) {
    auto lr = load_run(run, flags);
    const auto t0 = std::chrono::steady_clock::now();
    const auto m = twins::evaluate(lr.model, lr.data.test(), lr.rc.model.lookback, lr.rc.model.horizon);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << test_record(m, secs).dump() << '\n';
    return 0;
}

int cmd_forecast(const fs::path& run, const ModelFlags& flags, const std::string& out_path) {
    auto lr = load_run(run, flags);
    const auto& cfg = lr.rc.model;
    const std::size_t C = cfg.channels, N = lr.data.standardized.dim(1), L = cfg.lookback, T = cfg.horizon;
    if (N < L) throw twins::DataError("series shorter than the lookback");
    auto x = twins::Tensor::zeros({1, C, L});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < L; ++t) x[c * L + t] = lr.data.standardized[c * N + N - L + t];
    twins::NoGradGuard guard;
    auto y = lr.model.forward(x);
    std::ostringstream os;
    os.precision(17);
    for (std::size_t c = 0; c < C; ++c) os << (c ? "," : "") << lr.data.names[c];
    os << '\n';
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t c = 0; c < C; ++c) os << (c ? "," : "") << lr.data.destandardize(c, y[c * T + t]);
        os << '\n';
    }
    if (out_path.empty()) std::cout << os.str();
    else write_file(out_path, os.str());
    return 0;
}

int cmd_selfcheck(const std::string& fault) {
    if (!fault.empty()) twins::active_tape().inject_fault(fault);
    const auto results = twins::run_selfcheck();
    twins::active_tape().clear_fault();
    std::size_t failed = 0;
    for (const auto& r : results) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  max_err=" << r.value << "  tol=" << r.tolerance
                  << '\n';
        if (!r.passed) ++failed;
    }
    std::cout << (results.size() - failed) << "/" << results.size() << " checks passed\n";
    return failed ? 3 : 0;
}

int cmd_scalogram(const RunConfig& rc, std::size_t column, const std::string& out_path) {
    const auto raw = rc.load_raw();
    if (column >= raw.channels())
        throw twins::ConfigError("column " + std::to_string(column) + " out of range (" + std::to_string(raw.channels()) +
                                 " series)");
    const std::size_t N = raw.length();
    std::vector<double> x(raw.values.values().begin() + column * N, raw.values.values().begin() + (column + 1) * N);
    const auto sg = twins::morlet_cwt(x, twins::default_scales(N));
    std::ostringstream os;
    twins::write_scalogram_csv(sg, os);
    if (out_path.empty()) std::cout << os.str();
    else write_file(out_path, os.str());
    return 0;
}

int cmd_attn(const fs::path& run, const ModelFlags& flags, std::size_t layer, std::size_t head, std::size_t channel,
             std::size_t window, const std::string& out_path) {
    auto lr = load_run(run, flags);
    const auto& cfg = lr.rc.model;
    twins::WindowSet ws(lr.data.test(), cfg.lookback, cfg.horizon, 1);
    if (window >= ws.size()) throw twins::ConfigError("window index out of range");
    auto wb = ws.batch({window});
    const auto mat = twins::export_attention(lr.model, wb.inputs, layer, head, channel, out_path);
    if (out_path.empty()) {
        std::cout.precision(17);
        for (const auto& row : mat) {
            for (std::size_t j = 0; j < row.size(); ++j) std::cout << (j ? "," : "") << row[j];
            std::cout << '\n';
        }
    }
    return 0;
}

int cmd_flops(std::uint64_t T, std::uint64_t P, std::uint64_t D, std::uint64_t k, std::size_t M, std::size_t S,
              const std::string& variant) {
    const auto r = twins::flop_measured(twins::parse_variant(variant), T, P, D, k, M, S);
    twins::write_flop_report(r, std::cout);
    return 0;
}

int cmd_ablate(const RunConfig& base, const ModelFlags& flags, const std::string& out_path, double budget) {
    RunConfig rc = base;
    flags.apply(rc);
    const auto raw = rc.load_raw();
    rc.model.channels = raw.channels();
    rc.model.validate();
    auto data = twins::split_standardize(raw, rc.split);
    twins::TrainOptions opt;
    opt.time_budget_seconds = budget;
    const auto rows = twins::ablation_run(rc.model, data, rc.data.empty() ? "synthetic" : rc.data, opt);
    std::ostringstream os;
    twins::write_ablation_csv(rows, os);
    for (const auto& r : rows)
        if (!r.error.empty()) std::cerr << "ablate: variant " << r.variant << " failed: " << r.error << '\n';
    if (out_path.empty()) std::cout << os.str();
    else write_file(out_path, os.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TwinS multivariate time-series forecaster"};
    app.require_subcommand(1);

    RunConfig rc;
    ModelFlags flags;
    std::string out, run_dir, fault, split_text, out_file;
    double budget = 0.0;
    std::size_t column = 0, layer = 0, head = 0, channel = 0, window = 0;
    std::uint64_t fT = 96, fP = 8, fD = 128, fk = 3;
    std::size_t fM = 4, fS = 4;
    std::string fvariant = "twins";

    auto add_data = [&](CLI::App* sub) {
        sub->add_option("--data", rc.data, "CSV file (header row, optional leading date column)");
        sub->add_option("--synthetic", rc.synthetic, "synthetic spec, e.g. len=2000,period=16");
        sub->add_option("--split", split_text, "train,val,test ratios (default 0.6,0.2,0.2)");
    };

    auto* train = app.add_subcommand("train", "train a model and write a run directory");
    add_data(train);
    flags.attach(train);
    train->add_option("--out", out, "run directory (default $TWINS_OUTPUT_ROOT/run or runs/run)");
    train->add_option("--time-budget", budget, "stop training after this many seconds");

    auto* eval = app.add_subcommand("eval", "evaluate a run's checkpoint on its test split");
    eval->add_option("--run", run_dir, "run directory")->required();
    flags.attach(eval);

    auto* forecast = app.add_subcommand("forecast", "forecast the horizon after the last lookback window");
    forecast->add_option("--run", run_dir, "run directory")->required();
    forecast->add_option("--out", out_file, "output CSV (default stdout)");
    flags.attach(forecast);

    auto* selfcheck = app.add_subcommand("selfcheck", "gradient, round-trip, score-range and FLOP checks");
    selfcheck->add_option("--inject-fault", fault, "corrupt the backward pass of one op (test fixture)");

    auto* analyze = app.add_subcommand("analyze", "analysis tools");
    analyze->require_subcommand(1);
    auto* scalogram = analyze->add_subcommand("scalogram", "Morlet scalogram of one series as CSV");
    add_data(scalogram);
    scalogram->add_option("--column", column, "0-based series index");
    scalogram->add_option("--out", out_file, "output CSV (default stdout)");

    auto* attn = analyze->add_subcommand("attn", "export one post-softmax attention matrix as CSV");
    attn->add_option("--run", run_dir, "run directory")->required();
    attn->add_option("--layer", layer);
    attn->add_option("--head", head);
    attn->add_option("--channel", channel);
    attn->add_option("--window", window, "test-split window index");
    attn->add_option("--out", out_file, "output CSV (default stdout)");

    auto* flops = analyze->add_subcommand("flops", "analytic vs measured attention MAC counts");
    flops->add_option("--T", fT, "sequence length");
    flops->add_option("--P", fP, "patch length");
    flops->add_option("--D", fD, "patch dimension");
    flops->add_option("--k", fk, "score sub-network kernel size");
    flops->add_option("--heads", fM, "attention heads");
    flops->add_option("--aware-heads", fS, "aware heads");
    flops->add_option("--variant", fvariant, "twins | twins_plus");

    auto* ablate = analyze->add_subcommand("ablate", "train the four module ablations, CSV table");
    add_data(ablate);
    flags.attach(ablate);
    ablate->add_option("--out", out_file, "output CSV (default stdout)");
    ablate->add_option("--time-budget", budget, "per-variant training time budget in seconds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    std::string prefix;
    try {
        if (!split_text.empty()) rc.split = RunConfig::parse_split(split_text);
        if (train->parsed()) {
            const fs::path dir = out.empty() ? output_root() / "run" : fs::path(out);
            return cmd_train(rc, flags, dir, budget);
        }
        if (eval->parsed()) return cmd_eval(run_dir, flags);
        if (forecast->parsed()) return cmd_forecast(run_dir, flags, out_file);
        if (selfcheck->parsed()) return cmd_selfcheck(fault);
        if (scalogram->parsed()) {
            prefix = "analyze scalogram: ";
            return cmd_scalogram(rc, column, out_file);
        }
        if (attn->parsed()) {
            prefix = "analyze attn: ";
            return cmd_attn(run_dir, flags, layer, head, channel, window, out_file);
        }
        if (flops->parsed()) {
            prefix = "analyze flops: ";
            return cmd_flops(fT, fP, fD, fk, fM, fS, fvariant);
        }
        if (ablate->parsed()) {
            prefix = "analyze ablate: ";
            return cmd_ablate(rc, flags, out_file, budget);
        }
    } catch (const twins::NumericError& e) {
        std::cerr << "error: " << prefix << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << prefix << e.what() << '\n';
        return 1;
    }
    return 1;
}
