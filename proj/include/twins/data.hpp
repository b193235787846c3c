#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "twins/tensor.hpp"

namespace twins {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// C named series over N time steps, values [C, N].
struct RawSeries {
    std::vector<std::string> names;
    Tensor values;

    std::size_t channels() const { return values.dim(0); }
    std::size_t length() const { return values.dim(1); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    for (auto& c : cells) {
        const auto b = c.find_first_not_of(" \t\"");
        const auto e = c.find_last_not_of(" \t\"");
        c = b == std::string::npos ? "" : c.substr(b, e - b + 1);
    }
    return cells;
}

inline bool parse_number(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    if (*first == '+') ++first;
    auto [p, ec] = std::from_chars(first, s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

/// Reads a header + numeric rows file. A first column whose first data cell
/// is not a number is treated as a timestamp column and dropped. Data rows
/// are counted from 1 after the header.
inline RawSeries load_csv(std::istream& is, const std::string& source = "<stream>") {
    std::string line;
    if (!std::getline(is, line)) throw DataError(source + ": empty file");
    auto header = detail::split_csv_line(line);
    std::vector<std::vector<double>> cols;
    bool has_date = false;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++row;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError(source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
        if (row == 1) {
            double tmp;
            has_date = !detail::parse_number(cells[0], tmp);
            const std::size_t ncols = header.size() - (has_date ? 1 : 0);
            if (ncols == 0) throw DataError(source + ": no numeric columns");
            cols.assign(ncols, {});
        }
        for (std::size_t c = has_date ? 1 : 0; c < cells.size(); ++c) {
            double v;
            if (!detail::parse_number(cells[c], v))
                throw DataError(source + ": row " + std::to_string(row) + ", column " + std::to_string(c + 1) + " ('" +
                                header[c] + "'): " + (cells[c].empty() ? "missing value" : "cannot parse '" + cells[c] + "'"));
            cols[c - (has_date ? 1 : 0)].push_back(v);
        }
    }
    if (row == 0) throw DataError(source + ": no data rows");
    RawSeries out;
    out.names.assign(header.begin() + (has_date ? 1 : 0), header.end());
    std::vector<double> flat;
    flat.reserve(cols.size() * row);
    for (auto& c : cols) flat.insert(flat.end(), c.begin(), c.end());
    out.values = Tensor({cols.size(), row}, std::move(flat));
    return out;
}

inline RawSeries load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open data file '" + path + "'");
    return load_csv(is, path);
}

inline void write_csv(const RawSeries& s, std::ostream& os) {
    for (std::size_t c = 0; c < s.channels(); ++c) os << (c ? "," : "") << s.names[c];
    os << '\n';
    os.precision(17);
    for (std::size_t t = 0; t < s.length(); ++t) {
        for (std::size_t c = 0; c < s.channels(); ++c) os << (c ? "," : "") << s.values[c * s.length() + t];
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitRatios {
    double train = 0.6, val = 0.2, test = 0.2;
};

/// Chronological train/val/test ranges of one series, all standardized by
/// the train split's per-channel mean and std.
struct SplitDataset {
    std::vector<std::string> names;
    Tensor standardized;  // [C, N_total]
    std::vector<double> mean, stddev;
    std::size_t train_begin = 0, train_end = 0, val_begin = 0, val_end = 0, test_begin = 0, test_end = 0;

    std::size_t channels() const { return standardized.dim(0); }

    /// [C, end - begin] copy of one range.
    Tensor range(std::size_t begin, std::size_t end) const {
        const std::size_t C = channels(), N = standardized.dim(1), n = end - begin;
        auto out = Tensor::zeros({C, n});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < n; ++t) out[c * n + t] = standardized[c * N + begin + t];
        return out;
    }
    Tensor train() const { return range(train_begin, train_end); }
    Tensor val() const { return range(val_begin, val_end); }
    Tensor test() const { return range(test_begin, test_end); }

    double standardize(std::size_t c, double v) const { return (v - mean[c]) / stddev[c]; }
    double destandardize(std::size_t c, double v) const { return v * stddev[c] + mean[c]; }
};

inline SplitDataset split_standardize(const RawSeries& raw, SplitRatios r = {}) {
    if (r.train < 0 || r.val < 0 || r.test < 0 || r.train + r.val + r.test > 1.0 + 1e-12)
        throw DataError("split ratios must be non-negative and sum to at most 1");
    const std::size_t C = raw.channels(), N = raw.length();
    auto count = [N](double f) { return static_cast<std::size_t>(std::floor(static_cast<double>(N) * f + 1e-9)); };
    SplitDataset ds;
    ds.names = raw.names;
    ds.train_begin = 0;
    ds.train_end = count(r.train);
    ds.val_begin = ds.train_end;
    ds.val_end = ds.val_begin + count(r.val);
    ds.test_begin = ds.val_end;
    ds.test_end = std::min(N, ds.test_begin + count(r.test));
    if (ds.train_end == ds.train_begin) throw DataError("train split is empty");
    if (ds.val_end == ds.val_begin) throw DataError("validation split is empty");
    if (ds.test_end == ds.test_begin) throw DataError("test split is empty");

    ds.mean.resize(C);
    ds.stddev.resize(C);
    const std::size_t n = ds.train_end;
    for (std::size_t c = 0; c < C; ++c) {
        double mu = 0.0;
        for (std::size_t t = 0; t < n; ++t) mu += raw.values[c * N + t];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t t = 0; t < n; ++t) var += std::pow(raw.values[c * N + t] - mu, 2);
        const double sd = std::sqrt(var / static_cast<double>(n));
        ds.mean[c] = mu;
        ds.stddev[c] = sd > 1e-8 ? sd : 1.0;  // constant channel maps to zeros
    }
    ds.standardized = Tensor::zeros({C, N});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < N; ++t) ds.standardized[c * N + t] = ds.standardize(c, raw.values[c * N + t]);
    return ds;
}

// ---------------------------------------------------------------------------
// Sliding windows
// ---------------------------------------------------------------------------

struct WindowBatch {
    Tensor inputs;   // [B, C, L]
    Tensor targets;  // [B, C, T]
    std::vector<std::size_t> starts;
};

/// All lookback/horizon windows of one [C, n] range at the given stride.
class WindowSet {
public:
    WindowSet(Tensor series, std::size_t lookback, std::size_t horizon, std::size_t stride = 1)
        : series_(std::move(series)), L_(lookback), T_(horizon) {
        const std::size_t n = series_.dim(1);
        if (stride == 0) throw DataError("window stride must be positive");
        if (n < L_ + T_)
            throw DataError("split of length " + std::to_string(n) + " too short for lookback " + std::to_string(L_) +
                            " + horizon " + std::to_string(T_));
        for (std::size_t s = 0; s + L_ + T_ <= n; s += stride) starts_.push_back(s);
    }

    static std::size_t expected_count(std::size_t len, std::size_t L, std::size_t T, std::size_t stride) {
        return len < L + T ? 0 : (len - L - T) / stride + 1;
    }

    std::size_t size() const { return starts_.size(); }
    std::size_t channels() const { return series_.dim(0); }
    std::size_t lookback() const { return L_; }
    std::size_t horizon() const { return T_; }
    const std::vector<std::size_t>& starts() const { return starts_; }

    /// Gathers the windows with the given positions (indices into starts()).
    WindowBatch batch(const std::vector<std::size_t>& which) const {
        const std::size_t B = which.size(), C = channels(), n = series_.dim(1);
        WindowBatch wb;
        wb.inputs = Tensor::zeros({B, C, L_});
        wb.targets = Tensor::zeros({B, C, T_});
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t s = starts_.at(which[b]);
            wb.starts.push_back(s);
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t t = 0; t < L_; ++t) wb.inputs[(b * C + c) * L_ + t] = series_[c * n + s + t];
                for (std::size_t t = 0; t < T_; ++t) wb.targets[(b * C + c) * T_ + t] = series_[c * n + s + L_ + t];
            }
        }
        return wb;
    }

    WindowBatch batch_range(std::size_t begin, std::size_t end) const {
        std::vector<std::size_t> idx(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        return batch(idx);
    }

private:
    Tensor series_;
    std::size_t L_, T_;
    std::vector<std::size_t> starts_;
};

inline WindowSet make_windows(const Tensor& split, std::size_t L, std::size_t T, std::size_t stride = 1) {
    return WindowSet(split, L, T, stride);
}

// ---------------------------------------------------------------------------
// Synthetic non-stationary periodic series
// ---------------------------------------------------------------------------

struct PeriodComponent {
    double period = 16;
    double amplitude = 1.0;
    std::size_t active_begin = 0;
    std::size_t active_end = static_cast<std::size_t>(-1);  // exclusive
};

struct SynthSpec {
    std::size_t length = 2000;
    std::size_t channels = 1;
    std::vector<PeriodComponent> components;
    std::size_t lag_per_channel = 0;
    double noise_std = 0.0;
    std::uint64_t seed = 1;
};

/// channel c at step t: sum of amplitude * sin(2 pi u / period) over
/// components active at u = t - c * lag, plus Gaussian noise.
inline RawSeries synth_multiperiod(const SynthSpec& spec) {
    if (spec.components.empty()) throw DataError("synthetic spec needs at least one component");
    if (spec.length == 0 || spec.channels == 0) throw DataError("synthetic length and channels must be positive");
    for (const auto& comp : spec.components)
        if (!(comp.period >= 2.0)) throw DataError("synthetic periods must be >= 2");
    RawSeries out;
    out.values = Tensor::zeros({spec.channels, spec.length});
    Rng rng(spec.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t c = 0; c < spec.channels; ++c) {
        out.names.push_back("ch" + std::to_string(c));
        const long shift = static_cast<long>(c * spec.lag_per_channel);
        for (std::size_t t = 0; t < spec.length; ++t) {
            const long u = static_cast<long>(t) - shift;
            double v = 0.0;
            for (const auto& comp : spec.components) {
                if (u < static_cast<long>(comp.active_begin) || (comp.active_end != static_cast<std::size_t>(-1) &&
                                                                 u >= static_cast<long>(comp.active_end)))
                    continue;
                v += comp.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(u) / comp.period);
            }
            if (spec.noise_std > 0.0) v += spec.noise_std * noise(rng);
            out.values[c * spec.length + t] = v;
        }
    }
    return out;
}

/// Parses `len=2000,channels=2,period=8,period=32*0.5@100-400,lag=5,noise=0.1,seed=3`.
/// A period entry is `P[*amplitude][@begin-end]`.
inline SynthSpec parse_synth_spec(const std::string& text) {
    SynthSpec spec;
    std::istringstream is(text);
    std::string item;
    auto num = [](const std::string& key, const std::string& v) {
        double x;
        if (!detail::parse_number(v, x)) throw DataError("synthetic spec: bad value for " + key + ": '" + v + "'");
        return x;
    };
    while (std::getline(is, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw DataError("synthetic spec: expected key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
        if (key == "len" || key == "length") spec.length = static_cast<std::size_t>(num(key, val));
        else if (key == "channels") spec.channels = static_cast<std::size_t>(num(key, val));
        else if (key == "lag") spec.lag_per_channel = static_cast<std::size_t>(num(key, val));
        else if (key == "noise") spec.noise_std = num(key, val);
        else if (key == "seed") spec.seed = static_cast<std::uint64_t>(num(key, val));
        else if (key == "period") {
            PeriodComponent comp;
            std::string rest = val;
            const auto at = rest.find('@');
            if (at != std::string::npos) {
                const std::string range = rest.substr(at + 1);
                rest = rest.substr(0, at);
                const auto dash = range.find('-');
                if (dash == std::string::npos) throw DataError("synthetic spec: active range must be begin-end");
                comp.active_begin = static_cast<std::size_t>(num(key, range.substr(0, dash)));
                comp.active_end = static_cast<std::size_t>(num(key, range.substr(dash + 1)));
            }
            const auto star = rest.find('*');
            if (star != std::string::npos) {
                comp.amplitude = num(key, rest.substr(star + 1));
                rest = rest.substr(0, star);
            }
            comp.period = num(key, rest);
            if (!(comp.period >= 2.0)) throw DataError("synthetic periods must be >= 2, got '" + rest + "'");
            spec.components.push_back(comp);
        } else {
            throw DataError("synthetic spec: unknown key '" + key + "'");
        }
    }
    if (spec.components.empty()) throw DataError("synthetic spec needs at least one period=... component");
    return spec;
}

}  // namespace twins
