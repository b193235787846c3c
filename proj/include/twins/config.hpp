#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace twins {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class Variant { mhsa, twins, twins_plus };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::mhsa: return "mhsa";
        case Variant::twins: return "twins";
        case Variant::twins_plus: return "twins_plus";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "mhsa") return Variant::mhsa;
    if (s == "twins") return Variant::twins;
    if (s == "twins_plus" || s == "twins+") return Variant::twins_plus;
    throw ConfigError("unknown attention variant '" + s + "' (expected mhsa, twins, twins_plus)");
}

/// Every hyperparameter of one model plus its training budget.
///
/// Per-layer window scales default to `patch_len`; per-layer rolls default to
/// P/2 on odd-indexed layers and 0 on even ones. Layer l works at patch
/// dimension D = d_model * scale(l) with P = lookback / scale(l) patches.
struct ModelConfig {
    std::size_t channels = 7;
    std::size_t lookback = 96;
    std::size_t horizon = 96;

    std::size_t d_model = 16;
    std::size_t num_scales = 4;
    std::size_t layers = 2;
    std::size_t patch_len = 8;
    std::vector<std::size_t> scales;  // empty: patch_len on every layer
    std::vector<long> rolls;          // empty: automatic schedule

    std::size_t heads = 4;
    std::size_t aware_heads = 4;
    std::size_t subnet_kernel = 3;
    std::size_t ctmlp_hidden = 128;
    std::size_t ffn_hidden = 256;

    Variant variant = Variant::twins;
    bool use_wconv = true;
    bool use_ctmlp = true;
    bool use_paa = true;
    double dropout = 0.0;

    double lr = 1e-4;
    std::size_t epochs = 100;
    std::size_t batch = 32;
    std::size_t patience = 10;
    std::uint64_t seed = 2024;
    double clip_norm = 5.0;

    Variant attention() const { return use_paa ? variant : Variant::mhsa; }
    bool uses_scores() const { return attention() != Variant::mhsa; }
    bool uses_keys() const { return attention() != Variant::twins; }

    std::size_t scale(std::size_t l) const { return scales.empty() ? patch_len : scales.at(l); }
    std::size_t patches(std::size_t l) const { return lookback / scale(l); }
    std::size_t patch_dim(std::size_t l) const { return d_model * scale(l); }
    long roll(std::size_t l) const {
        if (!use_wconv) return 0;
        if (!rolls.empty()) return rolls.at(l);
        return l % 2 == 1 ? static_cast<long>(patches(l) / 2) : 0;
    }
    std::size_t max_patches() const {
        std::size_t m = 0;
        for (std::size_t l = 0; l < layers; ++l) m = std::max(m, patches(l));
        return m;
    }

    void validate() const {
        auto req = [](bool ok, const std::string& msg) {
            if (!ok) throw ConfigError(msg);
        };
        req(channels >= 1 && lookback >= 1 && horizon >= 1, "channels, lookback and horizon must be positive");
        req(d_model >= 1, "d_model must be positive");
        req(num_scales >= 1, "num_scales must be at least 1");
        req(num_scales <= 16, "num_scales above 16 is not supported");
        req(layers >= 1, "layers must be at least 1");
        req(scales.empty() || scales.size() == layers, "scales list must have one entry per layer");
        req(rolls.empty() || rolls.size() == layers, "rolls list must have one entry per layer");
        req(heads >= 1 && aware_heads >= 1, "heads must be positive");
        req(heads % aware_heads == 0, "heads (" + std::to_string(heads) + ") must be a multiple of aware_heads (" +
                                          std::to_string(aware_heads) + ")");
        req(subnet_kernel % 2 == 1, "subnet_kernel must be odd");
        req(ctmlp_hidden >= 1 && ffn_hidden >= 1, "hidden widths must be positive");
        req(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
        req(batch >= 1, "batch must be positive");
        for (std::size_t l = 0; l < layers; ++l) {
            const std::size_t s = scale(l);
            const std::string tag = "layer " + std::to_string(l) + ": ";
            req(s >= 1, tag + "scale must be positive");
            req(lookback % s == 0, tag + "lookback " + std::to_string(lookback) + " not divisible by scale " +
                                       std::to_string(s));
            const std::size_t D = patch_dim(l);
            req(D % heads == 0, tag + "patch dim " + std::to_string(D) + " not divisible by heads " +
                                    std::to_string(heads));
            req(D % aware_heads == 0, tag + "patch dim " + std::to_string(D) + " not divisible by aware_heads " +
                                          std::to_string(aware_heads));
            if (!use_wconv) req(s == patch_len, tag + "linear-patch embedding needs scale == patch_len on every layer");
        }
    }

    /// Key/value text block, one `key = value` per line.
    std::string to_text() const {
        std::ostringstream os;
        os.precision(17);
        for (const auto& [k, v] : entries()) os << k << " = " << v << '\n';
        return os.str();
    }

    std::vector<std::pair<std::string, std::string>> entries() const {
        auto join = [](const auto& xs) {
            std::string s;
            for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
            return s;
        };
        auto num = [](double x) {
            std::ostringstream os;
            os.precision(17);
            os << x;
            return os.str();
        };
        auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
        return {
            {"channels", std::to_string(channels)},
            {"lookback", std::to_string(lookback)},
            {"horizon", std::to_string(horizon)},
            {"d_model", std::to_string(d_model)},
            {"num_scales", std::to_string(num_scales)},
            {"layers", std::to_string(layers)},
            {"patch_len", std::to_string(patch_len)},
            {"scales", join(scales)},
            {"rolls", join(rolls)},
            {"heads", std::to_string(heads)},
            {"aware_heads", std::to_string(aware_heads)},
            {"subnet_kernel", std::to_string(subnet_kernel)},
            {"ctmlp_hidden", std::to_string(ctmlp_hidden)},
            {"ffn_hidden", std::to_string(ffn_hidden)},
            {"variant", to_string(variant)},
            {"use_wconv", flag(use_wconv)},
            {"use_ctmlp", flag(use_ctmlp)},
            {"use_paa", flag(use_paa)},
            {"dropout", num(dropout)},
            {"lr", num(lr)},
            {"epochs", std::to_string(epochs)},
            {"batch", std::to_string(batch)},
            {"patience", std::to_string(patience)},
            {"seed", std::to_string(seed)},
            {"clip_norm", num(clip_norm)},
        };
    }

    /// Sets one field from its text form. Unknown keys are rejected.
    void set(const std::string& key, const std::string& value) {
        auto as_size = [&](std::size_t& out) { out = parse_uint(key, value); };
        auto as_double = [&](double& out) { out = parse_double(key, value); };
        auto as_bool = [&](bool& out) {
            if (value == "true" || value == "1") out = true;
            else if (value == "false" || value == "0") out = false;
            else throw ConfigError(key + ": expected true/false, got '" + value + "'");
        };
        if (key == "channels") as_size(channels);
        else if (key == "lookback") as_size(lookback);
        else if (key == "horizon") as_size(horizon);
        else if (key == "d_model") as_size(d_model);
        else if (key == "num_scales") as_size(num_scales);
        else if (key == "layers") as_size(layers);
        else if (key == "patch_len") as_size(patch_len);
        else if (key == "scales") {
            scales.clear();
            for (auto& s : split_list(value)) scales.push_back(parse_uint(key, s));
        } else if (key == "rolls") {
            rolls.clear();
            for (auto& s : split_list(value)) rolls.push_back(static_cast<long>(parse_double(key, s)));
        } else if (key == "heads") as_size(heads);
        else if (key == "aware_heads") as_size(aware_heads);
        else if (key == "subnet_kernel") as_size(subnet_kernel);
        else if (key == "ctmlp_hidden") as_size(ctmlp_hidden);
        else if (key == "ffn_hidden") as_size(ffn_hidden);
        else if (key == "variant") variant = parse_variant(value);
        else if (key == "use_wconv") as_bool(use_wconv);
        else if (key == "use_ctmlp") as_bool(use_ctmlp);
        else if (key == "use_paa") as_bool(use_paa);
        else if (key == "dropout") as_double(dropout);
        else if (key == "lr") as_double(lr);
        else if (key == "epochs") as_size(epochs);
        else if (key == "batch") as_size(batch);
        else if (key == "patience") as_size(patience);
        else if (key == "seed") seed = parse_uint(key, value);
        else if (key == "clip_norm") as_double(clip_norm);
        else throw ConfigError("unknown config key '" + key + "'");
    }

    static ModelConfig from_text(const std::string& text) {
        ModelConfig c;
        for (const auto& [k, v] : parse_kv(text)) c.set(k, v);
        return c;
    }

    /// Name of the first field whose value differs, if any.
    std::optional<std::string> first_mismatch(const ModelConfig& other) const {
        const auto a = entries(), b = other.entries();
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i].second != b[i].second) return a[i].first;
        return std::nullopt;
    }

    static std::vector<std::pair<std::string, std::string>> parse_kv(const std::string& text) {
        std::vector<std::pair<std::string, std::string>> out;
        std::istringstream is(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
            out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return out;
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    static std::vector<std::string> split_list(const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        std::istringstream is(s);
        while (std::getline(is, cur, ','))
            if (!trim(cur).empty()) out.push_back(trim(cur));
        return out;
    }

    static std::size_t parse_uint(const std::string& key, const std::string& v) {
        std::uint64_t x = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc{} || p != v.data() + v.size())
            throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
        return static_cast<std::size_t>(x);
    }

    static double parse_double(const std::string& key, const std::string& v) {
        double x = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc{} || p != v.data() + v.size())
            throw ConfigError(key + ": expected a number, got '" + v + "'");
        return x;
    }
};

}  // namespace twins
