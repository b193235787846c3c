#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "twins/model.hpp"

// Checkpoint layout (all integers and floats little-endian):
//
//   bytes 0..7   magic "TWINSCKP"
//   u32          format version (1)
//   u64          config text length N, then N bytes of `key = value` lines
//   u64          parameter count K, then K records of:
//                  u32 name length, name bytes,
//                  u32 rank, rank x u64 extents,
//                  prod(extents) x f64 values

namespace twins {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'T', 'W', 'I', 'N', 'S', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
public:
    explicit Reader(std::istream& is) : is_(is) {}

    template <typename T>
    T get(const char* what) {
        T v{};
        if (!is_.read(reinterpret_cast<char*>(&v), sizeof(T)))
            throw CheckpointError(std::string("checkpoint corrupted: truncated while reading ") + what);
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        if (n > (std::size_t{1} << 32)) throw CheckpointError(std::string("checkpoint corrupted: bad length for ") + what);
        std::string s(n, '\0');
        if (n && !is_.read(s.data(), static_cast<std::streamsize>(n)))
            throw CheckpointError(std::string("checkpoint corrupted: truncated while reading ") + what);
        return s;
    }
    void doubles(std::span<double> out, const std::string& what) {
        if (!is_.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(double))))
            throw CheckpointError("checkpoint corrupted: truncated while reading values of " + what);
    }

private:
    std::istream& is_;
};

}  // namespace detail

inline void save_checkpoint(const TwinSModel& model, std::ostream& os) {
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put<std::uint32_t>(os, kCheckpointVersion);
    const std::string cfg = model.config().to_text();
    detail::put<std::uint64_t>(os, cfg.size());
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const auto params = model.named_parameters();
    detail::put<std::uint64_t>(os, params.size());
    for (const auto& [name, t] : params) {
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
        for (auto e : t.shape()) detail::put<std::uint64_t>(os, e);
        os.write(reinterpret_cast<const char*>(t.values().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
}

inline void save_checkpoint(const TwinSModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
    save_checkpoint(model, os);
    if (!os) throw CheckpointError("write to '" + path + "' failed");
}

/// Rebuilds the model from the embedded config and restores every
/// parameter. When `expected` is given, the embedded config must match it.
inline TwinSModel load_checkpoint(std::istream& is, const std::optional<ModelConfig>& expected = std::nullopt) {
    detail::Reader rd(is);
    const auto magic = rd.bytes(sizeof(kCheckpointMagic), "magic");
    if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw CheckpointError("not a checkpoint: bad magic");
    const auto version = rd.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto cfg_len = rd.get<std::uint64_t>("config length");
    ModelConfig cfg;
    try {
        cfg = ModelConfig::from_text(rd.bytes(cfg_len, "config"));
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
    }
    if (expected) {
        if (auto field = expected->first_mismatch(cfg))
            throw CheckpointError("checkpoint config mismatch on field '" + *field + "'");
    }
    TwinSModel model(cfg);
    auto params = model.named_parameters();
    const auto count = rd.get<std::uint64_t>("parameter count");
    if (count != params.size())
        throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                              std::to_string(params.size()));
    for (auto& [name, t] : params) {
        const auto nlen = rd.get<std::uint32_t>("name length");
        const auto got = rd.bytes(nlen, "parameter name");
        if (got != name) throw CheckpointError("checkpoint parameter '" + got + "' where '" + name + "' expected");
        const auto rank = rd.get<std::uint32_t>("rank");
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(rd.get<std::uint64_t>("extent"));
        if (shape != t.shape())
            throw CheckpointError("parameter '" + name + "' has shape " + to_string(shape) + ", config implies " +
                                  to_string(t.shape()));
        rd.doubles(t.values(), name);
    }
    return model;
}

inline TwinSModel load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
    return load_checkpoint(is, expected);
}

}  // namespace twins
