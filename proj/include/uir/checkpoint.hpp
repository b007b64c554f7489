#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "uir/model.hpp"

namespace uir {

enum class TrainPhase : std::uint32_t { supervised = 0, semisupervised = 1 };

inline const char* to_string(TrainPhase p) {
    return p == TrainPhase::supervised ? "supervised" : "semisupervised";
}

// Checkpoint file layout (all integers and floats little-endian):
//   bytes 0..7   magic "UIRCKPT\n"
//   u32          format version (currently 1)
//   u32          training phase (0 supervised, 1 semisupervised)
//   u32          input dim
//   u32          layer count, then per layer: u32 out dim, u32 activation
//   u32          known-identity count (head rows)
//   u64          config length, then that many bytes of config JSON
//   f64 arrays   per layer: weight (row-major), bias; then head (row-major)
inline constexpr std::array<char, 8> kCheckpointMagic = {'U', 'I', 'R', 'C',
                                                         'K', 'P', 'T', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
    EmbeddingModel model;
    TrainPhase phase = TrainPhase::supervised;
    std::string config_json;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    std::array<unsigned char, 4> b{static_cast<unsigned char>(v),
                                   static_cast<unsigned char>(v >> 8),
                                   static_cast<unsigned char>(v >> 16),
                                   static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    std::array<unsigned char, 8> b;
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline void put_f64(std::ostream& os, double x) {
    put_u64(os, std::bit_cast<std::uint64_t>(x));
}

inline std::uint32_t get_u32(std::istream& is) {
    std::array<unsigned char, 4> b;
    if (!is.read(reinterpret_cast<char*>(b.data()), 4)) {
        throw FormatError("checkpoint: truncated file");
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is) {
    std::array<unsigned char, 8> b;
    if (!is.read(reinterpret_cast<char*>(b.data()), 8)) {
        throw FormatError("checkpoint: truncated file");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline void put_doubles(std::ostream& os, std::span<const double> xs) {
    for (double x : xs) put_f64(os, x);
}

inline void get_doubles(std::istream& is, std::span<double> xs) {
    for (double& x : xs) x = get_f64(is);
}

}  // namespace detail

inline void save_checkpoint(const EmbeddingModel& model, TrainPhase phase,
                            const std::string& config_json, const std::string& path) {
    validate(model);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(phase));
    detail::put_u32(os, static_cast<std::uint32_t>(model.input_dim()));
    detail::put_u32(os, static_cast<std::uint32_t>(model.layers.size()));
    for (const auto& l : model.layers) {
        detail::put_u32(os, static_cast<std::uint32_t>(l.weight.rows));
        detail::put_u32(os, static_cast<std::uint32_t>(l.activation));
    }
    detail::put_u32(os, static_cast<std::uint32_t>(model.n_known()));
    detail::put_u64(os, config_json.size());
    os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    for (const auto& l : model.layers) {
        detail::put_doubles(os, l.weight.a);
        detail::put_doubles(os, l.bias);
    }
    detail::put_doubles(os, model.head.a);
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    std::array<char, 8> magic;
    if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
        throw FormatError("checkpoint: bad magic");
    }
    std::uint32_t version = detail::get_u32(is);
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint: unsupported version " + std::to_string(version));
    }
    LoadedCheckpoint ck;
    std::uint32_t phase = detail::get_u32(is);
    if (phase > 1) throw FormatError("checkpoint: bad phase tag");
    ck.phase = static_cast<TrainPhase>(phase);
    std::uint32_t in_dim = detail::get_u32(is);
    std::uint32_t n_layers = detail::get_u32(is);
    if (in_dim == 0 || n_layers > 64) throw FormatError("checkpoint: implausible dims");
    std::uint32_t d = in_dim;
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        std::uint32_t out_dim = detail::get_u32(is);
        std::uint32_t act = detail::get_u32(is);
        if (out_dim == 0 || act > 1) throw FormatError("checkpoint: bad layer header");
        DenseLayer l;
        l.weight = Mat(out_dim, d);
        l.bias.assign(out_dim, 0.0);
        l.activation = static_cast<Activation>(act);
        ck.model.layers.push_back(std::move(l));
        d = out_dim;
    }
    std::uint32_t n_known = detail::get_u32(is);
    if (n_known == 0) throw FormatError("checkpoint: bad head size");
    ck.model.head = Mat(n_known, d);
    std::uint64_t cfg_len = detail::get_u64(is);
    if (cfg_len > (1ull << 24)) throw FormatError("checkpoint: implausible config size");
    ck.config_json.resize(cfg_len);
    if (cfg_len > 0 &&
        !is.read(ck.config_json.data(), static_cast<std::streamsize>(cfg_len))) {
        throw FormatError("checkpoint: truncated file");
    }
    for (auto& l : ck.model.layers) {
        detail::get_doubles(is, l.weight.a);
        detail::get_doubles(is, l.bias);
    }
    detail::get_doubles(is, ck.model.head.a);
    validate(ck.model);
    for (const auto& l : ck.model.layers) {
        if (!all_finite(l.weight.a) || !all_finite(l.bias)) {
            throw FormatError("checkpoint: non-finite parameters");
        }
    }
    if (!all_finite(ck.model.head.a)) throw FormatError("checkpoint: non-finite parameters");
    return ck;
}

}  // namespace uir
