#ifndef CHAI_WEIGHTS_IO_HPP
#define CHAI_WEIGHTS_IO_HPP

#include <string>
#include <string_view>

#include "binary_io.hpp"
#include "model.hpp"

namespace chai {

inline constexpr std::string_view weights_magic = "CHAIW001";
inline constexpr std::uint32_t weights_version = 1;

// Layout: magic, u32 version, u32 tensor count, then per tensor
// (u32 name length, UTF-8 name, u32 rank, u32 extents[rank], f32 payload).
template<typename T>
std::string encode_weights(const ParamSet<T>& params) {
    ByteWriter w;
    w.bytes(weights_magic);
    w.u32(weights_version);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params.values()) {
        w.string(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto e : t.shape()) {
            w.u32(static_cast<std::uint32_t>(e));
        }
        for (auto v : t.data()) {
            w.f32(static_cast<float>(v));
        }
    }
    return w.buffer();
}

template<typename T>
ParamSet<T> decode_weights(std::string_view bytes) {
    if (bytes.size() < weights_magic.size()) {
        throw CorruptFile("weights file shorter than its header");
    }
    if (bytes.substr(0, weights_magic.size()) != weights_magic) {
        throw FormatError("not a weights file (bad magic)");
    }
    ByteReader r(bytes.substr(weights_magic.size()));
    const auto version = r.u32();
    if (version != weights_version) {
        throw FormatError("unsupported weights version " + std::to_string(version));
    }
    const auto count = r.u32();
    ParamSet<T> params;
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = r.string();
        const auto rank = r.u32();
        if (rank == 0 || rank > 8) {
            throw CorruptFile("implausible tensor rank " + std::to_string(rank) + " for '" + name + "'");
        }
        Shape shape(rank);
        std::size_t volume = 1;
        for (auto& e : shape) {
            e = r.u32();
            if (e == 0) {
                throw CorruptFile("zero extent in tensor '" + name + "'");
            }
            volume *= e;
        }
        if (volume > r.remaining() / 4) {
            throw CorruptFile("payload of '" + name + "' is truncated");
        }
        std::vector<T> data(volume);
        for (auto& v : data) {
            v = static_cast<T>(r.f32());
        }
        if (params.contains(name)) {
            throw CorruptFile("duplicate tensor '" + name + "'");
        }
        params.add(std::move(name), Tensor<T>(std::move(shape), std::move(data)));
    }
    if (!r.at_end()) {
        throw CorruptFile("trailing bytes after last tensor");
    }
    return params;
}

template<typename T>
void save_weights(const ParamSet<T>& params, const std::string& path) {
    write_file(path, encode_weights(params));
}

template<typename T>
ParamSet<T> load_weights(const std::string& path) {
    return decode_weights<T>(read_file(path));
}

/// Loads and checks the shape table against `config`.
template<typename T>
ParamSet<T> load_weights(const std::string& path, const ModelConfig& config) {
    auto params = load_weights<T>(path);
    check_params(params, config);
    return params;
}

}

#endif
