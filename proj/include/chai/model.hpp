#ifndef CHAI_MODEL_HPP
#define CHAI_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kv_config.hpp"
#include "ops.hpp"
#include "params.hpp"
#include "random.hpp"
#include "tape.hpp"

namespace chai {

/// Sample id -> image tensor [C, H, W].
template<typename T>
using ImageStore = std::map<std::string, Tensor<T>, std::less<>>;

/// One convolution block: conv, ReLU, then an optional 2x2/2 max pool.
struct ConvSpec {
    std::size_t filters = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 1;
    bool pool = false;

    friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

inline constexpr std::size_t pool_window = 2;
inline constexpr std::size_t pool_stride = 2;

/**
 * Architecture of the embedding network: a stack of conv blocks whose last
 * layer has `embed_dim` filters, followed by global average pooling. The
 * last block's ReLU output is the filter bank used for activation maps.
 */
struct ModelConfig {
    std::size_t input_size = 64;
    std::size_t channels_in = 3;
    std::vector<ConvSpec> conv_specs;
    std::size_t embed_dim = 64;
    std::uint64_t seed = 1;

    /// 64x64 RGB input, 8 -> 16 -> embed_dim filters, final maps 8x8.
    static ModelConfig desk_default(std::size_t embed_dim = 64, std::uint64_t seed = 1) {
        ModelConfig c;
        c.embed_dim = embed_dim;
        c.seed = seed;
        c.conv_specs = {{8, 3, 2, 1, true}, {16, 3, 1, 1, true}, {embed_dim, 3, 1, 1, false}};
        return c;
    }

    /// Spatial side length after every block, starting with the input.
    std::vector<std::size_t> spatial_sizes() const {
        std::vector<std::size_t> sizes{input_size};
        std::size_t s = input_size;
        for (const auto& spec : conv_specs) {
            if (spec.kernel == 0 || spec.stride == 0 || s + 2 * spec.pad < spec.kernel) {
                throw ConfigError("conv block does not fit spatial size " + std::to_string(s));
            }
            s = (s + 2 * spec.pad - spec.kernel) / spec.stride + 1;
            if (spec.pool) {
                if (s < pool_window) {
                    throw ConfigError("pooling does not fit spatial size " + std::to_string(s));
                }
                s = (s - pool_window) / pool_stride + 1;
            }
            sizes.push_back(s);
        }
        return sizes;
    }

    std::size_t map_size() const { return spatial_sizes().back(); }

    void validate() const {
        if (channels_in != 1 && channels_in != 3) {
            throw ConfigError("channels_in must be 1 or 3");
        }
        if (input_size == 0 || embed_dim == 0) {
            throw ConfigError("input_size and embed_dim must be positive");
        }
        if (conv_specs.empty()) {
            throw ConfigError("at least one conv block is required");
        }
        for (const auto& spec : conv_specs) {
            if (spec.filters == 0) {
                throw ConfigError("conv block with zero filters");
            }
        }
        if (conv_specs.back().filters != embed_dim) {
            throw ConfigError("final conv layer has " + std::to_string(conv_specs.back().filters) +
                              " filters but embed_dim is " + std::to_string(embed_dim));
        }
        if (map_size() < 2) {
            throw ConfigError("final filter maps are smaller than 2x2");
        }
    }

    static ModelConfig from_key_values(const KeyValues& entries) {
        ModelConfig c;
        for (const auto& [key, value] : entries) {
            if (key == "input_size") {
                c.input_size = parse_number<std::size_t>(value, key);
            } else if (key == "channels_in") {
                c.channels_in = parse_number<std::size_t>(value, key);
            } else if (key == "embed_dim") {
                c.embed_dim = parse_number<std::size_t>(value, key);
            } else if (key == "seed") {
                c.seed = parse_number<std::uint64_t>(value, key);
            } else if (key == "conv") {
                // filters, kernel, stride, pad, pool|nopool
                const auto parts = split(value, ',');
                if (parts.size() != 5) {
                    throw ConfigError("conv expects 'filters,kernel,stride,pad,pool|nopool'");
                }
                ConvSpec spec;
                spec.filters = parse_number<std::size_t>(parts[0], "conv filters");
                spec.kernel = parse_number<std::size_t>(parts[1], "conv kernel");
                spec.stride = parse_number<std::size_t>(parts[2], "conv stride");
                spec.pad = parse_number<std::size_t>(parts[3], "conv pad");
                const auto pool = trim(parts[4]);
                if (pool != "pool" && pool != "nopool") {
                    throw ConfigError("conv pool flag must be 'pool' or 'nopool'");
                }
                spec.pool = pool == "pool";
                c.conv_specs.push_back(spec);
            } else {
                throw ConfigError("unknown model config key '" + key + "'");
            }
        }
        if (c.conv_specs.empty()) {
            auto d = desk_default(c.embed_dim, c.seed);
            c.conv_specs = d.conv_specs;
        }
        c.validate();
        return c;
    }

    static ModelConfig load(const std::string& path) { return from_key_values(load_key_values(path)); }

    std::string to_text() const {
        std::ostringstream out;
        out << "input_size = " << input_size << "\nchannels_in = " << channels_in << "\nembed_dim = " << embed_dim
            << "\nseed = " << seed << '\n';
        for (const auto& s : conv_specs) {
            out << "conv = " << s.filters << ',' << s.kernel << ',' << s.stride << ',' << s.pad << ','
                << (s.pool ? "pool" : "nopool") << '\n';
        }
        return out.str();
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline std::string conv_weight_name(std::size_t layer) { return "conv" + std::to_string(layer) + ".weight"; }
inline std::string conv_bias_name(std::size_t layer) { return "conv" + std::to_string(layer) + ".bias"; }

/// Layer group of the final (embedding) conv layer.
inline std::string head_group(const ModelConfig& config) {
    return "conv" + std::to_string(config.conv_specs.size() - 1);
}

/// Shapes every parameter must have for `config`, keyed by name.
inline std::map<std::string, Shape> expected_shapes(const ModelConfig& config) {
    std::map<std::string, Shape> shapes;
    std::size_t in = config.channels_in;
    for (std::size_t l = 0; l < config.conv_specs.size(); ++l) {
        const auto& s = config.conv_specs[l];
        shapes[conv_weight_name(l)] = {s.filters, in, s.kernel, s.kernel};
        shapes[conv_bias_name(l)] = {s.filters};
        in = s.filters;
    }
    return shapes;
}

/// Uniform(-a, a) weights with variance 1/fan_in, zero biases, drawn from `config.seed`.
template<typename T>
ParamSet<T> init_model(const ModelConfig& config) {
    config.validate();
    Rng rng(config.seed);
    ParamSet<T> params;
    std::size_t in = config.channels_in;
    for (std::size_t l = 0; l < config.conv_specs.size(); ++l) {
        const auto& s = config.conv_specs[l];
        const std::size_t fan_in = in * s.kernel * s.kernel;
        const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
        Tensor<T> w({s.filters, in, s.kernel, s.kernel});
        for (auto& v : w.data()) {
            v = static_cast<T>(uniform_real(rng, -bound, bound));
        }
        params.add(conv_weight_name(l), std::move(w));
        params.add(conv_bias_name(l), Tensor<T>({s.filters}));
        in = s.filters;
    }
    return params;
}

/// Throws unless `params` holds exactly the tensors `config` requires.
template<typename T>
void check_params(const ParamSet<T>& params, const ModelConfig& config) {
    const auto shapes = expected_shapes(config);
    if (params.size() != shapes.size()) {
        throw ConfigError("parameter count " + std::to_string(params.size()) + " does not match model config (" +
                          std::to_string(shapes.size()) + ")");
    }
    for (const auto& [name, shape] : shapes) {
        if (!params.contains(name)) {
            throw ConfigError("missing parameter '" + name + "'");
        }
        if (params.at(name).shape() != shape) {
            throw ConfigError("parameter '" + name + "' has shape " + shape_string(params.at(name).shape()) +
                              ", config expects " + shape_string(shape));
        }
    }
}

template<typename T>
struct EmbeddingOutput {
    Tensor<T> embedding;    ///< [d], channelwise mean of filter_maps
    Tensor<T> filter_maps;  ///< [d, n, n]
    std::string sample_id;
};

template<typename T>
void check_image(const Tensor<T>& image, const ModelConfig& config) {
    const Shape want{config.channels_in, config.input_size, config.input_size};
    if (image.shape() != want) {
        throw InvalidInput("image shape " + shape_string(image.shape()) + " does not match model input " +
                           shape_string(want));
    }
}

/// Nodes of one recorded forward pass.
struct ForwardVars {
    Var filter_maps;
    Var embedding;
};

template<typename T>
ForwardVars forward_on_tape(Tape<T>& tape, const ModelConfig& config, Var image) {
    Var x = image;
    for (std::size_t l = 0; l < config.conv_specs.size(); ++l) {
        const auto& s = config.conv_specs[l];
        x = tape.conv2d(x, tape.param(conv_weight_name(l)), tape.param(conv_bias_name(l)), s.stride, s.pad);
        x = tape.relu(x);
        if (s.pool) {
            x = tape.maxpool2d(x, pool_window, pool_stride);
        }
    }
    return {x, tape.gap(x)};
}

/// Filter bank before pooling, computed without recording a tape.
template<typename T>
Tensor<T> filter_maps(const ParamSet<T>& params, const ModelConfig& config, const Tensor<T>& image) {
    check_image(image, config);
    Tensor<T> x = image;
    for (std::size_t l = 0; l < config.conv_specs.size(); ++l) {
        const auto& s = config.conv_specs[l];
        x = relu_forward(conv2d_forward(x, params.at(conv_weight_name(l)), params.at(conv_bias_name(l)), s.stride, s.pad));
        if (s.pool) {
            x = maxpool2d_forward(x, pool_window, pool_stride).output;
        }
    }
    return x;
}

template<typename T>
EmbeddingOutput<T> embed(const ParamSet<T>& params, const ModelConfig& config, const Tensor<T>& image,
                         std::string sample_id = {}) {
    EmbeddingOutput<T> out;
    out.filter_maps = filter_maps(params, config, image);
    out.embedding = gap_forward(out.filter_maps);
    out.sample_id = std::move(sample_id);
    return out;
}

}

#endif
