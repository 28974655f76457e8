#ifndef CHAI_EVIDENCE_HPP
#define CHAI_EVIDENCE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "image.hpp"
#include "model.hpp"

namespace chai {

/**
 * Query-result activation map pair.
 *
 * Both maps weight the corresponding image's pre-pooling filter bank by the
 * same per-channel vector w_z = (f_z(q) - f_z(r))^2, so they show where each
 * image contributes to the distance between the two embeddings.
 */
template<typename T>
struct ActivationMapPair {
    Tensor<T> qam;      ///< [n, n]
    Tensor<T> ram;      ///< [n, n]
    Tensor<T> weights;  ///< [d], sums to the squared embedding distance
    std::string query_id;
    std::string result_id;
};

namespace detail {

template<typename T>
Tensor<T> weighted_channel_sum(const Tensor<T>& maps, const Tensor<T>& weights) {
    const std::size_t d = maps.extent(0), h = maps.extent(1), w = maps.extent(2);
    Tensor<T> out({h, w});
    const auto src = maps.data();
    auto dst = out.data();
    for (std::size_t z = 0; z < d; ++z) {
        const T wz = weights[z];
        const T* plane = src.data() + z * h * w;
        for (std::size_t i = 0; i < h * w; ++i) {
            dst[i] += plane[i] * wz;
        }
    }
    return out;
}

}

/// Per-channel weights (f_z(q) - f_z(r))^2.
template<typename T>
Tensor<T> distance_weights(const Tensor<T>& query_embedding, const Tensor<T>& result_embedding) {
    if (query_embedding.shape() != result_embedding.shape()) {
        throw InvalidInput("embeddings differ in shape");
    }
    Tensor<T> w(query_embedding.shape());
    for (std::size_t z = 0; z < w.size(); ++z) {
        const T diff = query_embedding[z] - result_embedding[z];
        w[z] = diff * diff;
    }
    return w;
}

/// QAM alone; depends on the result only through its embedding.
template<typename T>
Tensor<T> query_activation_map(const EmbeddingOutput<T>& q, const Tensor<T>& result_embedding) {
    require_rank(q.filter_maps, 3, "query filter maps");
    if (result_embedding.shape() != Shape{q.filter_maps.extent(0)}) {
        throw InvalidInput("result embedding dimension does not match filter bank depth");
    }
    return detail::weighted_channel_sum(q.filter_maps, distance_weights(q.embedding, result_embedding));
}

template<typename T>
ActivationMapPair<T> activation_pair(const EmbeddingOutput<T>& q, const EmbeddingOutput<T>& r) {
    require_rank(q.filter_maps, 3, "query filter maps");
    require_rank(r.filter_maps, 3, "result filter maps");
    if (q.filter_maps.shape() != r.filter_maps.shape()) {
        throw InvalidInput("query and result filter maps differ in shape: " + shape_string(q.filter_maps.shape()) +
                           " vs " + shape_string(r.filter_maps.shape()));
    }
    const std::size_t d = q.filter_maps.extent(0);
    if (q.embedding.shape() != Shape{d} || r.embedding.shape() != Shape{d}) {
        throw InvalidInput("embedding dimension does not match filter bank depth");
    }
    ActivationMapPair<T> pair;
    pair.weights = distance_weights(q.embedding, r.embedding);
    pair.qam = detail::weighted_channel_sum(q.filter_maps, pair.weights);
    pair.ram = detail::weighted_channel_sum(r.filter_maps, pair.weights);
    pair.query_id = q.sample_id;
    pair.result_id = r.sample_id;
    return pair;
}

/// Bilinear resampling with corner-aligned grids (output corners hit input corners).
template<typename T>
Tensor<T> upsample_map(const Tensor<T>& map, std::size_t height, std::size_t width) {
    require_rank(map, 2, "activation map");
    const std::size_t n = map.extent(0), m = map.extent(1);
    if (height < n || width < m) {
        throw InvalidInput("upsample target " + std::to_string(height) + "x" + std::to_string(width) +
                           " is smaller than source " + shape_string(map.shape()));
    }
    auto coord = [](std::size_t i, std::size_t out, std::size_t in) {
        return out <= 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    };
    Tensor<T> out({height, width});
    for (std::size_t i = 0; i < height; ++i) {
        const double sy = coord(i, height, n);
        const auto y0 = std::min(static_cast<std::size_t>(sy), n - 1);
        const auto y1 = std::min(y0 + 1, n - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t j = 0; j < width; ++j) {
            const double sx = coord(j, width, m);
            const auto x0 = std::min(static_cast<std::size_t>(sx), m - 1);
            const auto x1 = std::min(x0 + 1, m - 1);
            const double fx = sx - static_cast<double>(x0);
            const double top = (1 - fx) * static_cast<double>(map(y0, x0)) + fx * static_cast<double>(map(y0, x1));
            const double bottom = (1 - fx) * static_cast<double>(map(y1, x0)) + fx * static_cast<double>(map(y1, x1));
            out(i, j) = static_cast<T>((1 - fy) * top + fy * bottom);
        }
    }
    return out;
}

/// Min-max normalisation to [0, 1]; a constant map normalises to all zeros.
template<typename T>
Tensor<T> normalize_minmax(const Tensor<T>& map) {
    const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
    Tensor<T> out(map.shape());
    if (!(*hi > *lo)) {
        return out;
    }
    const T range = *hi - *lo;
    for (std::size_t i = 0; i < map.size(); ++i) {
        out[i] = (map[i] - *lo) / range;
    }
    return out;
}

/// Foreground where the min-max normalised value is >= tau. Constant maps give an empty mask.
template<typename T>
BinaryMask binarize_map(const Tensor<T>& map, double tau) {
    require_rank(map, 2, "activation map");
    BinaryMask mask(map.extent(1), map.extent(0));
    const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
    if (!(*hi > *lo)) {
        return mask;
    }
    const auto norm = normalize_minmax(map);
    for (std::size_t i = 0; i < norm.size(); ++i) {
        mask.bits[i] = static_cast<double>(norm[i]) >= tau;
    }
    return mask;
}

/// |a & b| / |a | b|, defined as 0 when both masks are empty.
inline double jaccard(const BinaryMask& a, const BinaryMask& b) {
    if (a.width != b.width || a.height != b.height) {
        throw InvalidInput("jaccard on masks of different size");
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
        uni += (a.bits[i] || b.bits[i]) ? 1 : 0;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// 256-entry blue -> cyan -> yellow -> red ramp.
inline const std::array<std::array<std::uint8_t, 3>, 256>& heat_colors() {
    static const auto table = [] {
        std::array<std::array<std::uint8_t, 3>, 256> t{};
        for (int i = 0; i < 256; ++i) {
            const double v = i / 255.0;
            auto channel = [&](double center) {
                const double c = std::clamp(1.5 - std::abs(4.0 * v - center), 0.0, 1.0);
                return static_cast<std::uint8_t>(std::lround(c * 255.0));
            };
            t[static_cast<std::size_t>(i)] = {channel(3.0), channel(2.0), channel(1.0)};
        }
        return t;
    }();
    return table;
}

/// Colour-maps a [H, W] map and alpha-blends it over `base` (same size).
template<typename T>
RgbImage render_heatmap(const Tensor<T>& map, const RgbImage& base, double alpha) {
    require_rank(map, 2, "heatmap");
    if (map.extent(0) != base.height || map.extent(1) != base.width) {
        throw InvalidInput("heatmap " + shape_string(map.shape()) + " does not match base image " +
                           std::to_string(base.height) + "x" + std::to_string(base.width));
    }
    alpha = std::clamp(alpha, 0.0, 1.0);
    const auto norm = normalize_minmax(map);
    const auto& colors = heat_colors();
    RgbImage out = base;
    if (alpha == 0.0) {
        return out;
    }
    for (std::size_t i = 0; i < norm.size(); ++i) {
        const auto level = static_cast<std::size_t>(std::lround(std::clamp(static_cast<double>(norm[i]), 0.0, 1.0) * 255.0));
        for (std::size_t c = 0; c < 3; ++c) {
            const double blended = (1.0 - alpha) * base.pixels[3 * i + c] + alpha * colors[level][c];
            out.pixels[3 * i + c] = static_cast<std::uint8_t>(std::lround(blended));
        }
    }
    return out;
}

}

#endif
