#ifndef CHAI_TESTS_SUPPORT_HPP
#define CHAI_TESTS_SUPPORT_HPP

// Independent reference implementations used as test oracles. They favour
// obviousness over speed and share no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "chai/chai.hpp"

namespace chai::testing {

template<typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) {
        v = static_cast<T>(uniform_real(rng, lo, hi));
    }
    return t;
}

/// Direct seven-loop convolution with zero padding.
template<typename T>
Tensor<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b, std::size_t stride,
                      std::size_t pad) {
    const long C = static_cast<long>(x.extent(0)), H = static_cast<long>(x.extent(1)),
               W = static_cast<long>(x.extent(2));
    const long F = static_cast<long>(k.extent(0)), K = static_cast<long>(k.extent(2));
    const long s = static_cast<long>(stride), p = static_cast<long>(pad);
    const long OH = (H + 2 * p - K) / s + 1, OW = (W + 2 * p - K) / s + 1;
    Tensor<T> out({static_cast<std::size_t>(F), static_cast<std::size_t>(OH), static_cast<std::size_t>(OW)});
    for (long f = 0; f < F; ++f) {
        for (long oy = 0; oy < OH; ++oy) {
            for (long ox = 0; ox < OW; ++ox) {
                long double acc = b[static_cast<std::size_t>(f)];
                for (long c = 0; c < C; ++c) {
                    for (long ky = 0; ky < K; ++ky) {
                        for (long kx = 0; kx < K; ++kx) {
                            const long iy = oy * s - p + ky, ix = ox * s - p + kx;
                            if (iy < 0 || ix < 0 || iy >= H || ix >= W) {
                                continue;
                            }
                            acc += static_cast<long double>(k[static_cast<std::size_t>(((f * C + c) * K + ky) * K + kx)]) *
                                   x[static_cast<std::size_t>((c * H + iy) * W + ix)];
                        }
                    }
                }
                out[static_cast<std::size_t>((f * OH + oy) * OW + ox)] = static_cast<T>(acc);
            }
        }
    }
    return out;
}

/// Max pooling by scanning every window; first maximum in row-major order wins.
template<typename T>
Tensor<T> pool_oracle(const Tensor<T>& x, std::size_t window, std::size_t stride,
                      std::vector<std::size_t>* argmax = nullptr) {
    const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
    const std::size_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
    Tensor<T> out({C, OH, OW});
    if (argmax) {
        argmax->clear();
    }
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t where = 0;
                for (std::size_t dy = 0; dy < window; ++dy) {
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        const std::size_t idx = (c * H + oy * stride + dy) * W + ox * stride + dx;
                        if (x[idx] > best) {
                            best = x[idx];
                            where = idx;
                        }
                    }
                }
                out(c, oy, ox) = best;
                if (argmax) {
                    argmax->push_back(where);
                }
            }
        }
    }
    return out;
}

/// Magnitudes below this are compared absolutely. The triplet loss is
/// invariant to a common shift of all three embeddings, so some bias
/// gradients are exactly zero and their difference quotient is pure rounding.
inline constexpr double gradient_floor = 1e-6;

/// |a - n| / max(|a|, |n|, gradient_floor).
inline double relative_error(double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), gradient_floor});
    return std::abs(analytic - numeric) / scale;
}

/// A small network and triplet of images whose forward pass stays clear of
/// every ReLU, max-pool and hinge kink by at least `clearance`.
struct GradientProblem {
    ModelConfig config;
    ParamSet<double> params;
    Tensor<double> a, b, c;
    std::size_t attempts = 0;
};

/// Smallest distance of any kink from the forward pass of one image.
inline double kink_clearance(const ParamSet<double>& params, const ModelConfig& config, const Tensor<double>& image) {
    double clear = std::numeric_limits<double>::infinity();
    Tensor<double> x = image;
    for (std::size_t l = 0; l < config.conv_specs.size(); ++l) {
        const auto& s = config.conv_specs[l];
        auto z = conv_oracle(x, params.at(conv_weight_name(l)), params.at(conv_bias_name(l)), s.stride, s.pad);
        for (double v : z.data()) {
            clear = std::min(clear, std::abs(v));
        }
        x = relu_forward(z);
        if (s.pool) {
            const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
            for (std::size_t ch = 0; ch < C; ++ch) {
                for (std::size_t oy = 0; oy + pool_window <= H; oy += pool_stride) {
                    for (std::size_t ox = 0; ox + pool_window <= W; ox += pool_stride) {
                        std::vector<double> cell;
                        for (std::size_t dy = 0; dy < pool_window; ++dy) {
                            for (std::size_t dx = 0; dx < pool_window; ++dx) {
                                cell.push_back(x(ch, oy + dy, ox + dx));
                            }
                        }
                        std::sort(cell.rbegin(), cell.rend());
                        if (cell[0] > 0.0) {
                            clear = std::min(clear, cell[0] - cell[1]);
                        }
                    }
                }
            }
            x = pool_oracle(x, pool_window, pool_stride);
        }
    }
    return clear;
}

inline ModelConfig gradient_check_config(std::uint64_t seed) {
    ModelConfig c;
    c.input_size = 8;
    c.channels_in = 3;
    c.embed_dim = 4;
    c.seed = seed;
    c.conv_specs = {{3, 3, 1, 1, true}, {4, 3, 1, 1, false}};
    return c;
}

inline GradientProblem make_gradient_problem(std::uint64_t seed, double clearance = 1e-3) {
    GradientProblem p;
    p.config = gradient_check_config(seed);
    Rng rng(derive_seed(seed, "gradient-problem"));
    for (p.attempts = 1; p.attempts <= 1000; ++p.attempts) {
        p.params = init_model<double>(p.config);
        // Spread the weights so that activations are O(1) and kinks are rare.
        for (const auto& [name, value] : p.params.values()) {
            auto& t = p.params.at(name);
            for (auto& v : t.data()) {
                v = uniform_real(rng, -0.4, 0.4);
            }
        }
        const Shape shape{3, 8, 8};
        p.a = random_tensor<double>(shape, rng, 0.0, 1.0);
        p.b = random_tensor<double>(shape, rng, 0.0, 1.0);
        p.c = random_tensor<double>(shape, rng, 0.0, 1.0);
        double clear = std::min({kink_clearance(p.params, p.config, p.a), kink_clearance(p.params, p.config, p.b),
                                 kink_clearance(p.params, p.config, p.c)});
        const auto ea = embed(p.params, p.config, p.a).embedding;
        const auto eb = embed(p.params, p.config, p.b).embedding;
        const auto ec = embed(p.params, p.config, p.c).embedding;
        const double pre = 1.0 + squared_distance(ea, eb) - 0.5 * (squared_distance(ea, ec) + squared_distance(eb, ec));
        clear = std::min(clear, std::abs(pre));
        if (clear >= clearance && pre > 0.0) {
            return p;
        }
    }
    throw std::runtime_error("no kink-free gradient problem found");
}

inline double pipeline_loss(const ParamSet<double>& params, const ModelConfig& config, const Tensor<double>& a,
                            const Tensor<double>& b, const Tensor<double>& c) {
    return triplet_loss(embed(params, config, a).embedding, embed(params, config, b).embedding,
                        embed(params, config, c).embedding, 1.0)
        .loss;
}

/// Analytic gradient of the triplet loss over the three shared-weight branches.
inline GradMap<double> pipeline_gradient(const ParamSet<double>& params, const ModelConfig& config,
                                         const Tensor<double>& a, const Tensor<double>& b, const Tensor<double>& c) {
    Tape<double> tape(&params);
    const auto fa = forward_on_tape(tape, config, tape.input(a));
    const auto fb = forward_on_tape(tape, config, tape.input(b));
    const auto fc = forward_on_tape(tape, config, tape.input(c));
    const auto loss = triplet_loss_on_tape(tape, fa.embedding, fb.embedding, fc.embedding, 1.0);
    return tape.backward(loss, Tensor<double>({1}, 1.0)).params;
}

struct GradientCheck {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    std::string worst;
};

/// Central differences with step `eps` on every scalar of every parameter.
inline GradientCheck check_pipeline_gradient(const GradientProblem& p, double eps = 1e-5) {
    const auto analytic = pipeline_gradient(p.params, p.config, p.a, p.b, p.c);
    GradientCheck result;
    ParamSet<double> probe = p.params;
    for (const auto& [name, value] : p.params.values()) {
        auto& t = probe.at(name);
        const auto& g = analytic.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t[i];
            t[i] = saved + eps;
            const double up = pipeline_loss(probe, p.config, p.a, p.b, p.c);
            t[i] = saved - eps;
            const double down = pipeline_loss(probe, p.config, p.a, p.b, p.c);
            t[i] = saved;
            const double numeric = (up - down) / (2 * eps);
            const double err = relative_error(g[i], numeric);
            ++result.checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

/// Minimal BMP reader written from the format description, used as an oracle.
inline RgbImage decode_bmp_oracle(const std::string& bytes) {
    auto u32 = [&](std::size_t at) {
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | static_cast<unsigned char>(bytes.at(at + static_cast<std::size_t>(i)));
        }
        return v;
    };
    auto u16 = [&](std::size_t at) {
        return static_cast<std::uint16_t>(static_cast<unsigned char>(bytes.at(at)) |
                                          (static_cast<unsigned char>(bytes.at(at + 1)) << 8));
    };
    EXPECT_EQ(bytes.substr(0, 2), "BM");
    EXPECT_EQ(u32(2), bytes.size());
    EXPECT_EQ(u32(14), 40u);
    EXPECT_EQ(u16(26), 1u);
    EXPECT_EQ(u16(28), 24u);
    EXPECT_EQ(u32(30), 0u);
    const std::size_t offset = u32(10), w = u32(18), h = u32(22);
    const std::size_t stride = (w * 3 + 3) & ~std::size_t{3};
    EXPECT_EQ(bytes.size(), offset + stride * h);
    chai::RgbImage img(w, h);
    for (std::size_t row = 0; row < h; ++row) {
        const std::size_t y = h - 1 - row;
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t at = offset + row * stride + x * 3;
            img.at(x, y)[0] = static_cast<std::uint8_t>(bytes[at + 2]);
            img.at(x, y)[1] = static_cast<std::uint8_t>(bytes[at + 1]);
            img.at(x, y)[2] = static_cast<std::uint8_t>(bytes[at]);
        }
    }
    return img;
}

/// Full sort of every distance, ties by insertion position.
inline std::vector<std::string> knn_oracle(const std::vector<std::vector<double>>& points,
                                    const std::vector<std::string>& ids, const std::vector<double>& q, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < points.size(); ++i) {
        double d = 0;
        for (std::size_t j = 0; j < q.size(); ++j) {
            d += (points[i][j] - q[j]) * (points[i][j] - q[j]);
        }
        all.emplace_back(d, i);
    }
    std::sort(all.begin(), all.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back(ids[all[i].second]);
    }
    return out;
}

/// (2 * wins + ties) / (2 P N) by comparing every positive with every negative.
inline double auc_oracle(const std::vector<ScoredLabel>& s) {
    std::uint64_t twice = 0, p = 0, n = 0;
    for (const auto& a : s) {
        (a.positive ? p : n) += 1;
    }
    for (const auto& a : s) {
        if (!a.positive) {
            continue;
        }
        for (const auto& b : s) {
            if (b.positive) {
                continue;
            }
            twice += a.score > b.score ? 2 : (a.score == b.score ? 1 : 0);
        }
    }
    return static_cast<double>(twice) / (2.0 * static_cast<double>(p) * static_cast<double>(n));
}

/// Scratch directory under the system temp dir, emptied on construction.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("chai-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}

#endif
