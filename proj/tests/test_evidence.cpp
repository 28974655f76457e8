#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace chai;
using chai::testing::random_tensor;

namespace {

EmbeddingOutput<double> output_from_maps(Tensor<double> maps, std::string id = {}) {
    EmbeddingOutput<double> o;
    o.embedding = gap_forward(maps);
    o.filter_maps = std::move(maps);
    o.sample_id = std::move(id);
    return o;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

BinaryMask mask_of(std::size_t w, std::size_t h, std::initializer_list<std::pair<std::size_t, std::size_t>> on) {
    BinaryMask m(w, h);
    for (auto [x, y] : on) {
        m.set(x, y, true);
    }
    return m;
}

}

TEST(ActivationPair, ZeroDistanceGivesZeroMaps) {
    Rng rng(1);
    const auto q = output_from_maps(random_tensor<double>({6, 4, 4}, rng, 0, 1));
    const auto p = activation_pair(q, q);
    for (double v : p.qam.data()) {
        EXPECT_EQ(v, 0.0);
    }
    for (double v : p.ram.data()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(ActivationPair, ScalarExample) {
    EmbeddingOutput<double> q;
    q.filter_maps = Tensor<double>({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    q.embedding = Tensor<double>({1}, 2.5);
    EmbeddingOutput<double> r;
    r.filter_maps = Tensor<double>({1, 2, 2}, 0.5);
    r.embedding = Tensor<double>({1}, 0.5);
    const auto p = activation_pair(q, r);
    EXPECT_EQ(p.weights[0], 4.0);
    EXPECT_EQ(p.qam, (Tensor<double>({2, 2}, std::vector<double>{4, 8, 12, 16})));
    EXPECT_EQ(p.ram, (Tensor<double>({2, 2}, 2.0)));
}

TEST(ActivationPair, AlgebraicIdentities) {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 1 + uniform_index(rng, 16), n = 2 + uniform_index(rng, 6);
        const auto q = output_from_maps(random_tensor<double>({d, n, n}, rng, 0, 2), "q");
        const auto r = output_from_maps(random_tensor<double>({d, n, n}, rng, 0, 2), "r");
        const auto p = activation_pair(q, r);
        EXPECT_EQ(p.query_id, "q");
        EXPECT_EQ(p.result_id, "r");
        double wsum = 0, fw = 0, qsum = 0;
        for (std::size_t z = 0; z < d; ++z) {
            wsum += p.weights[z];
            fw += q.embedding[z] * p.weights[z];
        }
        for (double v : p.qam.data()) {
            qsum += v;
        }
        EXPECT_LT(rel(wsum, squared_distance(q.embedding, r.embedding)), 1e-9);
        EXPECT_LT(rel(qsum, static_cast<double>(n * n) * fw), 1e-9);
        EXPECT_EQ(query_activation_map(q, r.embedding), p.qam);
    }
}

TEST(ActivationPair, CubicScaling) {
    Rng rng(3);
    const auto qm = random_tensor<double>({5, 3, 3}, rng, 0, 1);
    const auto rm = random_tensor<double>({5, 3, 3}, rng, 0, 1);
    const double s = 1.7;
    auto scaled = [&](Tensor<double> m) {
        for (auto& v : m.data()) {
            v *= s;
        }
        return m;
    };
    const auto base = activation_pair(output_from_maps(qm), output_from_maps(rm));
    const auto big = activation_pair(output_from_maps(scaled(qm)), output_from_maps(scaled(rm)));
    for (std::size_t i = 0; i < base.qam.size(); ++i) {
        EXPECT_LT(rel(big.qam[i], s * s * s * base.qam[i]), 1e-12);
        EXPECT_LT(rel(big.ram[i], s * s * s * base.ram[i]), 1e-12);
    }
}

TEST(ActivationPair, QamIgnoresResultMapsGivenWeights) {
    Rng rng(4);
    const auto q = output_from_maps(random_tensor<double>({4, 3, 3}, rng, 0, 1));
    auto r1 = output_from_maps(random_tensor<double>({4, 3, 3}, rng, 0, 1));
    auto r2 = r1;
    r2.filter_maps = random_tensor<double>({4, 3, 3}, rng, 0, 1);
    EXPECT_EQ(activation_pair(q, r1).qam, activation_pair(q, r2).qam);
}

TEST(ActivationPair, RejectsMismatch) {
    Rng rng(5);
    const auto q = output_from_maps(random_tensor<double>({4, 3, 3}, rng));
    const auto r = output_from_maps(random_tensor<double>({4, 4, 4}, rng));
    const auto s = output_from_maps(random_tensor<double>({5, 3, 3}, rng));
    EXPECT_THROW(activation_pair(q, r), InvalidInput);
    EXPECT_THROW(activation_pair(q, s), InvalidInput);
}

TEST(Upsample, ConstantAndIdentity) {
    Rng rng(6);
    const auto c = upsample_map(Tensor<double>({3, 3}, 2.5), 10, 7);
    for (double v : c.data()) {
        EXPECT_DOUBLE_EQ(v, 2.5);
    }
    const auto m = random_tensor<double>({5, 5}, rng);
    EXPECT_EQ(upsample_map(m, 5, 5), m);
    EXPECT_THROW(upsample_map(m, 4, 8), InvalidInput);
}

TEST(Upsample, HandBilinear) {
    // 2x2 -> 4x4 corner-aligned: output i samples source row i/3.
    Tensor<double> m({2, 2}, std::vector<double>{0, 3, 6, 9});
    const auto u = upsample_map(m, 4, 4);
    // The source is the plane m(r, c) = 6r + 3c, which bilinear sampling reproduces.
    EXPECT_NEAR(u(1, 1), 3.0, 1e-12);
    EXPECT_NEAR(u(1, 2), 4.0, 1e-12);
    EXPECT_NEAR(u(2, 1), 5.0, 1e-12);
    EXPECT_NEAR(u(2, 2), 6.0, 1e-12);
    EXPECT_DOUBLE_EQ(u(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(u(3, 3), 9.0);
}

TEST(Upsample, StaysWithinInputRange) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto m = random_tensor<double>({8, 8}, rng);
        const auto u = upsample_map(m, 64, 64);
        const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
        for (double v : u.data()) {
            EXPECT_GE(v, *lo - 1e-12);
            EXPECT_LE(v, *hi + 1e-12);
        }
    }
}

TEST(Binarize, Examples) {
    const auto m = binarize_map(Tensor<double>({2, 2}, std::vector<double>{0, 10, 10, 10}), 0.5);
    EXPECT_FALSE(m.at(0, 0));
    EXPECT_TRUE(m.at(1, 0));
    EXPECT_TRUE(m.at(0, 1));
    EXPECT_TRUE(m.at(1, 1));
    EXPECT_EQ(binarize_map(Tensor<double>({3, 3}, 4.0), 0.5).count(), 0u);
    Rng rng(8);
    EXPECT_EQ(binarize_map(random_tensor<double>({4, 5}, rng), 0.0).count(), 20u);
    const auto shape = binarize_map(Tensor<double>({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5}), 0.5);
    EXPECT_EQ(shape.width, 3u);
    EXPECT_EQ(shape.height, 2u);
}

TEST(Jaccard, Examples) {
    const auto a = mask_of(2, 2, {{0, 0}, {1, 0}});
    const auto b = mask_of(2, 2, {{1, 0}, {1, 1}});
    EXPECT_DOUBLE_EQ(jaccard(a, a), 1.0);
    EXPECT_DOUBLE_EQ(jaccard(a, mask_of(2, 2, {{0, 1}, {1, 1}})), 0.0);
    EXPECT_DOUBLE_EQ(jaccard(a, b), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(jaccard(BinaryMask(2, 2), BinaryMask(2, 2)), 0.0);
    EXPECT_THROW(jaccard(a, BinaryMask(3, 2)), InvalidInput);
}

TEST(Jaccard, SymmetricAndOneOnlyWhenEqual) {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        BinaryMask a(4, 4), b(4, 4);
        for (std::size_t i = 0; i < 16; ++i) {
            a.bits[i] = uniform01(rng) < 0.4;
            b.bits[i] = uniform01(rng) < 0.4;
        }
        EXPECT_EQ(jaccard(a, b), jaccard(b, a));
        if (a.count() > 0) {
            EXPECT_EQ(jaccard(a, b) == 1.0, a == b);
        }
    }
}

TEST(Heatmap, AlphaZeroAndConstant) {
    Rng rng(10);
    RgbImage base(6, 4);
    for (auto& p : base.pixels) {
        p = static_cast<std::uint8_t>(uniform_index(rng, 256));
    }
    const auto map = random_tensor<double>({4, 6}, rng);
    EXPECT_EQ(render_heatmap(map, base, 0.0), base);
    const auto flat = render_heatmap(Tensor<double>({4, 6}, 3.0), base, 1.0);
    const auto& c0 = heat_colors()[0];
    for (std::size_t i = 0; i < 24; ++i) {
        EXPECT_EQ(flat.pixels[3 * i], c0[0]);
        EXPECT_EQ(flat.pixels[3 * i + 1], c0[1]);
        EXPECT_EQ(flat.pixels[3 * i + 2], c0[2]);
    }
    EXPECT_THROW(render_heatmap(map, RgbImage(4, 6), 0.5), InvalidInput);
}

TEST(Heatmap, GoldenRender) {
    // Byte hash recorded once from this implementation to catch drift.
    Tensor<double> map({16, 16});
    RgbImage base(16, 16);
    for (std::size_t y = 0; y < 16; ++y) {
        for (std::size_t x = 0; x < 16; ++x) {
            map(y, x) = std::sin(0.4 * x) * std::cos(0.3 * y) + 0.05 * x;
            auto* p = base.at(x, y);
            p[0] = static_cast<std::uint8_t>(10 * x);
            p[1] = static_cast<std::uint8_t>(12 * y);
            p[2] = 128;
        }
    }
    const auto img = render_heatmap(map, base, 0.6);
    const std::string bytes(img.pixels.begin(), img.pixels.end());
    EXPECT_EQ(fnv1a64(bytes), 11010083444304744899ULL);
    EXPECT_EQ(heat_colors()[255][0], 128);
}
