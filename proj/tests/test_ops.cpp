#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support.hpp"

using namespace chai;
using chai::testing::conv_oracle;
using chai::testing::pool_oracle;
using chai::testing::random_tensor;

namespace {

void expect_close_rel(const Tensor<double>& got, const Tensor<double>& want, double rel) {
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double scale = std::max(std::abs(want[i]), 1e-300);
        EXPECT_LE(std::abs(got[i] - want[i]) / scale, rel) << "at " << i;
    }
}

}

TEST(Conv2d, SingleCell) {
    Tensor<double> x({1, 1, 1}, 2.0), k({1, 1, 1, 1}, 3.0), b({1}, 1.0);
    const auto y = conv2d_forward(x, k, b, 1, 0);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
    EXPECT_DOUBLE_EQ(y[0], 7.0);
}

TEST(Conv2d, IdentityKernelSamePad) {
    Rng rng(5);
    const auto x = random_tensor<double>({3, 6, 7}, rng);
    Tensor<double> k({3, 3, 3, 3}, 0.0), b({3}, 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
        k[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
    }
    EXPECT_EQ(conv2d_forward(x, k, b, 1, 1), x);
}

TEST(Conv2d, MatchesDirectOracle) {
    Rng rng(17);
    const auto x = random_tensor<double>({2, 5, 5}, rng);
    const auto k = random_tensor<double>({3, 2, 3, 3}, rng);
    const auto b = random_tensor<double>({3}, rng);
    expect_close_rel(conv2d_forward(x, k, b, 1, 0), conv_oracle(x, k, b, 1, 0), 1e-12);
}

TEST(Conv2d, MatchesOracleOnRandomGeometries) {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t c = 1 + uniform_index(rng, 3), f = 1 + uniform_index(rng, 4);
        const std::size_t kk = 1 + uniform_index(rng, 4), pad = uniform_index(rng, 3), stride = 1 + uniform_index(rng, 3);
        const std::size_t h = kk + uniform_index(rng, 6), w = kk + uniform_index(rng, 6);
        const auto x = random_tensor<double>({c, h, w}, rng);
        const auto k = random_tensor<double>({f, c, kk, kk}, rng);
        const auto b = random_tensor<double>({f}, rng);
        expect_close_rel(conv2d_forward(x, k, b, stride, pad), conv_oracle(x, k, b, stride, pad), 1e-12);
    }
}

TEST(Conv2d, RejectsBadInput) {
    Tensor<double> x({2, 4, 4}, 1.0), b({1}, 0.0);
    EXPECT_THROW(conv2d_forward(x, Tensor<double>({1, 3, 3, 3}), b, 1, 1), InvalidInput);
    EXPECT_THROW(conv2d_forward(x, Tensor<double>({1, 2, 7, 7}), b, 1, 0), InvalidInput);
    EXPECT_THROW(conv2d_forward(x, Tensor<double>({1, 2, 3, 3}), Tensor<double>({2}), 1, 1), InvalidInput);
    EXPECT_THROW(conv2d_forward(x, Tensor<double>({1, 2, 3, 3}), b, 0, 1), InvalidInput);
    x[3] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(conv2d_forward(x, Tensor<double>({1, 2, 3, 3}), b, 1, 1), NumericDomainError);
}

TEST(Conv2d, LeavesInputsUntouched) {
    Rng rng(2);
    const auto x = random_tensor<double>({2, 5, 5}, rng);
    const auto k = random_tensor<double>({2, 2, 3, 3}, rng);
    const auto b = random_tensor<double>({2}, rng);
    const auto x0 = x, k0 = k, b0 = b;
    (void)conv2d_forward(x, k, b, 2, 1);
    EXPECT_EQ(x, x0);
    EXPECT_EQ(k, k0);
    EXPECT_EQ(b, b0);
}

TEST(Relu, Examples) {
    Tensor<double> x({3}, std::vector<double>{-1, 0, 2});
    EXPECT_EQ(relu_forward(x), (Tensor<double>({3}, std::vector<double>{0, 0, 2})));
    Tensor<double> pos({2, 2}, std::vector<double>{0.5, 1, 2, 3});
    EXPECT_EQ(relu_forward(pos), pos);
}

TEST(Relu, MatchesElementwiseOracle) {
    Rng rng(8);
    const auto x = random_tensor<double>({4, 5, 6}, rng);
    const auto y = relu_forward(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_EQ(y[i], x[i] > 0 ? x[i] : 0.0);
    }
}

TEST(MaxPool, Examples) {
    Tensor<double> x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    const auto r = maxpool2d_forward(x, 2, 2);
    ASSERT_EQ(r.output.shape(), (Shape{1, 1, 1}));
    EXPECT_DOUBLE_EQ(r.output[0], 4.0);
    EXPECT_EQ(r.argmax[0], 3u);
}

TEST(MaxPool, ConstantInputPicksFirstIndex) {
    Tensor<double> x({2, 4, 4}, 1.25);
    const auto r = maxpool2d_forward(x, 2, 2);
    for (double v : r.output.data()) {
        EXPECT_EQ(v, 1.25);
    }
    std::vector<std::size_t> want;
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t oy = 0; oy < 2; ++oy) {
            for (std::size_t ox = 0; ox < 2; ++ox) {
                want.push_back((c * 4 + 2 * oy) * 4 + 2 * ox);
            }
        }
    }
    EXPECT_EQ(r.argmax, want);
}

TEST(MaxPool, MatchesOracle) {
    Rng rng(4);
    for (auto [window, stride] : {std::pair<std::size_t, std::size_t>{2, 2}, {3, 1}, {3, 2}}) {
        const auto x = random_tensor<double>({3, 8, 8}, rng);
        std::vector<std::size_t> argmax;
        const auto want = pool_oracle(x, window, stride, &argmax);
        const auto got = maxpool2d_forward(x, window, stride);
        EXPECT_EQ(got.output, want);
        EXPECT_EQ(got.argmax, argmax);
    }
}

TEST(MaxPool, RejectsOversizedWindow) {
    EXPECT_THROW(maxpool2d_forward(Tensor<double>({1, 2, 2}), 3, 1), InvalidInput);
    EXPECT_THROW(maxpool2d_forward(Tensor<double>({1, 2, 2}), 2, 0), InvalidInput);
}

TEST(MaxPool, BackwardRoutesToArgmax) {
    Tensor<double> x({1, 2, 4}, std::vector<double>{1, 5, 2, 2, 3, 0, 2, 2});
    const auto r = maxpool2d_forward(x, 2, 2);
    const auto g = maxpool2d_backward(x.shape(), r.argmax, Tensor<double>({1, 1, 2}, std::vector<double>{10, 20}));
    EXPECT_EQ(g, (Tensor<double>({1, 2, 4}, std::vector<double>{0, 10, 20, 0, 0, 0, 0, 0})));
}

TEST(Gap, Examples) {
    Tensor<double> x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(gap_forward(x)[0], 2.5);
    for (std::size_t n : {1u, 3u, 7u}) {
        Tensor<double> c({2, n, n});
        for (std::size_t i = 0; i < n * n; ++i) {
            c[i] = -0.75;
            c[n * n + i] = 3.5;
        }
        const auto e = gap_forward(c);
        EXPECT_DOUBLE_EQ(e[0], -0.75);
        EXPECT_DOUBLE_EQ(e[1], 3.5);
    }
}

TEST(Gap, MatchesSummationOracle) {
    Rng rng(12);
    const auto x = random_tensor<double>({16, 4, 4}, rng);
    const auto e = gap_forward(x);
    for (std::size_t z = 0; z < 16; ++z) {
        long double s = 0;
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                s += x(z, i, j);
            }
        }
        const double want = static_cast<double>(s / 16);
        EXPECT_LE(std::abs(e[z] - want), 1e-12 * std::max(1.0, std::abs(want)));
    }
}

TEST(Gap, RejectsNonSquare) {
    EXPECT_THROW(gap_forward(Tensor<double>({2, 3, 4})), InvalidInput);
    EXPECT_THROW(gap_forward(Tensor<double>({4, 4})), InvalidInput);
}

TEST(Ops, FloatAndDoubleAgree) {
    Rng rng(21);
    const auto x = random_tensor<double>({3, 9, 9}, rng);
    const auto k = random_tensor<double>({4, 3, 3, 3}, rng);
    const auto b = random_tensor<double>({4}, rng);
    const auto yd = gap_forward(relu_forward(conv2d_forward(x, k, b, 2, 1)));
    const auto yf = gap_forward(relu_forward(conv2d_forward(x.cast<float>(), k.cast<float>(), b.cast<float>(), 2, 1)));
    for (std::size_t i = 0; i < yd.size(); ++i) {
        EXPECT_NEAR(yf[i], yd[i], 1e-5);
    }
}
