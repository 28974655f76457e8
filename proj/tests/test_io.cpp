#include <gtest/gtest.h>

#include <cstring>

#include "support.hpp"

using namespace chai;
using chai::testing::random_tensor;
using chai::testing::scratch_dir;
using chai::testing::decode_bmp_oracle;

namespace {

RgbImage random_rgb(std::size_t w, std::size_t h, Rng& rng) {
    RgbImage img(w, h);
    for (auto& p : img.pixels) {
        p = static_cast<std::uint8_t>(uniform_index(rng, 256));
    }
    return img;
}

ParamSet<float> small_params() {
    auto c = ModelConfig::desk_default(16, 3);
    return init_model<float>(c);
}

}

TEST(Weights, RoundTripIsBitExact) {
    const auto p = small_params();
    const auto bytes = encode_weights(p);
    EXPECT_EQ(bytes.substr(0, 8), "CHAIW001");
    const auto back = decode_weights<float>(bytes);
    EXPECT_EQ(back, p);
    EXPECT_EQ(encode_weights(back), bytes);
}

TEST(Weights, SaveLoadSaveIdenticalFiles) {
    const auto dir = scratch_dir("weights");
    const auto p = small_params();
    save_weights(p, (dir / "a.w").string());
    save_weights(load_weights<float>((dir / "a.w").string()), (dir / "b.w").string());
    EXPECT_EQ(read_file((dir / "a.w").string()), read_file((dir / "b.w").string()));
    EXPECT_NO_THROW(load_weights<float>((dir / "a.w").string(), ModelConfig::desk_default(16, 3)));
    EXPECT_THROW(load_weights<float>((dir / "a.w").string(), ModelConfig::desk_default(64)), ConfigError);
}

TEST(Weights, TruncationAndMagic) {
    const auto bytes = encode_weights(small_params());
    for (std::size_t cut : {std::size_t{3}, std::size_t{12}, std::size_t{40}, bytes.size() - 1}) {
        EXPECT_THROW(decode_weights<float>(bytes.substr(0, cut)), CorruptFile) << cut;
    }
    std::string bad = bytes;
    std::memcpy(bad.data(), "XXXX0000", 8);
    EXPECT_THROW(decode_weights<float>(bad), FormatError);
    EXPECT_THROW(decode_weights<float>(bytes + "x"), CorruptFile);
    EXPECT_THROW(load_weights<float>("/nonexistent/dir/w.bin"), IoError);
}

TEST(Weights, DoubleParamsRoundTripAtFloatPrecision) {
    auto p = init_model<double>(ModelConfig::desk_default(8));
    const auto back = decode_weights<double>(encode_weights(p));
    for (const auto& [name, t] : p.values()) {
        const auto& b = back.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            EXPECT_EQ(b[i], static_cast<double>(static_cast<float>(t[i])));
        }
    }
}

TEST(Index, RoundTripIsBitExact) {
    Rng rng(4);
    EmbeddingIndex<float> idx(5);
    idx.add("a", HierLabel{Disease::melanoma, "G1", false}, random_tensor<float>({5}, rng));
    idx.add("b", HierLabel{std::nullopt, "U3", true}, random_tensor<float>({5}, rng));
    idx.add("c", HierLabel{Disease::benign_nevus, "", false}, random_tensor<float>({5}, rng));
    const auto bytes = encode_index(idx);
    EXPECT_EQ(bytes.substr(0, 8), "CHAIX001");
    const auto back = decode_index<float>(bytes);
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.record(i).id, idx.record(i).id);
        EXPECT_EQ(back.record(i).label, idx.record(i).label);
        for (std::size_t j = 0; j < 5; ++j) {
            EXPECT_EQ(back.embedding(i)[j], idx.embedding(i)[j]);
        }
    }
    EXPECT_EQ(encode_index(back), bytes);
    EXPECT_THROW(decode_index<float>(bytes.substr(0, bytes.size() - 2)), CorruptFile);
    std::string bad = bytes;
    bad[0] = 'Z';
    EXPECT_THROW(decode_index<float>(bad), FormatError);
}

TEST(Pnm, RoundTrip) {
    Rng rng(5);
    const auto img = random_rgb(7, 5, rng);
    EXPECT_EQ(decode_ppm(encode_ppm(img)), img);
    GrayImage g(4, 3);
    for (auto& p : g.pixels) {
        p = static_cast<std::uint8_t>(uniform_index(rng, 256));
    }
    EXPECT_EQ(decode_pgm(encode_pgm(g)), g);
}

TEST(Pnm, HeaderWithCommentsAndErrors) {
    std::string data = "P6\n# made by hand\n2 1\n# max\n255\n";
    data += std::string("\x01\x02\x03\x04\x05\x06", 6);
    const auto img = decode_ppm(data);
    EXPECT_EQ(img.width, 2u);
    EXPECT_EQ(img.at(1, 0)[2], 6);
    EXPECT_THROW(decode_ppm(data.substr(0, data.size() - 1)), CorruptFile);
    EXPECT_THROW(decode_ppm("P3\n1 1\n255\n"), FormatError);
    EXPECT_THROW(decode_ppm("P6\n1 1\n65535\n"), FormatError);
    EXPECT_THROW(decode_pgm("P5\n0 4\n255\n"), FormatError);
}

TEST(Pnm, MaskConversion) {
    GrayImage g(3, 1);
    g.pixels = {0, 127, 200};
    const auto m = mask_from_gray(g);
    EXPECT_FALSE(m.at(0, 0));
    EXPECT_FALSE(m.at(1, 0));
    EXPECT_TRUE(m.at(2, 0));
    EXPECT_EQ(mask_to_gray(m).pixels, (std::vector<std::uint8_t>{0, 0, 255}));
}

TEST(Pnm, TensorConversionRoundTrip) {
    Rng rng(6);
    const auto img = random_rgb(9, 4, rng);
    const auto t = image_to_tensor<double>(img);
    ASSERT_EQ(t.shape(), (Shape{3, 4, 9}));
    for (double v : t.data()) {
        EXPECT_GE(v, -0.5);
        EXPECT_LE(v, 0.5);
    }
    EXPECT_DOUBLE_EQ(t(1, 2, 3), img.at(3, 2)[1] / 255.0 - 0.5);
    EXPECT_EQ(tensor_to_image(t), img);
}

TEST(Bmp, MatchesIndependentDecoder) {
    Rng rng(7);
    for (auto [w, h] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 2}, {4, 4}, {5, 3}, {64, 64}}) {
        const auto img = random_rgb(w, h, rng);
        EXPECT_EQ(decode_bmp_oracle(encode_bmp(img)), img) << w << "x" << h;
    }
}

TEST(Files, ReadMissingIsIoError) {
    EXPECT_THROW(read_file("/nonexistent/file.bin"), IoError);
    EXPECT_THROW(write_file("/nonexistent/dir/file.bin", "x"), IoError);
}
