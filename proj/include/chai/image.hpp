#ifndef CHAI_IMAGE_HPP
#define CHAI_IMAGE_HPP

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "binary_io.hpp"
#include "tensor.hpp"

/**
 * @file image.hpp
 *
 * @brief 8-bit raster types and their codecs: binary PPM (P6) and PGM (P5)
 * for storage, uncompressed 24-bit BMP for browser delivery.
 */

namespace chai {

struct RgbImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  ///< interleaved RGB, row-major

    RgbImage() = default;
    RgbImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

    std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
    const std::uint8_t* at(std::size_t x, std::size_t y) const { return pixels.data() + (y * width + x) * 3; }

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

struct GrayImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;

    GrayImage() = default;
    GrayImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h, 0) {}

    std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct BinaryMask {
    std::size_t width = 0, height = 0;
    std::vector<bool> bits;  ///< row-major, true = foreground

    BinaryMask() = default;
    BinaryMask(std::size_t w, std::size_t h) : width(w), height(h), bits(w * h, false) {}

    bool at(std::size_t x, std::size_t y) const { return bits[y * width + x]; }
    void set(std::size_t x, std::size_t y, bool v) { bits[y * width + x] = v; }

    std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true)); }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

namespace detail {

// Netpbm header: magic, width, height, maxval, each separated by whitespace
// with optional '#' comments, then exactly one whitespace byte.
struct PnmHeader {
    std::size_t width, height, maxval, offset;
};

inline PnmHeader parse_pnm_header(std::string_view bytes, std::string_view magic) {
    if (bytes.size() < 2 || bytes.substr(0, 2) != magic) {
        throw FormatError("expected " + std::string(magic) + " magic");
    }
    std::size_t pos = 2;
    auto next_number = [&]() -> std::size_t {
        while (pos < bytes.size()) {
            const auto c = static_cast<unsigned char>(bytes[pos]);
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
            } else if (std::isspace(c)) {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= bytes.size()) {
            throw CorruptFile("truncated image header");
        }
        if (!std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            throw FormatError("malformed image header");
        }
        std::size_t value = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (value > (1u << 24)) {
                throw FormatError("image header value out of range");
            }
            ++pos;
        }
        return value;
    };
    PnmHeader h{};
    h.width = next_number();
    h.height = next_number();
    h.maxval = next_number();
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw CorruptFile("truncated image header");
    }
    h.offset = pos + 1;
    if (h.width == 0 || h.height == 0) {
        throw FormatError("image has zero extent");
    }
    if (h.maxval == 0 || h.maxval > 255) {
        throw FormatError("only 8-bit images (maxval <= 255) are supported");
    }
    return h;
}

}

inline std::string encode_ppm(const RgbImage& img) {
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(img.pixels.begin(), img.pixels.end());
    return out;
}

inline std::string encode_pgm(const GrayImage& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(img.pixels.begin(), img.pixels.end());
    return out;
}

inline RgbImage decode_ppm(std::string_view bytes) {
    const auto h = detail::parse_pnm_header(bytes, "P6");
    const std::size_t n = h.width * h.height * 3;
    if (bytes.size() - h.offset < n) {
        throw CorruptFile("truncated PPM payload");
    }
    RgbImage img(h.width, h.height);
    std::copy_n(reinterpret_cast<const std::uint8_t*>(bytes.data() + h.offset), n, img.pixels.begin());
    return img;
}

inline GrayImage decode_pgm(std::string_view bytes) {
    const auto h = detail::parse_pnm_header(bytes, "P5");
    const std::size_t n = h.width * h.height;
    if (bytes.size() - h.offset < n) {
        throw CorruptFile("truncated PGM payload");
    }
    GrayImage img(h.width, h.height);
    std::copy_n(reinterpret_cast<const std::uint8_t*>(bytes.data() + h.offset), n, img.pixels.begin());
    return img;
}

inline RgbImage read_ppm(const std::string& path) { return decode_ppm(read_file(path)); }
inline GrayImage read_pgm(const std::string& path) { return decode_pgm(read_file(path)); }
inline void write_ppm(const std::string& path, const RgbImage& img) { write_file(path, encode_ppm(img)); }
inline void write_pgm(const std::string& path, const GrayImage& img) { write_file(path, encode_pgm(img)); }

/// Pixels >= 128 are foreground.
inline BinaryMask mask_from_gray(const GrayImage& img) {
    BinaryMask m(img.width, img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        m.bits[i] = img.pixels[i] >= 128;
    }
    return m;
}

/// Foreground 255, background 0.
inline GrayImage mask_to_gray(const BinaryMask& m) {
    GrayImage img(m.width, m.height);
    for (std::size_t i = 0; i < m.bits.size(); ++i) {
        img.pixels[i] = m.bits[i] ? 255 : 0;
    }
    return img;
}

inline GrayImage gray_from_rgb_channel_mean(const RgbImage& img) {
    GrayImage g(img.width, img.height);
    for (std::size_t i = 0; i < g.pixels.size(); ++i) {
        const unsigned sum = img.pixels[3 * i] + img.pixels[3 * i + 1] + img.pixels[3 * i + 2];
        g.pixels[i] = static_cast<std::uint8_t>((sum + 1) / 3);
    }
    return g;
}

inline RgbImage rgb_from_gray(const GrayImage& img) {
    RgbImage out(img.width, img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = img.pixels[i];
    }
    return out;
}

/// Offset subtracted from [0, 1] pixel intensities so network inputs are centred.
inline constexpr double pixel_offset = 0.5;

/// [3, H, W] tensor with values in [-0.5, 0.5].
template<typename T>
Tensor<T> image_to_tensor(const RgbImage& img) {
    Tensor<T> t({3, img.height, img.width});
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const auto* p = img.at(x, y);
            for (std::size_t c = 0; c < 3; ++c) {
                t(c, y, x) = static_cast<T>(p[c] / 255.0 - pixel_offset);
            }
        }
    }
    return t;
}

template<typename T>
RgbImage tensor_to_image(const Tensor<T>& t) {
    require_rank(t, 3, "image tensor");
    if (t.extent(0) != 3) {
        throw InvalidInput("image tensor must have 3 channels");
    }
    RgbImage img(t.extent(2), t.extent(1));
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(t(c, y, x)) + pixel_offset, 0.0, 1.0);
                img.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return img;
}

template<typename T>
Tensor<T> load_image(const std::string& path) {
    return image_to_tensor<T>(read_ppm(path));
}

inline BinaryMask load_mask(const std::string& path) { return mask_from_gray(read_pgm(path)); }

/// Uncompressed 24-bit bottom-up BMP (BITMAPINFOHEADER, BI_RGB).
inline std::string encode_bmp(const RgbImage& img) {
    const std::size_t row = (img.width * 3 + 3) / 4 * 4;
    const std::size_t payload = row * img.height;
    ByteWriter w;
    w.bytes("BM");
    w.u32(static_cast<std::uint32_t>(54 + payload));
    w.u32(0);
    w.u32(54);
    w.u32(40);
    w.u32(static_cast<std::uint32_t>(img.width));
    w.u32(static_cast<std::uint32_t>(img.height));
    w.u8(1);
    w.u8(0);  // planes = 1 (u16)
    w.u8(24);
    w.u8(0);  // bits per pixel (u16)
    w.u32(0);
    w.u32(static_cast<std::uint32_t>(payload));
    w.u32(2835);
    w.u32(2835);
    w.u32(0);
    w.u32(0);
    std::string out = w.buffer();
    out.reserve(54 + payload);
    for (std::size_t y = img.height; y-- > 0;) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const auto* p = img.at(x, y);
            out.push_back(static_cast<char>(p[2]));
            out.push_back(static_cast<char>(p[1]));
            out.push_back(static_cast<char>(p[0]));
        }
        out.append(row - img.width * 3, '\0');
    }
    return out;
}

}

#endif
