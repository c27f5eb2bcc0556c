#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "lcomp/errors.hpp"
#include "lcomp/tensor.hpp"

namespace lcomp {

namespace detail {

inline void put_be32(std::string& out, uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_be32(out, static_cast<uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                           static_cast<uInt>(body.size()));
    put_be32(out, static_cast<uint32_t>(crc));
}

}  // namespace detail

// 8-bit grayscale PNG from [0,1] floats (clamped, rounded).
inline std::string encode_png_gray(const Tensor& image, size_t width, size_t height) {
    if (image.numel() != width * height) throw ShapeError("encode_png_gray: size mismatch");

    std::string raw;
    raw.reserve(height * (width + 1));
    for (size_t r = 0; r < height; ++r) {
        raw.push_back(0);  // filter: none
        for (size_t c = 0; c < width; ++c) {
            const float v = std::clamp(image.data[r * width + c], 0.0f, 1.0f);
            raw.push_back(static_cast<char>(std::lround(v * 255.0f)));
        }
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<Bytef> compressed(bound);
    if (compress2(compressed.data(), &bound, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw NumericError("zlib compression failed");

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    detail::put_be32(ihdr, static_cast<uint32_t>(width));
    detail::put_be32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // no interlace
    detail::put_chunk(out, "IHDR", ihdr);
    detail::put_chunk(out, "IDAT",
                      std::string(reinterpret_cast<char*>(compressed.data()), bound));
    detail::put_chunk(out, "IEND", "");
    return out;
}

inline void write_png_gray(const std::string& path, const Tensor& image, size_t width,
                           size_t height) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DomainError("cannot open for writing: " + path);
    const std::string bytes = encode_png_gray(image, width, height);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace lcomp
