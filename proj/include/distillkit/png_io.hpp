// 8-bit grayscale PNG encode/decode on top of zlib. Covers exactly what the
// dataset directory format needs: color type 0, bit depth 8, no interlacing.
// The decoder handles all five scanline filters so externally produced
// grayscale files load too.

#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace distillkit::png {

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, height*width
};

namespace detail {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32_be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[5], const std::vector<std::uint8_t>& data) {
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    put_u32_be(out, static_cast<std::uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size()))));
}

inline std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
    if (pb <= pc) return static_cast<std::uint8_t>(b);
    return static_cast<std::uint8_t>(c);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const GrayImage& image) {
    if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height)
        throw std::invalid_argument("png encode: inconsistent image dimensions");
    static const std::uint8_t signature[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    std::vector<std::uint8_t> out(signature, signature + 8);

    std::vector<std::uint8_t> ihdr;
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(image.width));
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(image.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    detail::append_chunk(out, "IHDR", ihdr);

    // filter byte 0 per scanline
    std::vector<std::uint8_t> raw;
    raw.reserve(image.height * (image.width + 1));
    for (std::size_t r = 0; r < image.height; ++r) {
        raw.push_back(0);
        raw.insert(raw.end(), image.pixels.begin() + static_cast<std::ptrdiff_t>(r * image.width),
                   image.pixels.begin() + static_cast<std::ptrdiff_t>((r + 1) * image.width));
    }
    uLongf compressed_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(compressed_len);
    if (compress2(compressed.data(), &compressed_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png encode: deflate failed");
    compressed.resize(compressed_len);
    detail::append_chunk(out, "IDAT", compressed);
    detail::append_chunk(out, "IEND", {});
    return out;
}

inline GrayImage decode(const std::vector<std::uint8_t>& bytes) {
    static const std::uint8_t signature[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (bytes.size() < 8 || !std::equal(signature, signature + 8, bytes.begin()))
        throw std::runtime_error("png decode: bad signature");
    GrayImage image;
    std::vector<std::uint8_t> idat;
    bool seen_ihdr = false;
    std::size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = detail::get_u32_be(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("png decode: truncated chunk");
        const std::string type(bytes.begin() + static_cast<std::ptrdiff_t>(pos + 4),
                               bytes.begin() + static_cast<std::ptrdiff_t>(pos + 8));
        const std::uint8_t* data = &bytes[pos + 8];
        if (type == "IHDR") {
            if (len != 13) throw std::runtime_error("png decode: bad IHDR");
            image.width = detail::get_u32_be(data);
            image.height = detail::get_u32_be(data + 4);
            if (data[8] != 8 || data[9] != 0)
                throw std::runtime_error("png decode: only 8-bit grayscale is supported");
            if (data[12] != 0) throw std::runtime_error("png decode: interlaced files are not supported");
            seen_ihdr = true;
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (!seen_ihdr || image.width == 0 || image.height == 0) throw std::runtime_error("png decode: missing IHDR");
    const std::size_t stride = image.width + 1;
    std::vector<std::uint8_t> raw(image.height * stride);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("png decode: inflate failed");

    image.pixels.assign(image.width * image.height, 0);
    std::vector<std::uint8_t> prior(image.width, 0);
    for (std::size_t r = 0; r < image.height; ++r) {
        const std::uint8_t filter = raw[r * stride];
        const std::uint8_t* line = &raw[r * stride + 1];
        std::uint8_t* out = &image.pixels[r * image.width];
        for (std::size_t x = 0; x < image.width; ++x) {
            const int a = x > 0 ? out[x - 1] : 0;
            const int b = prior[x];
            const int c = x > 0 ? prior[x - 1] : 0;
            int v = line[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: throw std::runtime_error("png decode: unknown filter type");
            }
            out[x] = static_cast<std::uint8_t>(v & 0xff);
        }
        std::copy(out, out + image.width, prior.begin());
    }
    return image;
}

inline void write_file(const GrayImage& image, const std::string& path) {
    auto bytes = encode(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("png: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline GrayImage read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("png: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

}  // namespace distillkit::png
