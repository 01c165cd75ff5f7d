#include "dca/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dca {

Image Image::filled(int w, int h, float r, float g, float b) {
    Image img;
    img.w = w;
    img.h = h;
    img.px.resize(static_cast<size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(x, y, 0) = r;
            img.at(x, y, 1) = g;
            img.at(x, y, 2) = b;
        }
    return img;
}

namespace {

void put_u32_be(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

uint32_t read_u32_be(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void append_chunk(std::string& out, const char type[4], const std::string& data) {
    put_u32_be(out, static_cast<uint32_t>(data.size()));
    std::string body(type, 4);
    body += data;
    out += body;
    uint32_t crc = static_cast<uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
    put_u32_be(out, crc);
}

uint8_t to_byte(float v) {
    if (v < 0.0f) v = 0.0f;
    if (v > 1.0f) v = 1.0f;
    return static_cast<uint8_t>(v * 255.0f + 0.5f);
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

}  // namespace

void write_png(const std::string& path, const Image& img) {
    if (img.w < 1 || img.h < 1 ||
        img.px.size() != static_cast<size_t>(img.w) * img.h * 3)
        throw std::invalid_argument("write_png: malformed image");

    // raw scanlines: filter byte 0 + RGB triples
    std::string raw;
    raw.reserve(static_cast<size_t>(img.h) * (1 + static_cast<size_t>(img.w) * 3));
    for (int y = 0; y < img.h; ++y) {
        raw.push_back('\0');
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                raw.push_back(static_cast<char>(to_byte(img.at(x, y, c))));
    }

    uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
    std::string compressed(comp_cap, '\0');
    if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &comp_cap,
                  reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_png: deflate failed");
    compressed.resize(comp_cap);

    std::string ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(img.w));
    put_u32_be(ihdr, static_cast<uint32_t>(img.h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace

    std::string out(reinterpret_cast<const char*>(kSignature), 8);
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", compressed);
    append_chunk(out, "IEND", "");

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_png: cannot open " + path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw std::runtime_error("write_png: write failed: " + path);
}

Image read_png(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_png: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
        throw std::runtime_error("read_png: not a PNG file: " + path);

    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
    size_t pos = 8;
    uint32_t w = 0, h = 0;
    int color_type = -1;
    std::string idat;
    while (pos + 12 <= bytes.size()) {
        uint32_t len = read_u32_be(p + pos);
        std::string type(bytes, pos + 4, 4);
        if (pos + 12 + len > bytes.size())
            throw std::runtime_error("read_png: truncated chunk in " + path);
        const unsigned char* data = p + pos + 8;
        if (type == "IHDR") {
            w = read_u32_be(data);
            h = read_u32_be(data + 4);
            int depth = data[8];
            color_type = data[9];
            int interlace = data[12];
            if (depth != 8)
                throw std::runtime_error("read_png: only 8-bit depth supported");
            if (interlace != 0)
                throw std::runtime_error("read_png: interlaced PNG not supported");
            if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6)
                throw std::runtime_error("read_png: unsupported color type");
        } else if (type == "IDAT") {
            idat.append(reinterpret_cast<const char*>(data), len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (w == 0 || h == 0 || idat.empty())
        throw std::runtime_error("read_png: missing image data in " + path);

    const int channels = (color_type == 0) ? 1 : (color_type == 2) ? 3
                        : (color_type == 4) ? 2 : 4;
    const size_t stride = static_cast<size_t>(w) * channels;
    std::vector<unsigned char> raw(static_cast<size_t>(h) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    int zrc = uncompress(raw.data(), &raw_len, reinterpret_cast<const Bytef*>(idat.data()),
                         static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || raw_len != raw.size())
        throw std::runtime_error("read_png: inflate failed for " + path);

    // unfilter scanlines in place into `pixels`
    std::vector<unsigned char> pixels(static_cast<size_t>(h) * stride);
    for (uint32_t y = 0; y < h; ++y) {
        int filter = raw[y * (stride + 1)];
        const unsigned char* src = raw.data() + y * (stride + 1) + 1;
        unsigned char* dst = pixels.data() + y * stride;
        const unsigned char* prev = (y == 0) ? nullptr : pixels.data() + (y - 1) * stride;
        for (size_t i = 0; i < stride; ++i) {
            int a = (i >= static_cast<size_t>(channels)) ? dst[i - channels] : 0;
            int b = prev ? prev[i] : 0;
            int c = (prev && i >= static_cast<size_t>(channels)) ? prev[i - channels] : 0;
            int x = src[i];
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: x += paeth(a, b, c); break;
                default:
                    throw std::runtime_error("read_png: bad filter type in " + path);
            }
            dst[i] = static_cast<unsigned char>(x & 0xff);
        }
    }

    Image img;
    img.w = static_cast<int>(w);
    img.h = static_cast<int>(h);
    img.px.resize(static_cast<size_t>(w) * h * 3);
    for (uint32_t y = 0; y < h; ++y) {
        for (uint32_t x = 0; x < w; ++x) {
            const unsigned char* s = pixels.data() + y * stride + x * channels;
            float r, g, b;
            if (channels <= 2) {
                r = g = b = s[0] / 255.0f;
            } else {
                r = s[0] / 255.0f;
                g = s[1] / 255.0f;
                b = s[2] / 255.0f;
            }
            img.at(static_cast<int>(x), static_cast<int>(y), 0) = r;
            img.at(static_cast<int>(x), static_cast<int>(y), 1) = g;
            img.at(static_cast<int>(x), static_cast<int>(y), 2) = b;
        }
    }
    return img;
}

} // namespace dca
