#include "image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <zlib.h>

#include "error.hpp"

namespace ras {

GrayImage to_gray(const Image& img) {
    GrayImage g{img.w, img.h, std::vector<std::uint8_t>(static_cast<std::size_t>(img.w) * img.h)};
    for (std::uint32_t y = 0; y < img.h; ++y) {
        for (std::uint32_t x = 0; x < img.w; ++x) {
            float m = 0.0f;
            for (std::uint32_t c = 0; c < img.c; ++c) m += img.at(y, x, c);
            m /= static_cast<float>(img.c);
            const float v = std::clamp((m + 1.0f) * 0.5f, 0.0f, 1.0f);
            g.pixels[y * img.w + x] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    }
    return g;
}

GrayImage heatmap(std::span<const std::uint32_t> values, std::uint32_t grid_h, std::uint32_t grid_w,
                  std::uint32_t max_value, std::uint32_t cell_px) {
    require(values.size() == static_cast<std::size_t>(grid_h) * grid_w, ErrorKind::Shape,
            "heatmap: value count != grid size");
    GrayImage g{grid_w * cell_px, grid_h * cell_px, {}};
    g.pixels.resize(static_cast<std::size_t>(g.w) * g.h);
    for (std::uint32_t y = 0; y < g.h; ++y) {
        for (std::uint32_t x = 0; x < g.w; ++x) {
            const std::uint32_t v = values[(y / cell_px) * grid_w + x / cell_px];
            const double f = max_value ? std::min(1.0, static_cast<double>(v) / max_value) : 0.0;
            g.pixels[y * g.w + x] = static_cast<std::uint8_t>(std::lround(f * 255.0));
        }
    }
    return g;
}

GrayImage tile(const std::vector<GrayImage>& tiles, std::uint32_t columns) {
    if (tiles.empty()) return {};
    const std::uint32_t tw = tiles[0].w, th = tiles[0].h;
    columns = std::max<std::uint32_t>(1, std::min<std::uint32_t>(columns, static_cast<std::uint32_t>(tiles.size())));
    const std::uint32_t rows = static_cast<std::uint32_t>((tiles.size() + columns - 1) / columns);
    GrayImage g{columns * (tw + 1) - 1, rows * (th + 1) - 1, {}};
    g.pixels.assign(static_cast<std::size_t>(g.w) * g.h, 128);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        require(tiles[i].w == tw && tiles[i].h == th, ErrorKind::Shape, "tile: mixed tile sizes");
        const std::uint32_t ox = static_cast<std::uint32_t>(i % columns) * (tw + 1);
        const std::uint32_t oy = static_cast<std::uint32_t>(i / columns) * (th + 1);
        for (std::uint32_t y = 0; y < th; ++y) {
            std::copy_n(tiles[i].pixels.begin() + y * tw, tw, g.pixels.begin() + (oy + y) * g.w + ox);
        }
    }
    return g;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
    const std::string head = "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
    std::vector<std::uint8_t> out(head.begin(), head.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

std::vector<std::uint8_t> encode_png(const GrayImage& img) {
    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, img.w);
    put_be32(ihdr, img.h);
    ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // 8-bit grayscale, no interlace
    put_chunk(out, "IHDR", ihdr);

    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(img.h) * (img.w + 1));
    for (std::uint32_t y = 0; y < img.h; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), img.pixels.begin() + y * img.w, img.pixels.begin() + (y + 1) * img.w);
    }
    uLongf len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(len);
    if (compress2(z.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
        fail(ErrorKind::Io, "png: deflate failed");
    }
    z.resize(len);
    put_chunk(out, "IDAT", z);
    put_chunk(out, "IEND", {});
    return out;
}

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::Io, "cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(ErrorKind::Io, "write failed for '" + path + "'");
}

void write_text(const std::string& path, const std::string& text) {
    write_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

void write_pgm(const std::string& path, const GrayImage& img) { write_bytes(path, encode_pgm(img)); }
void write_png(const std::string& path, const GrayImage& img) { write_bytes(path, encode_png(img)); }

}  // namespace ras
