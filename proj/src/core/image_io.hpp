#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dit.hpp"

namespace ras {

// 8-bit grayscale raster.
struct GrayImage {
    std::uint32_t w = 0, h = 0;
    std::vector<std::uint8_t> pixels;
};

// Channel mean of an image in [-1, 1], mapped linearly to 0..255.
GrayImage to_gray(const Image& img);
// Grid of per-cell values scaled so `max_value` maps to 255; each cell is
// drawn as a cell_px x cell_px block.
GrayImage heatmap(std::span<const std::uint32_t> values, std::uint32_t grid_h, std::uint32_t grid_w,
                  std::uint32_t max_value, std::uint32_t cell_px = 8);
// Side-by-side tiles with a one-pixel separator.
GrayImage tile(const std::vector<GrayImage>& tiles, std::uint32_t columns);

std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
std::vector<std::uint8_t> encode_png(const GrayImage& img);

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes);
void write_text(const std::string& path, const std::string& text);
void write_pgm(const std::string& path, const GrayImage& img);
void write_png(const std::string& path, const GrayImage& img);

}  // namespace ras
