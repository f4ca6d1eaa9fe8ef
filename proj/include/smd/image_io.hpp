#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "smd/image.hpp"

namespace smd {

// Decodes an 8-bit PNG (gray, gray+alpha, RGB, RGBA) or a binary/ASCII PGM
// into [0,1] intensities. Color is converted with BT.601 luma weights.
GrayImage read_image(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const GrayImage& img);

// 8-bit PNG from interleaved channels (1 = gray, 3 = RGB), row-major.
void write_png(const std::filesystem::path& path, int width, int height, int channels,
               const std::vector<std::uint8_t>& pixels);

// Single-channel PFM ("Pf"), little-endian (scale -1.0), bottom row first.
void write_pfm(const std::filesystem::path& path, const Eigen::ArrayXXf& rows_by_cols);
Eigen::ArrayXXf read_pfm(const std::filesystem::path& path);

}  // namespace smd
