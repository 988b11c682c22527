#pragma once

#include <filesystem>

#include "semfuse/image.hpp"

namespace semfuse {

// 16-bit single-channel PNG. Used for label maps, vote counts and
// millimeter depth images.
Image<uint16_t> read_png16(const std::filesystem::path& path);
void write_png16(const std::filesystem::path& path, const Image<uint16_t>& img);

// 8-bit RGB PNG.
Image<Rgb8> read_png_rgb8(const std::filesystem::path& path);
void write_png_rgb8(const std::filesystem::path& path, const Image<Rgb8>& img);

// Depth convention: 16-bit PNG in millimeters, 0 = invalid. In memory depth
// is meters with 0 = invalid.
Image<float> read_depth_png(const std::filesystem::path& path);
void write_depth_png(const std::filesystem::path& path, const Image<float>& depth_m);

}  // namespace semfuse
