#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "dms/image.hpp"

namespace dms {

/// Binary netpbm: "P6" for 3 channels, "P5" for 1 channel, maxval 255.
/// The writer emits "P6\n<W> <H>\n255\n" followed by the row-major payload.
std::string encode_pnm(const ImageU8& image);
/// Accepts any whitespace and '#' comments between header tokens.
ImageU8 decode_pnm(std::string_view bytes);

void write_ppm(const ImageU8& image, const std::filesystem::path& path);
ImageU8 read_ppm(const std::filesystem::path& path);

/// Lossless float container: "DMSF" | u32 H, W, C | H*W*C f32, little-endian.
std::string encode_fimg(const ImageF& image);
ImageF decode_fimg(std::string_view bytes);

void write_fimg(const ImageF& image, const std::filesystem::path& path);
ImageF read_fimg(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace dms
