#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ant/image.hpp"

namespace ant::png {

using Bytes = std::vector<uint8_t>;

Bytes encode_gray8(const LineImage& image);
Bytes encode_gray16(const Grid<uint16_t>& values);
Bytes encode_rgb(const RgbImage& image);

// 8/16-bit gray, gray+alpha, RGB, RGBA or palette input; colour is reduced by luminance.
LineImage decode_line_image(std::span<const uint8_t> bytes);
// Single-channel 8- or 16-bit input returned verbatim.
Grid<uint16_t> decode_gray16(std::span<const uint8_t> bytes);
RgbImage decode_rgb(std::span<const uint8_t> bytes);

Bytes read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const uint8_t> bytes);

inline LineImage load_line_image(const std::filesystem::path& p) { return decode_line_image(read_file(p)); }
inline Grid<uint16_t> load_gray16(const std::filesystem::path& p) { return decode_gray16(read_file(p)); }

}  // namespace ant::png
