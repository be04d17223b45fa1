#include "ant/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "ant/error.hpp"

namespace ant::png {
namespace {

struct ReadCursor {
  std::span<const uint8_t> bytes;
  size_t offset = 0;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t count) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + count > cursor->bytes.size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, cursor->bytes.data() + cursor->offset, count);
  cursor->offset += count;
}

void write_to_memory(png_structp png, png_bytep data, png_size_t count) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + count);
}

void flush_noop(png_structp) {}

void error_handler(png_structp png, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  *text = message;
  png_longjmp(png, 1);
}

void warning_handler(png_structp, png_const_charp) {}

// Raw decoded samples, channel-interleaved, at the file's bit depth (8 or 16).
struct Raw {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<uint16_t> samples;
};

Raw decode_raw(std::span<const uint8_t> bytes) {
  require(bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0, ErrorCode::Io, "not a PNG stream");
  std::string error_text;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error_text, error_handler, warning_handler);
  require(png != nullptr, ErrorCode::Io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  Raw raw;
  std::vector<png_bytep> rows;
  std::vector<uint8_t> buffer;
  ReadCursor cursor{bytes, 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::Io, "PNG decode failed: " + error_text);
  }
  png_set_read_fn(png, &cursor, read_from_memory);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = png_get_bit_depth(png, info);
  const size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * raw.height);
  rows.resize(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = buffer.data() + row_bytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const size_t count = static_cast<size_t>(raw.width) * raw.height * raw.channels;
  raw.samples.resize(count);
  if (raw.bit_depth == 16) {
    for (size_t i = 0; i < count; ++i) {
      raw.samples[i] = static_cast<uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
    }
  } else {
    for (size_t i = 0; i < count; ++i) raw.samples[i] = buffer[i];
  }
  return raw;
}

Bytes encode_raw(int width, int height, int color_type, int bit_depth, int channels,
                 const std::vector<uint8_t>& packed) {
  std::string error_text;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error_text, error_handler, warning_handler);
  require(png != nullptr, ErrorCode::Io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  Bytes out;
  const size_t row_bytes = static_cast<size_t>(width) * channels * (bit_depth / 8);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(packed.data() + row_bytes * y);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Io, "PNG encode failed: " + error_text);
  }
  png_set_write_fn(png, &out, write_to_memory, flush_noop);
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

Bytes encode_gray8(const LineImage& image) {
  image.validate();
  std::vector<uint8_t> packed(image.pixels.size());
  for (size_t i = 0; i < packed.size(); ++i) {
    packed[i] = static_cast<uint8_t>(std::lround(image.pixels[i] * 255.0f));
  }
  return encode_raw(image.width, image.height, PNG_COLOR_TYPE_GRAY, 8, 1, packed);
}

Bytes encode_gray16(const Grid<uint16_t>& values) {
  require(values.width > 0 && values.height > 0, ErrorCode::InvalidArgument, "empty label map");
  std::vector<uint8_t> packed(values.size() * 2);
  for (size_t i = 0; i < values.size(); ++i) {
    packed[2 * i] = static_cast<uint8_t>(values.data[i] >> 8);
    packed[2 * i + 1] = static_cast<uint8_t>(values.data[i] & 0xff);
  }
  return encode_raw(values.width, values.height, PNG_COLOR_TYPE_GRAY, 16, 1, packed);
}

Bytes encode_rgb(const RgbImage& image) {
  require(image.width > 0 && image.height > 0, ErrorCode::InvalidArgument, "empty RGB image");
  return encode_raw(image.width, image.height, PNG_COLOR_TYPE_RGB, 8, 3, image.pixels);
}

LineImage decode_line_image(std::span<const uint8_t> bytes) {
  const Raw raw = decode_raw(bytes);
  const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
  LineImage image(raw.width, raw.height);
  const size_t n = static_cast<size_t>(raw.width) * raw.height;
  for (size_t i = 0; i < n; ++i) {
    const uint16_t* px = raw.samples.data() + i * raw.channels;
    double lum;
    if (raw.channels >= 3) {
      lum = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    } else {
      lum = px[0];
    }
    image.pixels[i] = static_cast<float>(std::clamp(lum / scale, 0.0, 1.0));
  }
  return image;
}

Grid<uint16_t> decode_gray16(std::span<const uint8_t> bytes) {
  const Raw raw = decode_raw(bytes);
  require(raw.channels == 1, ErrorCode::Io, "label map PNG must be single-channel");
  Grid<uint16_t> out(raw.width, raw.height);
  out.data = raw.samples;
  return out;
}

RgbImage decode_rgb(std::span<const uint8_t> bytes) {
  const Raw raw = decode_raw(bytes);
  RgbImage out(raw.width, raw.height);
  const int shift = raw.bit_depth == 16 ? 8 : 0;
  for (int y = 0; y < raw.height; ++y) {
    for (int x = 0; x < raw.width; ++x) {
      const uint16_t* px = raw.samples.data() + (static_cast<size_t>(y) * raw.width + x) * raw.channels;
      if (raw.channels >= 3) {
        out.set(x, y, {static_cast<uint8_t>(px[0] >> shift), static_cast<uint8_t>(px[1] >> shift),
                       static_cast<uint8_t>(px[2] >> shift)});
      } else {
        const auto g = static_cast<uint8_t>(px[0] >> shift);
        out.set(x, y, {g, g, g});
      }
    }
  }
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(static_cast<bool>(out), ErrorCode::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace ant::png
