#include "ant/image.hpp"

#include <cmath>

#include "ant/error.hpp"

namespace ant {

LineImage::LineImage(int w, int h, float fill)
    : width(w), height(h), pixels(static_cast<size_t>(w > 0 ? w : 0) * (h > 0 ? h : 0), fill) {}

void LineImage::validate() const {
  require(width > 0 && height > 0, ErrorCode::InvalidArgument, "line image must be non-empty");
  require(pixels.size() == static_cast<size_t>(width) * height, ErrorCode::InvalidArgument,
          "line image pixel count does not match dimensions");
  for (float v : pixels) {
    require(std::isfinite(v) && v >= 0.0f && v <= 1.0f, ErrorCode::InvalidArgument,
            "line image intensity outside [0,1]");
  }
}

RgbImage::RgbImage(int w, int h, Rgb fill) : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3) {
  for (size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill[0];
    pixels[i + 1] = fill[1];
    pixels[i + 2] = fill[2];
  }
}

Rgb RgbImage::at(int x, int y) const {
  const size_t i = (static_cast<size_t>(y) * width + x) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void RgbImage::set(int x, int y, Rgb c) {
  const size_t i = (static_cast<size_t>(y) * width + x) * 3;
  pixels[i] = c[0];
  pixels[i + 1] = c[1];
  pixels[i + 2] = c[2];
}

}  // namespace ant
