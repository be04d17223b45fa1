#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace ant {

// Row-major 2D grid; (x, y) with top-left origin.
template <class T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  T& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using Mask = Grid<uint8_t>;
using LabelMap = Grid<int32_t>;

inline constexpr int32_t kNoSegment = -1;

// Grayscale line drawing, 0 = ink, 1 = paper.
struct LineImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  LineImage() = default;
  LineImage(int w, int h, float fill = 1.0f);

  float at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
  float& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }

  // Throws InvalidArgument unless dimensions are positive and all values lie in [0,1].
  void validate() const;

  friend bool operator==(const LineImage&, const LineImage&) = default;
};

using Rgb = std::array<uint8_t, 3>;

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // interleaved RGB

  RgbImage() = default;
  RgbImage(int w, int h, Rgb fill = {0, 0, 0});

  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb c);

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

}  // namespace ant
