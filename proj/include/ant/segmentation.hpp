#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ant/image.hpp"

namespace ant::seg {

// Pixel bounding box, top-left origin.
struct BBox {
  int x = 0;
  int y = 0;
  int h = 0;
  int w = 0;

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Segment {
  int index = 0;
  BBox bbox;
  int area = 0;
  double cx = 0.0;
  double cy = 0.0;

  friend bool operator==(const Segment&, const Segment&) = default;
};

struct SegmentedFrame {
  LineImage image;
  std::vector<Segment> segments;
  LabelMap label_map;  // segment index per pixel, kNoSegment on ink

  int size() const { return static_cast<int>(segments.size()); }

  friend bool operator==(const SegmentedFrame&, const SegmentedFrame&) = default;
};

// Two stacked channels of crop_height x crop_width, channel-major:
// channel 0 the resampled line image, channel 1 the segment mask.
struct SegmentCrop {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  float line(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
  float mask(int y, int x) const { return data[static_cast<size_t>(height + y) * width + x]; }
};

struct SegParams {
  float binarize_threshold = 0.5f;
  std::vector<int> radii{4, 2, 1};  // strictly descending, ending at 1
  int min_area = 10;
  int crop_margin = 4;
  int crop_height = 32;
  int crop_width = 32;

  void validate() const;

  // Default radii {4, 2, 1} are tuned for 512 px; rescale them to the image.
  static SegParams for_resolution(int width, int height);
};

// Scales a radius schedule defined at 512 px: round(r * max(w,h) / 512) clamped
// to [1, 8], deduplicated so the result stays strictly descending.
std::vector<int> scale_radii(const std::vector<int>& radii_at_512, int width, int height);

Mask binarize(const LineImage& image, float threshold);

// Trapped-ball fill: for each radius r in the schedule, balls of radius r are
// placed wherever they fit on unlabelled paper; balls that can roll into each
// other form one region, so gaps narrower than 2r do not connect regions. A
// final pass floods what the balls could not reach. New pieces touching
// existing regions join the one sharing the longest boundary.
SegmentedFrame extract_segments(const LineImage& image, const SegParams& params);

// Recomputes segments (bbox, area, centroid) from an existing label map.
// Indices are taken verbatim from the map; it must use 0..M-1 contiguously.
SegmentedFrame frame_from_label_map(LineImage image, LabelMap labels);

SegmentCrop make_crop(const SegmentedFrame& frame, int segment_index, const SegParams& params);
std::vector<SegmentCrop> make_crops(const SegmentedFrame& frame, const SegParams& params);

// Crop window used by make_crop, exposed for tests and diagnostics.
BBox crop_window(const SegmentedFrame& frame, int segment_index, int margin);

// (x/width, y/height, h/height, w/width)
std::array<float, 4> positional_features(const Segment& segment, const LineImage& image);

// Outer boundary of a segment as a closed polygon on pixel corners, clockwise
// in image coordinates, starting at the top-left corner of its first pixel in
// raster order. Only the 4-connected piece containing that pixel is traced.
std::vector<std::array<int, 2>> segment_outline(const SegmentedFrame& frame, int segment_index);

// 16-bit PNG convention: 0 = ink, k = segment k-1.
Grid<uint16_t> encode_label_map(const LabelMap& labels);
LabelMap decode_label_map(const Grid<uint16_t>& values);

}  // namespace ant::seg
