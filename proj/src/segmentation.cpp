#include "ant/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <utility>

#include "ant/error.hpp"
#include "ant/kernels.hpp"

namespace ant::seg {
namespace {

constexpr int kDx[4] = {1, -1, 0, 0};
constexpr int kDy[4] = {0, 0, 1, -1};

// 4-connected components of pixels where free != 0. Returns component id per
// pixel (-1 elsewhere) and the number of components.
int connected_components(const Mask& free, Grid<int32_t>& component) {
  const int w = free.width;
  const int h = free.height;
  component = Grid<int32_t>(w, h, -1);
  std::vector<int> stack;
  int count = 0;
  for (int start = 0; start < w * h; ++start) {
    if (!free.data[start] || component.data[start] >= 0) continue;
    component.data[start] = count;
    stack.push_back(start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int px = p % w;
      const int py = p / w;
      for (int d = 0; d < 4; ++d) {
        const int nx = px + kDx[d];
        const int ny = py + kDy[d];
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const int q = ny * w + nx;
        if (free.data[q] && component.data[q] < 0) {
          component.data[q] = count;
          stack.push_back(q);
        }
      }
    }
    ++count;
  }
  return count;
}

// Extends each component of ball centres to the unlabelled paper pixels its
// balls cover (within `radius` of a centre); first come, first served.
void grow_balls(Grid<int32_t>& component, const Mask& ink, const LabelMap& labels, int radius) {
  const int w = component.width;
  const int h = component.height;
  const long r2 = static_cast<long>(radius) * radius;
  std::vector<int> source(component.size(), -1);
  std::deque<int> queue;
  for (int p = 0; p < w * h; ++p) {
    if (component.data[p] >= 0) {
      source[p] = p;
      queue.push_back(p);
    }
  }
  while (!queue.empty()) {
    const int p = queue.front();
    queue.pop_front();
    const int sx = source[p] % w;
    const int sy = source[p] / w;
    const int px = p % w;
    const int py = p / w;
    for (int d = 0; d < 4; ++d) {
      const int nx = px + kDx[d];
      const int ny = py + kDy[d];
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const int q = ny * w + nx;
      if (component.data[q] >= 0 || ink.data[q] || labels.data[q] != kNoSegment) continue;
      const long dx = nx - sx, dy = ny - sy;
      if (dx * dx + dy * dy > r2) continue;
      component.data[q] = component.data[p];
      source[q] = source[p];
      queue.push_back(q);
    }
  }
}

// Assigns every ink pixel the region of its nearest labelled pixel (BFS over
// ink), so that regions separated by a stroke become neighbours.
Grid<int32_t> ink_voronoi(const LabelMap& labels) {
  const int w = labels.width;
  const int h = labels.height;
  Grid<int32_t> owner = labels;
  std::deque<int> queue;
  for (int p = 0; p < w * h; ++p) {
    if (owner.data[p] != kNoSegment) queue.push_back(p);
  }
  while (!queue.empty()) {
    const int p = queue.front();
    queue.pop_front();
    const int px = p % w;
    const int py = p / w;
    for (int d = 0; d < 4; ++d) {
      const int nx = px + kDx[d];
      const int ny = py + kDy[d];
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const int q = ny * w + nx;
      if (owner.data[q] == kNoSegment) {
        owner.data[q] = owner.data[p];
        queue.push_back(q);
      }
    }
  }
  return owner;
}

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

// Merges regions smaller than min_area into the neighbour sharing the longest
// boundary (measured on the ink Voronoi partition). Smallest regions first.
void merge_small_regions(LabelMap& labels, int region_count, int min_area) {
  if (region_count <= 1 || min_area <= 1) return;
  const Grid<int32_t> owner = ink_voronoi(labels);
  const int w = labels.width;
  const int h = labels.height;

  std::vector<std::map<int, long>> boundary(region_count);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int a = owner.at(x, y);
      if (x + 1 < w) {
        const int b = owner.at(x + 1, y);
        if (a != b && a >= 0 && b >= 0) {
          ++boundary[a][b];
          ++boundary[b][a];
        }
      }
      if (y + 1 < h) {
        const int b = owner.at(x, y + 1);
        if (a != b && a >= 0 && b >= 0) {
          ++boundary[a][b];
          ++boundary[b][a];
        }
      }
    }
  }
  std::vector<long> area(region_count, 0);
  for (int32_t v : labels.data) {
    if (v != kNoSegment) ++area[v];
  }
  std::vector<int> parent(region_count);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<uint8_t> alive(region_count, 1);

  while (true) {
    int victim = -1;
    for (int r = 0; r < region_count; ++r) {
      if (!alive[r] || area[r] >= min_area || boundary[r].empty()) continue;
      if (victim < 0 || area[r] < area[victim]) victim = r;
    }
    if (victim < 0) break;
    int target = -1;
    long best = -1;
    for (const auto& [other, length] : boundary[victim]) {
      if (length > best) {
        best = length;
        target = other;
      }
    }
    // fold victim into target
    for (const auto& [other, length] : boundary[victim]) {
      boundary[other].erase(victim);
      if (other == target) continue;
      boundary[target][other] += length;
      boundary[other][target] += length;
    }
    boundary[victim].clear();
    area[target] += area[victim];
    area[victim] = 0;
    alive[victim] = 0;
    parent[victim] = target;
  }
  for (int32_t& v : labels.data) {
    if (v != kNoSegment) v = find_root(parent, v);
  }
}

// Compacts region ids, computes statistics and orders segments by
// (bbox y, bbox x, discovery index).
SegmentedFrame finalize(LineImage image, LabelMap labels) {
  const int w = labels.width;
  const int h = labels.height;
  int max_id = -1;
  for (int32_t v : labels.data) max_id = std::max(max_id, v);
  std::vector<int> remap(max_id + 1, -1);
  int count = 0;
  for (int32_t v : labels.data) {
    if (v != kNoSegment && remap[v] < 0) remap[v] = count++;
  }
  struct Stats {
    int x0, y0, x1, y1;
    long area;
    double sx, sy;
  };
  std::vector<Stats> stats(count, Stats{w, h, -1, -1, 0, 0.0, 0.0});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int32_t& v = labels.at(x, y);
      if (v == kNoSegment) continue;
      v = remap[v];
      Stats& s = stats[v];
      s.x0 = std::min(s.x0, x);
      s.y0 = std::min(s.y0, y);
      s.x1 = std::max(s.x1, x);
      s.y1 = std::max(s.y1, y);
      ++s.area;
      s.sx += x;
      s.sy += y;
    }
  }
  std::vector<Segment> segments(count);
  for (int i = 0; i < count; ++i) {
    const Stats& s = stats[i];
    Segment& seg = segments[i];
    seg.index = i;
    seg.bbox = BBox{s.x0, s.y0, s.y1 - s.y0 + 1, s.x1 - s.x0 + 1};
    seg.area = static_cast<int>(s.area);
    // pixel centres sit at +0.5
    seg.cx = s.sx / static_cast<double>(s.area) + 0.5;
    seg.cy = s.sy / static_cast<double>(s.area) + 0.5;
  }
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const BBox& ba = segments[a].bbox;
    const BBox& bb = segments[b].bbox;
    if (ba.y != bb.y) return ba.y < bb.y;
    if (ba.x != bb.x) return ba.x < bb.x;
    return a < b;
  });
  std::vector<int> rank(count);
  SegmentedFrame frame;
  frame.segments.resize(count);
  for (int r = 0; r < count; ++r) {
    rank[order[r]] = r;
    frame.segments[r] = segments[order[r]];
    frame.segments[r].index = r;
  }
  for (int32_t& v : labels.data) {
    if (v != kNoSegment) v = rank[v];
  }
  frame.image = std::move(image);
  frame.label_map = std::move(labels);
  return frame;
}

// Per-axis area-averaging weights: output cell o covers source interval
// [o*scale, (o+1)*scale) relative to the window start.
std::vector<std::vector<std::pair<int, double>>> area_weights(int source, int target) {
  std::vector<std::vector<std::pair<int, double>>> weights(target);
  const double scale = static_cast<double>(source) / target;
  for (int o = 0; o < target; ++o) {
    const double lo = o * scale;
    const double hi = (o + 1) * scale;
    for (int s = static_cast<int>(std::floor(lo)); s < static_cast<int>(std::ceil(hi)) && s < source; ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (overlap > 1e-12) weights[o].emplace_back(s, overlap / scale);
    }
  }
  return weights;
}

}  // namespace

void SegParams::validate() const {
  require(binarize_threshold > 0.0f && binarize_threshold < 1.0f, ErrorCode::InvalidArgument,
          "binarize threshold must lie in (0,1)");
  require(!radii.empty() && radii.back() == 1, ErrorCode::InvalidArgument, "radii schedule must end at 1");
  for (size_t i = 1; i < radii.size(); ++i) {
    require(radii[i] < radii[i - 1], ErrorCode::InvalidArgument, "radii schedule must be strictly descending");
  }
  require(min_area >= 1, ErrorCode::InvalidArgument, "min_area must be >= 1");
  require(crop_margin >= 0, ErrorCode::InvalidArgument, "crop margin must be >= 0");
  require(crop_height > 0 && crop_width > 0, ErrorCode::InvalidArgument, "crop size must be positive");
}

std::vector<int> scale_radii(const std::vector<int>& radii_at_512, int width, int height) {
  const double factor = std::max(width, height) / 512.0;
  std::vector<int> out;
  for (int r : radii_at_512) {
    const int scaled = std::clamp(static_cast<int>(std::lround(r * factor)), 1, 8);
    if (out.empty() || scaled < out.back()) out.push_back(scaled);
  }
  if (out.empty() || out.back() != 1) out.push_back(1);
  return out;
}

SegParams SegParams::for_resolution(int width, int height) {
  SegParams params;
  params.radii = scale_radii({4, 2, 1}, width, height);
  return params;
}

Mask binarize(const LineImage& image, float threshold) {
  Mask ink(image.width, image.height);
  for (size_t i = 0; i < image.pixels.size(); ++i) ink.data[i] = image.pixels[i] < threshold ? 1 : 0;
  return ink;
}

Mask ball_centers(const Grid<float>& to_ink, const LabelMap& labels, int radius) {
  const float r2 = static_cast<float>(radius) * radius;
  Mask centers(labels.width, labels.height);
  for (size_t i = 0; i < centers.size(); ++i) {
    centers.data[i] = (to_ink.data[i] > r2 && labels.data[i] == kNoSegment) ? 1 : 0;
  }
  return centers;
}

SegmentedFrame extract_segments(const LineImage& image, const SegParams& params) {
  image.validate();
  params.validate();
  const Mask ink = binarize(image, params.binarize_threshold);
  require(std::any_of(ink.data.begin(), ink.data.end(), [](uint8_t v) { return v == 0; }), ErrorCode::EmptyFrame,
          "every pixel is ink; no segments");

  const int w = image.width;
  const int h = image.height;
  LabelMap labels(w, h, kNoSegment);
  int region_count = 0;

  std::vector<int> schedule = params.radii;
  schedule.push_back(0);  // final pass over the raw ink mask
  Grid<float> to_ink;
  kernels::squared_distance_transform(ink, to_ink);
  Grid<int32_t> component;
  for (int radius : schedule) {
    int count = 0;
    if (radius > 0) {
      count = connected_components(ball_centers(to_ink, labels, radius), component);
      grow_balls(component, ink, labels, radius);
    } else {
      Mask free(w, h);
      for (size_t i = 0; i < free.size(); ++i) free.data[i] = (!ink.data[i] && labels.data[i] == kNoSegment) ? 1 : 0;
      count = connected_components(free, component);
    }
    if (count == 0) continue;
    // boundary length between each new component and each existing region
    std::vector<std::map<int, long>> contact(count);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int c = component.at(x, y);
        if (c < 0) continue;
        for (int d = 0; d < 4; ++d) {
          const int nx = x + kDx[d];
          const int ny = y + kDy[d];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const int32_t region = labels.at(nx, ny);
          if (region != kNoSegment) ++contact[c][region];
        }
      }
    }
    std::vector<int32_t> assign(count);
    for (int c = 0; c < count; ++c) {
      if (contact[c].empty()) {
        assign[c] = region_count++;
        continue;
      }
      int best_region = -1;
      long best = -1;
      for (const auto& [region, length] : contact[c]) {
        if (length > best) {
          best = length;
          best_region = region;
        }
      }
      assign[c] = best_region;
    }
    for (size_t i = 0; i < labels.size(); ++i) {
      if (component.data[i] >= 0) labels.data[i] = assign[component.data[i]];
    }
  }
  merge_small_regions(labels, region_count, params.min_area);
  return finalize(image, std::move(labels));
}

SegmentedFrame frame_from_label_map(LineImage image, LabelMap labels) {
  require(image.width == labels.width && image.height == labels.height, ErrorCode::ShapeMismatch,
          "label map and image dimensions differ");
  const int w = labels.width;
  const int h = labels.height;
  int max_id = -1;
  for (int32_t v : labels.data) max_id = std::max(max_id, v);
  require(max_id >= 0, ErrorCode::EmptyFrame, "label map contains no segments");
  std::vector<Segment> segments(max_id + 1);
  std::vector<int> x0(max_id + 1, w), y0(max_id + 1, h), x1(max_id + 1, -1), y1(max_id + 1, -1);
  std::vector<double> sx(max_id + 1, 0.0), sy(max_id + 1, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int v = labels.at(x, y);
      if (v == kNoSegment) continue;
      require(v >= 0, ErrorCode::InvalidArgument, "negative segment index in label map");
      x0[v] = std::min(x0[v], x);
      y0[v] = std::min(y0[v], y);
      x1[v] = std::max(x1[v], x);
      y1[v] = std::max(y1[v], y);
      ++segments[v].area;
      sx[v] += x;
      sy[v] += y;
    }
  }
  for (int i = 0; i <= max_id; ++i) {
    require(segments[i].area > 0, ErrorCode::InvalidArgument, "label map indices are not contiguous");
    segments[i].index = i;
    segments[i].bbox = BBox{x0[i], y0[i], y1[i] - y0[i] + 1, x1[i] - x0[i] + 1};
    segments[i].cx = sx[i] / segments[i].area + 0.5;
    segments[i].cy = sy[i] / segments[i].area + 0.5;
  }
  SegmentedFrame frame;
  frame.image = std::move(image);
  frame.label_map = std::move(labels);
  frame.segments = std::move(segments);
  return frame;
}

BBox crop_window(const SegmentedFrame& frame, int segment_index, int margin) {
  const BBox& b = frame.segments.at(segment_index).bbox;
  const int side = std::max(b.h, b.w) + 2 * margin;
  int x0 = b.x - (std::max(b.h, b.w) - b.w) / 2 - margin;
  int y0 = b.y - (std::max(b.h, b.w) - b.h) / 2 - margin;
  int x1 = x0 + side;
  int y1 = y0 + side;
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, frame.image.width);
  y1 = std::min(y1, frame.image.height);
  return BBox{x0, y0, y1 - y0, x1 - x0};
}

SegmentCrop make_crop(const SegmentedFrame& frame, int segment_index, const SegParams& params) {
  require(segment_index >= 0 && segment_index < frame.size(), ErrorCode::InvalidArgument,
          "segment index out of range");
  const BBox win = crop_window(frame, segment_index, params.crop_margin);
  const int ch = params.crop_height;
  const int cw = params.crop_width;
  SegmentCrop crop{ch, cw, std::vector<float>(static_cast<size_t>(2) * ch * cw, 0.0f)};

  const auto wy = area_weights(win.h, ch);
  const auto wx = area_weights(win.w, cw);
  for (int oy = 0; oy < ch; ++oy) {
    for (int ox = 0; ox < cw; ++ox) {
      double acc = 0.0;
      for (const auto& [sy, fy] : wy[oy]) {
        for (const auto& [sx, fx] : wx[ox]) acc += fy * fx * frame.image.at(win.x + sx, win.y + sy);
      }
      crop.data[static_cast<size_t>(oy) * cw + ox] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
    }
  }

  bool any = false;
  float* mask = crop.data.data() + static_cast<size_t>(ch) * cw;
  for (int oy = 0; oy < ch; ++oy) {
    const int sy = win.y + std::min(win.h - 1, static_cast<int>((oy + 0.5) * win.h / ch));
    for (int ox = 0; ox < cw; ++ox) {
      const int sx = win.x + std::min(win.w - 1, static_cast<int>((ox + 0.5) * win.w / cw));
      const bool on = frame.label_map.at(sx, sy) == segment_index;
      mask[static_cast<size_t>(oy) * cw + ox] = on ? 1.0f : 0.0f;
      any = any || on;
    }
  }
  if (!any) {
    // thin segments can fall between nearest-neighbour samples; mark the cell
    // holding the pixel closest to the centroid
    const Segment& seg = frame.segments[segment_index];
    int best_x = -1, best_y = -1;
    double best = 0.0;
    const BBox& b = seg.bbox;
    for (int y = b.y; y < b.y + b.h; ++y) {
      for (int x = b.x; x < b.x + b.w; ++x) {
        if (frame.label_map.at(x, y) != segment_index) continue;
        const double d = (x + 0.5 - seg.cx) * (x + 0.5 - seg.cx) + (y + 0.5 - seg.cy) * (y + 0.5 - seg.cy);
        if (best_x < 0 || d < best) {
          best = d;
          best_x = x;
          best_y = y;
        }
      }
    }
    const int oy = std::min(ch - 1, static_cast<int>((best_y - win.y + 0.5) * ch / win.h));
    const int ox = std::min(cw - 1, static_cast<int>((best_x - win.x + 0.5) * cw / win.w));
    mask[static_cast<size_t>(oy) * cw + ox] = 1.0f;
  }
  return crop;
}

std::vector<SegmentCrop> make_crops(const SegmentedFrame& frame, const SegParams& params) {
  std::vector<SegmentCrop> crops(frame.segments.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < frame.size(); ++i) crops[i] = make_crop(frame, i, params);
  return crops;
}

std::array<float, 4> positional_features(const Segment& segment, const LineImage& image) {
  const auto w = static_cast<float>(image.width);
  const auto h = static_cast<float>(image.height);
  return {segment.bbox.x / w, segment.bbox.y / h, segment.bbox.h / h, segment.bbox.w / w};
}

std::vector<std::array<int, 2>> segment_outline(const SegmentedFrame& frame, int segment_index) {
  require(segment_index >= 0 && segment_index < frame.size(), ErrorCode::InvalidArgument, "segment index out of range");
  const LabelMap& m = frame.label_map;
  const auto inside = [&](int x, int y) { return m.contains(x, y) && m.at(x, y) == segment_index; };
  const Segment& s = frame.segments[segment_index];
  int x0 = -1, y0 = -1;
  for (int y = s.bbox.y; y < s.bbox.y + s.bbox.h && x0 < 0; ++y) {
    for (int x = s.bbox.x; x < s.bbox.x + s.bbox.w; ++x) {
      if (inside(x, y)) {
        x0 = x;
        y0 = y;
        break;
      }
    }
  }
  require(x0 >= 0, ErrorCode::InvalidArgument, "segment has no pixels");
  // headings E, S, W, N; the region stays on the right-hand side
  constexpr int hx[4] = {1, 0, -1, 0};
  constexpr int hy[4] = {0, 1, 0, -1};
  // pixel ahead-right / ahead-left of a corner for each heading, as offsets
  constexpr int rx[4] = {0, -1, -1, 0};
  constexpr int ry[4] = {0, 0, -1, -1};
  constexpr int lx[4] = {0, 0, -1, -1};
  constexpr int ly[4] = {-1, 0, 0, -1};
  std::vector<std::array<int, 2>> poly{{x0, y0}};
  int x = x0, y = y0, h = 0;
  while (true) {
    x += hx[h];
    y += hy[h];
    const int before = h;
    if (!inside(x + rx[h], y + ry[h])) {
      h = (h + 1) % 4;
    } else if (inside(x + lx[h], y + ly[h])) {
      h = (h + 3) % 4;
    }
    if (x == x0 && y == y0 && h == 0) break;
    if (h != before) poly.push_back({x, y});
  }
  return poly;
}

Grid<uint16_t> encode_label_map(const LabelMap& labels) {
  Grid<uint16_t> out(labels.width, labels.height, 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    const int32_t v = labels.data[i];
    if (v == kNoSegment) continue;
    require(v >= 0 && v < 65535, ErrorCode::InvalidArgument, "segment index does not fit a 16-bit label map");
    out.data[i] = static_cast<uint16_t>(v + 1);
  }
  return out;
}

LabelMap decode_label_map(const Grid<uint16_t>& values) {
  LabelMap out(values.width, values.height, kNoSegment);
  for (size_t i = 0; i < values.size(); ++i) {
    if (values.data[i] != 0) out.data[i] = static_cast<int32_t>(values.data[i]) - 1;
  }
  return out;
}

}  // namespace ant::seg
