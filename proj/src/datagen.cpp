#include "ant/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ant/error.hpp"

namespace ant::datagen {
namespace {

using Point = std::pair<double, double>;

double uniform(Rng& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::vector<Point> local_outline(const ShapeSpec& s) {
  std::vector<Point> pts;
  constexpr double kPi = std::numbers::pi;
  switch (s.kind) {
    case ShapeKind::Ellipse: {
      constexpr int n = 48;
      for (int i = 0; i < n; ++i) {
        const double t = 2.0 * kPi * i / n;
        pts.emplace_back(s.half_x * std::cos(t), s.half_y * std::sin(t));
      }
      break;
    }
    case ShapeKind::Polygon: {
      const int n = std::max(3, s.sides);
      for (int i = 0; i < n; ++i) {
        const double t = 2.0 * kPi * i / n + kPi / n;
        pts.emplace_back(s.half_x * std::cos(t), s.half_y * std::sin(t));
      }
      break;
    }
    case ShapeKind::Capsule: {
      constexpr int n = 12;
      const double r = s.half_y;
      const double l = std::max(0.0, s.half_x - r);
      for (int i = 0; i <= n; ++i) {
        const double t = -kPi / 2 + kPi * i / n;
        pts.emplace_back(l + r * std::cos(t), r * std::sin(t));
      }
      for (int i = 0; i <= n; ++i) {
        const double t = kPi / 2 + kPi * i / n;
        pts.emplace_back(-l + r * std::cos(t), r * std::sin(t));
      }
      break;
    }
  }
  return pts;
}

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

double distance_to_outline_sq(const std::vector<Point>& poly, double x, double y) {
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [ax, ay] = poly[j];
    const auto [bx, by] = poly[i];
    const double dx = bx - ax;
    const double dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((x - ax) * dx + (y - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double px = ax + t * dx - x;
    const double py = ay + t * dy - y;
    best = std::min(best, px * px + py * py);
  }
  return best;
}

// Bounded random walk with momentum; every step stays within +-step_bound.
struct Walker {
  double value = 0.0;
  double velocity = 0.0;

  void step(Rng& rng, double step_bound, double lo, double hi) {
    if (step_bound <= 0.0) return;
    velocity = std::clamp(0.75 * velocity + uniform(rng, -0.5, 0.5) * step_bound, -step_bound, step_bound);
    value += velocity;
    if (value > hi) {
      value = hi - (value - hi);
      velocity = -velocity;
    }
    if (value < lo) {
      value = lo + (lo - value);
      velocity = -velocity;
    }
    value = std::clamp(value, lo, hi);
  }
};

ShapeSpec capsule(double half_len, double radius, int parent, double jx, double jy, double angle, double limit,
                  int z) {
  ShapeSpec s;
  s.kind = ShapeKind::Capsule;
  s.half_x = half_len;
  s.half_y = radius;
  s.parent = parent;
  s.joint_x = jx;
  s.joint_y = jy;
  s.center_x = half_len - radius * 0.5;
  s.base_angle = angle;
  s.angle_limit = limit;
  s.z = z;
  return s;
}

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Ellipse: return "ellipse";
    case ShapeKind::Polygon: return "polygon";
    case ShapeKind::Capsule: return "capsule";
  }
  return "ellipse";
}

ShapeKind shape_kind_from_string(const std::string& name) {
  if (name == "ellipse") return ShapeKind::Ellipse;
  if (name == "polygon") return ShapeKind::Polygon;
  if (name == "capsule") return ShapeKind::Capsule;
  fail(ErrorCode::InvalidArgument, "unknown shape kind '" + name + "'");
}

void SceneSpec::validate() const {
  require(frames >= 2, ErrorCode::InvalidArgument, "scene needs at least 2 frames");
  require(stroke_width >= 1, ErrorCode::InvalidArgument, "stroke width must be >= 1");
  require(palette_size >= 2, ErrorCode::InvalidArgument, "palette size must be >= 2");
  require(resolution >= 8, ErrorCode::InvalidArgument, "resolution too small");
  require(occluders >= 0, ErrorCode::InvalidArgument, "negative occluder count");
  for (size_t i = 0; i < shapes.size(); ++i) {
    const int p = shapes[i].parent;
    require(p < static_cast<int>(i), ErrorCode::InvalidArgument, "shape parents must precede their children");
    require(shapes[i].half_x > 0 && shapes[i].half_y > 0, ErrorCode::InvalidArgument, "shape sizes must be positive");
  }
}

void AugmentConfig::validate() const {
  require(max_frame_skip >= 1, ErrorCode::InvalidArgument, "max frame skip must be >= 1");
  require(crop_scale_min > 0.0 && crop_scale_min <= 1.0, ErrorCode::InvalidArgument, "crop scale must lie in (0,1]");
  require(jitter_px >= 0.0 && shear >= 0.0, ErrorCode::InvalidArgument, "negative augmentation range");
  require(flip_probability >= 0.0 && flip_probability <= 1.0, ErrorCode::InvalidArgument, "flip probability outside [0,1]");
}

SceneSpec character_scene(uint64_t seed, const CharacterOptions& o) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double u = o.resolution / 256.0;
  SceneSpec spec;
  spec.seed = seed;
  spec.resolution = o.resolution;
  spec.frames = o.frames;
  spec.palette_size = o.palette_size;
  spec.stroke_width = std::max(1, static_cast<int>(std::lround(o.stroke_width * u)));
  spec.occluders = o.occluders;
  spec.motion = o.motion;
  spec.motion.translation_px *= u;

  auto& shapes = spec.shapes;
  // torso
  ShapeSpec torso;
  torso.kind = uniform(rng, 0, 1) < 0.5 ? ShapeKind::Ellipse : ShapeKind::Polygon;
  torso.sides = 6 + static_cast<int>(uniform(rng, 0, 3));
  torso.half_x = uniform(rng, 20, 28) * u;
  torso.half_y = uniform(rng, 28, 38) * u;
  torso.joint_x = o.resolution / 2.0 + uniform(rng, -10, 10) * u;
  torso.joint_y = o.resolution / 2.0 + uniform(rng, 0, 12) * u;
  torso.angle_limit = 0.25;
  torso.z = 10;
  shapes.push_back(torso);
  const int torso_id = 0;

  // head
  ShapeSpec head;
  head.kind = uniform(rng, 0, 1) < 0.7 ? ShapeKind::Ellipse : ShapeKind::Polygon;
  head.sides = 8;
  const double head_r = uniform(rng, 16, 21) * u;
  head.half_x = head_r * uniform(rng, 0.9, 1.15);
  head.half_y = head_r;
  head.parent = torso_id;
  head.joint_y = -torso.half_y + 2 * u;
  head.center_y = -head_r + 3 * u;
  head.angle_limit = 0.35;
  head.z = 11;
  shapes.push_back(head);
  const int head_id = 1;

  // identical eyes (and pupils)
  const double eye_r = uniform(rng, 5.5, 7.0) * u;
  const double eye_dx = head.half_x * 0.42;
  for (int side : {-1, 1}) {
    ShapeSpec eye;
    eye.kind = ShapeKind::Ellipse;
    eye.half_x = eye_r;
    eye.half_y = eye_r * 1.15;
    eye.parent = head_id;
    eye.joint_x = side * eye_dx;
    eye.joint_y = head.center_y - 2 * u;
    eye.z = 12;
    shapes.push_back(eye);
    if (o.pupils) {
      ShapeSpec pupil = eye;
      pupil.parent = static_cast<int>(shapes.size()) - 1;
      pupil.joint_x = 0;
      pupil.joint_y = 0;
      pupil.half_x = eye_r * 0.5;
      pupil.half_y = eye_r * 0.55;
      pupil.z = 13;
      shapes.push_back(pupil);
    }
  }

  // limbs: one arm in front of the torso, one behind; legs behind
  const double arm_len = uniform(rng, 13, 18) * u;
  const double arm_r = uniform(rng, 5.0, 6.5) * u;
  const double leg_len = uniform(rng, 14, 19) * u;
  const double leg_r = uniform(rng, 6.0, 7.5) * u;
  const bool hands = o.limb_links >= 2;
  for (int side : {-1, 1}) {
    const int z0 = side < 0 ? 20 : 2;
    int parent = torso_id;
    double jx = side * torso.half_x * 0.85;
    double jy = -torso.half_y * 0.45;
    double angle = side < 0 ? std::numbers::pi - uniform(rng, 0.7, 1.1) : uniform(rng, 0.7, 1.1);
    for (int link = 0; link < o.limb_links; ++link) {
      shapes.push_back(capsule(arm_len, arm_r, parent, jx, jy, angle, link == 0 ? 0.9 : 0.8, z0 + link));
      parent = static_cast<int>(shapes.size()) - 1;
      jx = 2 * arm_len - arm_r;
      jy = 0;
      angle = side * uniform(rng, 0.1, 0.5);
    }
    if (hands) {
      ShapeSpec hand;
      hand.kind = ShapeKind::Polygon;
      hand.sides = 5;
      hand.half_x = arm_r * 1.5;
      hand.half_y = arm_r * 1.3;
      hand.parent = parent;
      hand.joint_x = 2 * arm_len - arm_r;
      hand.center_x = arm_r * 1.1;
      hand.angle_limit = 0.5;
      hand.z = z0 + o.limb_links;
      shapes.push_back(hand);
    }
  }
  for (int side : {-1, 1}) {
    int parent = torso_id;
    double jx = side * torso.half_x * 0.45;
    double jy = torso.half_y * 0.8;
    double angle = std::numbers::pi / 2 - side * uniform(rng, 0.1, 0.35);
    for (int link = 0; link < o.limb_links; ++link) {
      shapes.push_back(capsule(leg_len, leg_r, parent, jx, jy, angle, link == 0 ? 0.6 : 0.6, 4 + link));
      parent = static_cast<int>(shapes.size()) - 1;
      jx = 2 * leg_len - leg_r;
      jy = 0;
      angle = -side * uniform(rng, 0.0, 0.3);
    }
  }

  // identical buttons down the torso front
  const double button_r = uniform(rng, 4.5, 5.5) * u;
  for (int b = 0; b < o.buttons; ++b) {
    ShapeSpec button;
    button.kind = ShapeKind::Ellipse;
    button.half_x = button_r;
    button.half_y = button_r;
    button.parent = torso_id;
    button.joint_x = torso.half_x * 0.15;
    button.joint_y = -torso.half_y * 0.35 + b * (2.6 * button_r + 2 * u);
    button.z = 14;
    shapes.push_back(button);
  }
  return spec;
}

CharacterOptions ten_shape_options(int resolution, int frames, int palette_size) {
  CharacterOptions o;
  o.resolution = resolution;
  o.frames = frames;
  o.palette_size = palette_size;
  o.limb_links = 1;
  o.buttons = 2;
  o.pupils = false;
  o.occluders = 0;
  return o;
}

SceneSpec with_occluders(const SceneSpec& spec) {
  SceneSpec out = spec;
  out.occluders = 0;
  Rng rng(spec.seed ^ 0x51ed270b27a1c3f5ULL);
  const double r = spec.resolution;
  for (int k = 0; k < spec.occluders; ++k) {
    ShapeSpec occ;
    occ.kind = uniform(rng, 0, 1) < 0.5 ? ShapeKind::Polygon : ShapeKind::Ellipse;
    occ.sides = 4;
    occ.half_x = uniform(rng, 0.07, 0.12) * r;
    occ.half_y = uniform(rng, 0.18, 0.3) * r;
    occ.joint_x = uniform(rng, 0.0, 1.0) < 0.5 ? 0.05 * r : 0.95 * r;
    occ.joint_y = uniform(rng, 0.35, 0.65) * r;
    occ.base_angle = uniform(rng, -0.3, 0.3);
    occ.z = 1000 + k;
    out.shapes.push_back(occ);
  }
  return out;
}

std::vector<Pose> simulate_motion(const SceneSpec& spec) {
  spec.validate();
  const SceneSpec full = with_occluders(spec);
  const int n = static_cast<int>(full.shapes.size());
  const int first_occluder = static_cast<int>(spec.shapes.size());
  Rng rng(spec.seed);
  const double res = spec.resolution;

  std::vector<Walker> angle(n), root_x(n), root_y(n);
  for (int i = 0; i < n; ++i) angle[i].value = full.shapes[i].base_angle;
  Walker scale, shear;
  // occluders sweep across the frame at a constant speed, bouncing at the edges
  std::vector<double> sweep(n, 0.0);
  for (int i = first_occluder; i < n; ++i) {
    const double dir = full.shapes[i].joint_x < res / 2 ? 1.0 : -1.0;
    sweep[i] = dir * res * uniform(rng, 0.8, 1.4) / std::max(1, spec.frames - 1);
  }

  std::vector<Pose> poses;
  poses.reserve(spec.frames);
  std::vector<double> occ_offset(n, 0.0);
  for (int t = 0; t < spec.frames; ++t) {
    if (t > 0) {
      for (int i = 0; i < n; ++i) {
        const ShapeSpec& s = full.shapes[i];
        if (i >= first_occluder) {
          occ_offset[i] += sweep[i];
          const double x = s.joint_x + occ_offset[i];
          if (x < 0.0 || x > res) {
            sweep[i] = -sweep[i];
            occ_offset[i] += 2 * sweep[i];
          }
          continue;
        }
        angle[i].step(rng, spec.motion.rotation_rad, s.base_angle - s.angle_limit, s.base_angle + s.angle_limit);
        if (s.parent < 0) {
          const double lim = 0.18 * res;
          root_x[i].step(rng, spec.motion.translation_px, -lim, lim);
          root_y[i].step(rng, spec.motion.translation_px, -lim * 0.6, lim * 0.6);
        }
      }
      scale.step(rng, spec.motion.scale * 0.25, -spec.motion.scale, spec.motion.scale);
      shear.step(rng, spec.motion.shear * 0.25, -spec.motion.shear, spec.motion.shear);
    }
    Pose pose;
    pose.angles.resize(n);
    pose.roots.assign(n, {0.0, 0.0});
    for (int i = 0; i < n; ++i) {
      pose.angles[i] = angle[i].value;
      if (i >= first_occluder) {
        pose.roots[i] = {occ_offset[i], 0.0};
      } else if (full.shapes[i].parent < 0) {
        pose.roots[i] = {root_x[i].value, root_y[i].value};
      }
    }
    pose.scale = 1.0 + scale.value;
    pose.shear = shear.value;
    poses.push_back(std::move(pose));
  }
  return poses;
}

RenderedFrame render_pose(const SceneSpec& spec, const Pose& pose) {
  const int res = spec.resolution;
  const int n = static_cast<int>(spec.shapes.size());
  require(static_cast<int>(pose.angles.size()) == n, ErrorCode::ShapeMismatch, "pose does not match scene");

  // world frames: origin + rotation per shape
  std::vector<double> ox(n), oy(n), rot(n);
  for (int i = 0; i < n; ++i) {
    const ShapeSpec& s = spec.shapes[i];
    if (s.parent < 0) {
      ox[i] = s.joint_x + pose.roots[i].first;
      oy[i] = s.joint_y + pose.roots[i].second;
      rot[i] = pose.angles[i];
    } else {
      const int p = s.parent;
      const double c = std::cos(rot[p]);
      const double sn = std::sin(rot[p]);
      ox[i] = ox[p] + c * s.joint_x - sn * s.joint_y;
      oy[i] = oy[p] + sn * s.joint_x + c * s.joint_y;
      rot[i] = rot[p] + pose.angles[i];
    }
  }
  const double center = res / 2.0;
  auto global = [&](double x, double y) -> Point {
    const double dx = x - center;
    const double dy = y - center;
    return {center + pose.scale * (dx + pose.shear * dy), center + pose.scale * dy};
  };

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return spec.shapes[a].z < spec.shapes[b].z; });

  std::vector<uint8_t> ink(static_cast<size_t>(res) * res, 0);
  std::vector<uint16_t> ids(static_cast<size_t>(res) * res, kBackgroundShape);
  const double half_stroke = spec.stroke_width / 2.0;
  const double hs2 = half_stroke * half_stroke;
  for (int i : order) {
    const ShapeSpec& s = spec.shapes[i];
    std::vector<Point> poly = local_outline(s);
    const double c = std::cos(rot[i]);
    const double sn = std::sin(rot[i]);
    double x0 = 1e18, y0 = 1e18, x1 = -1e18, y1 = -1e18;
    for (auto& [px, py] : poly) {
      const double lx = px + s.center_x;
      const double ly = py + s.center_y;
      const Point g = global(ox[i] + c * lx - sn * ly, oy[i] + sn * lx + c * ly);
      px = g.first;
      py = g.second;
      x0 = std::min(x0, px);
      y0 = std::min(y0, py);
      x1 = std::max(x1, px);
      y1 = std::max(y1, py);
    }
    const int bx0 = std::max(0, static_cast<int>(std::floor(x0 - half_stroke - 1)));
    const int by0 = std::max(0, static_cast<int>(std::floor(y0 - half_stroke - 1)));
    const int bx1 = std::min(res - 1, static_cast<int>(std::ceil(x1 + half_stroke + 1)));
    const int by1 = std::min(res - 1, static_cast<int>(std::ceil(y1 + half_stroke + 1)));
    const auto id = static_cast<uint16_t>(i + 1);
    for (int y = by0; y <= by1; ++y) {
      for (int x = bx0; x <= bx1; ++x) {
        const double px = x + 0.5;
        const double py = y + 0.5;
        const size_t k = static_cast<size_t>(y) * res + x;
        if (inside_polygon(poly, px, py)) {
          ids[k] = id;
          ink[k] = 0;
        }
        if (distance_to_outline_sq(poly, px, py) <= hs2) ink[k] = 1;
      }
    }
  }
  RenderedFrame frame;
  frame.image = LineImage(res, res, 1.0f);
  frame.shapes = ShapeRaster(res, res, 0);
  for (size_t k = 0; k < ink.size(); ++k) {
    if (ink[k]) {
      frame.image.pixels[k] = 0.0f;
      frame.shapes.data[k] = 0;
    } else {
      frame.shapes.data[k] = static_cast<uint16_t>(ids[k] + 1);
    }
  }
  return frame;
}

std::vector<RenderedFrame> render_sequence(const SceneSpec& spec) {
  const std::vector<Pose> poses = simulate_motion(spec);
  const SceneSpec full = with_occluders(spec);
  std::vector<RenderedFrame> frames(poses.size());
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < static_cast<int>(poses.size()); ++t) frames[t] = render_pose(full, poses[t]);
  return frames;
}

std::vector<int> majority_labels(const seg::SegmentedFrame& frame, const ShapeRaster& shapes) {
  require(shapes.width == frame.label_map.width && shapes.height == frame.label_map.height, ErrorCode::ShapeMismatch,
          "shape raster and frame differ in size");
  std::vector<std::vector<int>> counts(frame.segments.size());
  for (size_t k = 0; k < shapes.size(); ++k) {
    const int32_t s = frame.label_map.data[k];
    const uint16_t v = shapes.data[k];
    if (s == kNoSegment || v == 0) continue;
    const int shape = v - 1;
    auto& c = counts[s];
    if (static_cast<int>(c.size()) <= shape) c.resize(shape + 1, 0);
    ++c[shape];
  }
  std::vector<int> labels(frame.segments.size(), kBackgroundShape);
  for (size_t s = 0; s < counts.size(); ++s) {
    int best = -1;
    for (int id = 0; id < static_cast<int>(counts[s].size()); ++id) {
      if (best < 0 || counts[s][id] > counts[s][best]) best = id;
    }
    // segments made only of stroke-adjacent pixels the raster calls ink stay background
    labels[s] = best < 0 ? kBackgroundShape : best;
  }
  return labels;
}

std::vector<int> make_color_map(int shape_count, int palette_size, Rng& rng, ColorMapMode mode) {
  require(palette_size >= 2, ErrorCode::InvalidArgument, "palette size must be >= 2");
  std::vector<int> map(shape_count, 0);
  if (mode == ColorMapMode::Uniform) {
    std::uniform_int_distribution<int> pick(0, palette_size - 1);
    for (int& c : map) c = pick(rng);
    return map;
  }
  std::vector<int> shapes(shape_count);
  std::iota(shapes.begin(), shapes.end(), 0);
  std::shuffle(shapes.begin(), shapes.end(), rng);
  std::vector<int> colors(palette_size);
  std::iota(colors.begin(), colors.end(), 0);
  std::shuffle(colors.begin(), colors.end(), rng);
  std::uniform_int_distribution<int> pick(0, palette_size - 1);
  for (int k = 0; k < shape_count; ++k) map[shapes[k]] = k < palette_size ? colors[k] : pick(rng);
  return map;
}

std::vector<std::vector<int>> make_color_labels(const std::vector<std::vector<int>>& corr_labels,
                                                const std::vector<int>& color_map) {
  std::vector<std::vector<int>> out(corr_labels.size());
  for (size_t f = 0; f < corr_labels.size(); ++f) {
    out[f].reserve(corr_labels[f].size());
    for (int id : corr_labels[f]) {
      require(id >= 0 && id < static_cast<int>(color_map.size()), ErrorCode::InvalidArgument,
              "shape id outside colour map");
      out[f].push_back(color_map[id]);
    }
  }
  return out;
}

SequenceSample assemble_sequence(const std::vector<LineImage>& images, const std::vector<ShapeRaster>& shapes,
                                 const std::vector<int>& palette, int palette_size, const seg::SegParams& params) {
  require(images.size() == shapes.size(), ErrorCode::LengthMismatch, "image and shape raster counts differ");
  SequenceSample sample;
  const int n = static_cast<int>(images.size());
  sample.frames.resize(n);
  sample.corr_labels.resize(n);
  sample.shape_maps = shapes;
  sample.palette = palette;
  sample.palette_size = palette_size;
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < n; ++t) {
    try {
      sample.frames[t] = seg::extract_segments(images[t], params);
      sample.corr_labels[t] = majority_labels(sample.frames[t], shapes[t]);
    } catch (const std::exception& e) {
      errors[t] = e.what();
    }
  }
  for (int t = 0; t < n; ++t) {
    require(errors[t].empty(), ErrorCode::DegenerateScene, "frame " + std::to_string(t) + ": " + errors[t]);
  }
  for (const auto& labels : sample.corr_labels) {
    for (int id : labels) {
      require(id < static_cast<int>(palette.size()), ErrorCode::DegenerateScene, "shape id without palette entry");
    }
  }
  sample.color_labels = make_color_labels(sample.corr_labels, palette);
  return sample;
}

SequenceSample generate_sequence(const SceneSpec& spec, const seg::SegParams& params) {
  spec.validate();
  const std::vector<RenderedFrame> rendered = render_sequence(spec);
  std::vector<LineImage> images;
  std::vector<ShapeRaster> shapes;
  for (const auto& f : rendered) {
    images.push_back(f.image);
    shapes.push_back(f.shapes);
  }
  const int shape_count = static_cast<int>(spec.shapes.size()) + spec.occluders + 1;
  Rng rng(spec.seed ^ 0xc0105ULL);
  const std::vector<int> palette = make_color_map(shape_count, spec.palette_size, rng);
  return assemble_sequence(images, shapes, palette, spec.palette_size, params);
}

SequenceSample generate_sequence(const SceneSpec& spec) {
  return generate_sequence(spec, seg::SegParams::for_resolution(spec.resolution, spec.resolution));
}

LabeledFrame labeled_frame(const SequenceSample& sample, int index) {
  require(index >= 0 && index < sample.length(), ErrorCode::InvalidArgument, "frame index out of range");
  return LabeledFrame{sample.frames[index], sample.shape_maps[index], sample.corr_labels[index],
                      sample.color_labels[index]};
}

FrameTransform sample_transform(int width, int height, const AugmentConfig& cfg, Rng& rng) {
  FrameTransform t;
  t.crop_scale = uniform(rng, cfg.crop_scale_min, 1.0);
  t.crop_x = uniform(rng, 0.0, (1.0 - t.crop_scale) * width);
  t.crop_y = uniform(rng, 0.0, (1.0 - t.crop_scale) * height);
  t.jitter_x = uniform(rng, -cfg.jitter_px, cfg.jitter_px);
  t.jitter_y = uniform(rng, -cfg.jitter_px, cfg.jitter_px);
  t.shear = uniform(rng, -cfg.shear, cfg.shear);
  t.flip = cfg.flip_probability > 0.0 && uniform(rng, 0.0, 1.0) < cfg.flip_probability;
  return t;
}

LabeledFrame apply_transform(const LabeledFrame& frame, const FrameTransform& t, const std::vector<int>& palette,
                             const seg::SegParams& params) {
  const LineImage& src = frame.frame.image;
  const int w = src.width;
  const int h = src.height;
  LineImage image(w, h, 1.0f);
  ShapeRaster shapes(w, h, static_cast<uint16_t>(kBackgroundShape + 1));
  const double cy = h / 2.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double u = x + 0.5 - t.jitter_x;
      const double v = y + 0.5 - t.jitter_y;
      u -= t.shear * (v - cy);
      if (t.flip) u = w - u;
      const double sx = t.crop_x + t.crop_scale * u;
      const double sy = t.crop_y + t.crop_scale * v;
      const int ix = static_cast<int>(std::floor(sx));
      const int iy = static_cast<int>(std::floor(sy));
      if (ix < 0 || iy < 0 || ix >= w || iy >= h) continue;
      image.at(x, y) = src.at(ix, iy);
      shapes.at(x, y) = frame.shapes.at(ix, iy);
    }
  }
  LabeledFrame out;
  out.frame = seg::extract_segments(image, params);
  out.shapes = std::move(shapes);
  out.corr = majority_labels(out.frame, out.shapes);
  out.color.reserve(out.corr.size());
  for (int id : out.corr) {
    require(id < static_cast<int>(palette.size()), ErrorCode::InvalidArgument, "shape id outside palette");
    out.color.push_back(palette[id]);
  }
  return out;
}

AugmentedPair augment_pair(const LabeledFrame& reference, const LabeledFrame& target, const std::vector<int>& palette,
                           const AugmentConfig& cfg, const seg::SegParams& params, Rng& rng) {
  cfg.validate();
  const FrameTransform tr = sample_transform(reference.frame.image.width, reference.frame.image.height, cfg, rng);
  const FrameTransform tt = sample_transform(target.frame.image.width, target.frame.image.height, cfg, rng);
  AugmentedPair out;
  try {
    out.reference = apply_transform(reference, tr, palette, params);
    out.target = apply_transform(target, tt, palette, params);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::EmptyFrame) fail(ErrorCode::DegenerateAugmentation, e.what());
    throw;
  }
  return out;
}

std::pair<int, int> sample_frame_indices(int first, int last, int max_skip, Rng& rng) {
  require(last > first, ErrorCode::InvalidArgument, "need at least two frames to sample a pair");
  require(max_skip >= 1, ErrorCode::InvalidArgument, "max frame skip must be >= 1");
  const int t = std::uniform_int_distribution<int>(first, last - 1)(rng);
  const int k = std::uniform_int_distribution<int>(1, std::min(max_skip, last - t))(rng);
  return {t, t + k};
}

TrainingPair sample_training_pair(const SequenceSample& sample, const AugmentConfig& cfg,
                                  const seg::SegParams& params, Rng& rng, int first, int last) {
  cfg.validate();
  if (last < 0) last = sample.length() - 1;
  const auto [t, u] = sample_frame_indices(first, last, cfg.max_frame_skip, rng);
  TrainingPair pair;
  pair.reference_index = t;
  pair.target_index = u;
  const bool identity = cfg.crop_scale_min >= 1.0 && cfg.jitter_px == 0.0 && cfg.shear == 0.0 &&
                        cfg.flip_probability == 0.0;
  if (identity) {
    pair.reference = labeled_frame(sample, t);
    pair.target = labeled_frame(sample, u);
    return pair;
  }
  AugmentedPair aug = augment_pair(labeled_frame(sample, t), labeled_frame(sample, u), sample.palette, cfg, params, rng);
  pair.reference = std::move(aug.reference);
  pair.target = std::move(aug.target);
  return pair;
}

}  // namespace ant::datagen
