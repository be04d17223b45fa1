#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "ant/datagen.hpp"
#include "ant/error.hpp"
#include "ant/evaluation.hpp"
#include "doctest.h"

using namespace ant;
using namespace ant::datagen;

namespace {

// Axis-aligned square of side `side` centred at (cx, cy).
ShapeSpec square(double cx, double cy, double side, int z = 0) {
  ShapeSpec s;
  s.kind = ShapeKind::Polygon;
  s.sides = 4;
  s.half_x = s.half_y = side / std::numbers::sqrt2;
  s.joint_x = cx;
  s.joint_y = cy;
  s.z = z;
  return s;
}

SceneSpec square_scene(std::vector<ShapeSpec> shapes, int resolution = 128) {
  SceneSpec spec;
  spec.seed = 3;
  spec.shapes = std::move(shapes);
  spec.resolution = resolution;
  spec.frames = 2;
  spec.stroke_width = 2;
  return spec;
}

Pose rest_pose(const SceneSpec& spec) {
  Pose p;
  p.angles.assign(spec.shapes.size(), 0.0);
  p.roots.assign(spec.shapes.size(), {0.0, 0.0});
  return p;
}

LabeledFrame labeled(const RenderedFrame& r) {
  LabeledFrame f;
  f.frame = seg::extract_segments(r.image, seg::SegParams::for_resolution(r.image.width, r.image.height));
  f.shapes = r.shapes;
  f.corr = majority_labels(f.frame, f.shapes);
  f.color = f.corr;
  return f;
}

std::vector<int> identity_palette(int n) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i % 2;
  return p;
}

int segment_with_label(const LabeledFrame& f, int label) {
  for (size_t i = 0; i < f.corr.size(); ++i) {
    if (f.corr[i] == label) return static_cast<int>(i);
  }
  return -1;
}

CharacterOptions small_character() {
  CharacterOptions o;
  o.resolution = 128;
  o.frames = 6;
  return o;
}

}  // namespace

TEST_CASE("scene spec validation") {
  SceneSpec s = square_scene({square(64, 64, 40)});
  CHECK_NOTHROW(s.validate());
  s.frames = 1;
  CHECK_THROWS_AS(s.validate(), Error);
  s = square_scene({square(64, 64, 40)});
  s.stroke_width = 0;
  CHECK_THROWS_AS(s.validate(), Error);
  s = square_scene({square(64, 64, 40)});
  s.palette_size = 1;
  CHECK_THROWS_AS(s.validate(), Error);
  s = square_scene({square(64, 64, 40), square(20, 20, 10)});
  s.shapes[0].parent = 1;
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("zero motion gives identical frames and labels") {
  CharacterOptions o = small_character();
  o.motion = MotionRanges{};
  o.occluders = 0;
  const SequenceSample s = generate_sequence(character_scene(11, o));
  REQUIRE(s.length() == 6);
  for (int t = 1; t < s.length(); ++t) {
    CHECK(s.frames[t] == s.frames[0]);
    CHECK(s.corr_labels[t] == s.corr_labels[0]);
  }
}

TEST_CASE("generation is deterministic in the seed") {
  const SceneSpec spec = character_scene(12, small_character());
  const SequenceSample a = generate_sequence(spec);
  const SequenceSample b = generate_sequence(spec);
  CHECK(a.frames == b.frames);
  CHECK(a.shape_maps == b.shape_maps);
  CHECK(a.corr_labels == b.corr_labels);
  CHECK(a.color_labels == b.color_labels);
  CHECK(a.palette == b.palette);
  const SequenceSample c = generate_sequence(character_scene(13, small_character()));
  CHECK_FALSE(c.frames == a.frames);
}

TEST_CASE("a square translating 5 px per frame moves its centroid by 5 px") {
  const SceneSpec spec = square_scene({square(40, 64, 30)});
  double previous = 0.0;
  for (int t = 0; t < 6; ++t) {
    Pose pose = rest_pose(spec);
    pose.roots[0] = {5.0 * t, 0.0};
    const LabeledFrame f = labeled(render_pose(spec, pose));
    const int k = segment_with_label(f, 1);
    REQUIRE(k >= 0);
    const double cx = f.frame.segments[k].cx;
    if (t > 0) CHECK(std::abs(cx - previous - 5.0) <= 0.5);
    previous = cx;
  }
}

TEST_CASE("sequence labels are consistent") {
  CharacterOptions o = small_character();
  o.frames = 10;
  const SequenceSample s = generate_sequence(character_scene(14, o));
  std::map<int, int> colour_of;
  for (int t = 0; t < s.length(); ++t) {
    REQUIRE(s.corr_labels[t].size() == static_cast<size_t>(s.frames[t].size()));
    REQUIRE(s.color_labels[t].size() == s.corr_labels[t].size());
    for (size_t i = 0; i < s.corr_labels[t].size(); ++i) {
      const int id = s.corr_labels[t][i], c = s.color_labels[t][i];
      CHECK(c >= 0);
      CHECK(c < s.palette_size);
      auto [it, inserted] = colour_of.emplace(id, c);
      CHECK(it->second == c);
    }
  }
}

TEST_CASE("majority labels") {
  seg::SegmentedFrame f;
  f.image = LineImage(4, 1, 1.0f);
  f.label_map = LabelMap(4, 1, 0);
  f.segments.resize(1);
  ShapeRaster shapes(4, 1, 0);
  // file convention: value = id + 1
  shapes.data = {3, 3, 2, 2};
  CHECK(majority_labels(f, shapes) == std::vector<int>{1});  // tie goes to the lower id
  shapes.data = {3, 3, 3, 2};
  CHECK(majority_labels(f, shapes) == std::vector<int>{2});
}

TEST_CASE("colour maps") {
  SUBCASE("ten shapes on four colours use every colour") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const auto map = make_color_map(10, 4, rng);
      CHECK(std::set<int>(map.begin(), map.end()).size() == 4);
      const auto labels = make_color_labels({{0, 3, 9}, {9, 0}}, map);
      CHECK(labels[0][0] == labels[1][1]);
      CHECK(labels[0][2] == labels[1][0]);
    }
  }
  SUBCASE("enough colours make the map injective and the accuracies equal") {
    Rng rng(1);
    const auto map = make_color_map(5, 6, rng);
    CHECK(std::set<int>(map.begin(), map.end()).size() == 5);
    const std::vector<std::vector<int>> truth{{0, 1, 2, 3, 4}}, pred{{0, 2, 2, 4, 1}};
    CHECK(eval::segment_accuracy(make_color_labels(pred, map), make_color_labels(truth, map)) ==
          eval::segment_accuracy(pred, truth));
  }
  SUBCASE("two shapes on two colours can collide") {
    bool collided = false;
    for (uint64_t seed = 0; seed < 50 && !collided; ++seed) {
      Rng rng(seed);
      const auto map = make_color_map(2, 2, rng, ColorMapMode::Uniform);
      collided = map[0] == map[1];
    }
    CHECK(collided);
  }
  SUBCASE("palette must have two colours") {
    Rng rng(1);
    CHECK_THROWS_AS(make_color_map(3, 1, rng), Error);
  }
}

TEST_CASE("identity augmentation returns the input") {
  const SceneSpec spec = square_scene({square(40, 64, 30), square(90, 64, 30)});
  const LabeledFrame f = labeled(render_pose(spec, rest_pose(spec)));
  const LabeledFrame g = apply_transform(f, FrameTransform{}, identity_palette(4),
                                         seg::SegParams::for_resolution(128, 128));
  CHECK(g.frame == f.frame);
  CHECK(g.corr == f.corr);
  Rng rng(1);
  const AugmentedPair p = augment_pair(f, f, identity_palette(4), AugmentConfig::identity(),
                                       seg::SegParams::for_resolution(128, 128), rng);
  CHECK(p.reference.frame == f.frame);
  CHECK(p.target.corr == f.corr);
}

TEST_CASE("a crop that removes one shape keeps the other labels") {
  const SceneSpec spec = square_scene({square(32, 64, 30), square(96, 64, 30)});
  const LabeledFrame f = labeled(render_pose(spec, rest_pose(spec)));
  REQUIRE(segment_with_label(f, 1) >= 0);
  REQUIRE(segment_with_label(f, 2) >= 0);
  FrameTransform t;
  t.crop_scale = 0.5;  // left half of the frame, magnified
  const LabeledFrame g = apply_transform(f, t, identity_palette(4), seg::SegParams::for_resolution(128, 128));
  CHECK(segment_with_label(g, 1) >= 0);
  CHECK(segment_with_label(g, 2) < 0);
  CHECK(segment_with_label(g, 0) >= 0);
}

TEST_CASE("shear keeps segments and labels and widens boxes") {
  const SceneSpec spec = square_scene({square(40, 64, 30), square(90, 64, 30)});
  const LabeledFrame f = labeled(render_pose(spec, rest_pose(spec)));
  FrameTransform t;
  t.shear = 0.2;
  const LabeledFrame g = apply_transform(f, t, identity_palette(4), seg::SegParams::for_resolution(128, 128));
  CHECK(g.frame.size() == f.frame.size());
  std::multiset<int> a(f.corr.begin(), f.corr.end()), b(g.corr.begin(), g.corr.end());
  CHECK(a == b);
  for (int label : {1, 2}) {
    const int i = segment_with_label(f, label), j = segment_with_label(g, label);
    CHECK(g.frame.segments[j].bbox.w > f.frame.segments[i].bbox.w);
    CHECK(std::abs(g.frame.segments[j].bbox.h - f.frame.segments[i].bbox.h) <= 1);
  }
  // the same scene rendered with a global shear of 0.2 gives the same label multiset
  Pose sheared = rest_pose(spec);
  sheared.shear = 0.2;
  const LabeledFrame r = labeled(render_pose(spec, sheared));
  CHECK(std::multiset<int>(r.corr.begin(), r.corr.end()) == b);
}

TEST_CASE("augmentation that leaves no paper is degenerate") {
  LabeledFrame ink;
  ink.frame.image = LineImage(16, 16, 0.0f);
  ink.shapes = ShapeRaster(16, 16, 0);
  Rng rng(1);
  try {
    augment_pair(ink, ink, {0}, AugmentConfig::identity(), seg::SegParams{}, rng);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateAugmentation);
  }
}

TEST_CASE("augmentation is deterministic in the rng") {
  const SequenceSample s = generate_sequence(character_scene(15, small_character()));
  AugmentConfig cfg;
  cfg.crop_scale_min = 0.8;
  cfg.jitter_px = 4;
  cfg.shear = 0.1;
  Rng a(5), b(5);
  const auto p = sample_training_pair(s, cfg, seg::SegParams::for_resolution(128, 128), a);
  const auto q = sample_training_pair(s, cfg, seg::SegParams::for_resolution(128, 128), b);
  CHECK(p.reference_index == q.reference_index);
  CHECK(p.target_index == q.target_index);
  CHECK(p.reference.frame == q.reference.frame);
  CHECK(p.target.corr == q.target.corr);
}

TEST_CASE("frame index sampling") {
  Rng rng(7);
  SUBCASE("two frames") {
    for (int i = 0; i < 50; ++i) CHECK(sample_frame_indices(0, 1, 5, rng) == std::pair<int, int>{0, 1});
  }
  SUBCASE("k_max 1 gives consecutive frames") {
    for (int i = 0; i < 200; ++i) {
      const auto [t, u] = sample_frame_indices(0, 99, 1, rng);
      CHECK(u == t + 1);
    }
  }
  SUBCASE("skips are uniform over 1..5") {
    const int draws = 10000;
    std::vector<int> count(6, 0);
    for (int i = 0; i < draws; ++i) {
      const auto [t, u] = sample_frame_indices(0, 99, 5, rng);
      REQUIRE(u - t >= 1);
      REQUIRE(u - t <= 5);
      REQUIRE(u <= 99);
      ++count[u - t];
    }
    double chi2 = 0.0;
    for (int k = 1; k <= 5; ++k) {
      const double freq = static_cast<double>(count[k]) / draws;
      CHECK(std::abs(freq - 0.2) <= 0.02);
      chi2 += std::pow(count[k] - draws / 5.0, 2) / (draws / 5.0);
    }
    // the last few starts allow fewer skips, which tilts the counts slightly
    // toward small k; 99.9% quantile of chi-square with 4 dof is 18.5
    CHECK(chi2 < 18.5 + 25.0);
  }
  SUBCASE("range is respected") {
    for (int i = 0; i < 500; ++i) {
      const auto [t, u] = sample_frame_indices(10, 20, 5, rng);
      CHECK(t >= 10);
      CHECK(u <= 20);
    }
  }
}

TEST_CASE("an occluder does not relabel shapes it does not touch") {
  const SceneSpec plain = square_scene({square(32, 40, 24), square(96, 40, 24), square(64, 100, 24)});
  SceneSpec occluded = plain;
  ShapeSpec occ = square(96, 40, 14, 5);  // covers part of shape 2 only
  occluded.shapes.push_back(occ);
  const LabeledFrame a = labeled(render_pose(plain, rest_pose(plain)));
  const LabeledFrame b = labeled(render_pose(occluded, rest_pose(occluded)));
  auto area_of = [](const LabeledFrame& f, int label) {
    int area = 0, count = 0;
    for (size_t i = 0; i < f.corr.size(); ++i) {
      if (f.corr[i] == label) {
        area += f.frame.segments[i].area;
        ++count;
      }
    }
    return std::pair<int, int>{area, count};
  };
  CHECK(area_of(a, 1) == area_of(b, 1));
  CHECK(area_of(a, 3) == area_of(b, 3));
  CHECK(area_of(b, 4).second >= 1);
  CHECK(area_of(b, 2).first < area_of(a, 2).first);
}

TEST_CASE("ten-shape options draw exactly ten shapes") {
  const SceneSpec spec = character_scene(3, ten_shape_options(128, 4, 4));
  CHECK(spec.shapes.size() == 10);
  CHECK(spec.occluders == 0);
}
