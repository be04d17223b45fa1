#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ant/image.hpp"
#include "ant/segmentation.hpp"

namespace ant::datagen {

using Rng = std::mt19937_64;

enum class ShapeKind { Ellipse, Polygon, Capsule };

// One rigid part of a kinematic chain. Lengths are in pixels at the scene's
// resolution; angles in radians.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::Ellipse;
  double half_x = 10.0;  // ellipse/polygon radius along x, capsule half length
  double half_y = 10.0;  // ellipse/polygon radius along y, capsule radius
  int sides = 6;         // polygon only
  int parent = -1;       // index into SceneSpec::shapes, -1 for a root
  double joint_x = 0.0;  // joint position in the parent's frame (root: scene position)
  double joint_y = 0.0;
  double center_x = 0.0;  // shape centre relative to its own joint
  double center_y = 0.0;
  double base_angle = 0.0;
  double angle_limit = 0.0;  // max deviation from base_angle over the sequence
  int z = 0;                 // draw order, higher on top
};

struct MotionRanges {
  double translation_px = 0.0;  // per-frame root step bound
  double rotation_rad = 0.0;    // per-frame joint step bound
  double shear = 0.0;           // global shear amplitude
  double scale = 0.0;           // global scale amplitude (1 +- scale)
};

struct SceneSpec {
  uint64_t seed = 0;
  std::vector<ShapeSpec> shapes;
  MotionRanges motion;
  int occluders = 0;
  int stroke_width = 2;
  int resolution = 256;
  int frames = 2;
  int palette_size = 4;

  void validate() const;
};

// Background is shape id 0; drawn shapes are 1..S in spec order, occluders follow.
inline constexpr int kBackgroundShape = 0;

// Pixel raster of shape ids in file convention: 0 = ink, id + 1 otherwise.
using ShapeRaster = Grid<uint16_t>;

struct RenderedFrame {
  LineImage image;
  ShapeRaster shapes;
};

struct SequenceSample {
  std::vector<seg::SegmentedFrame> frames;
  std::vector<ShapeRaster> shape_maps;
  std::vector<std::vector<int>> corr_labels;   // per frame, per segment: shape id
  std::vector<std::vector<int>> color_labels;  // per frame, per segment: palette id
  std::vector<int> palette;                    // shape id -> palette id
  int palette_size = 0;

  int length() const { return static_cast<int>(frames.size()); }
};

struct AugmentConfig {
  int max_frame_skip = 5;
  double crop_scale_min = 1.0;  // crop window side as a fraction of the frame, in [min, 1]
  double jitter_px = 0.0;
  double shear = 0.0;
  double flip_probability = 0.0;

  void validate() const;
  static AugmentConfig identity() { return AugmentConfig{1, 1.0, 0.0, 0.0, 0.0}; }
};

// One labelled frame as consumed by training and evaluation.
struct LabeledFrame {
  seg::SegmentedFrame frame;
  ShapeRaster shapes;
  std::vector<int> corr;
  std::vector<int> color;
};

struct TrainingPair {
  LabeledFrame reference;
  LabeledFrame target;
  int reference_index = 0;
  int target_index = 0;
};

// Character-like scene: torso, head with eyes, limb chains and repeated
// buttons. `shape_budget` caps the number of drawn shapes (0 = template default).
struct CharacterOptions {
  int resolution = 256;
  int frames = 200;
  int palette_size = 4;
  int limb_links = 2;
  int buttons = 3;
  bool pupils = true;
  int occluders = 1;
  int stroke_width = 2;
  MotionRanges motion{6.0, 0.06, 0.04, 0.04};
};

SceneSpec character_scene(uint64_t seed, const CharacterOptions& options);

// Options that yield exactly ten drawn shapes and no occluders.
CharacterOptions ten_shape_options(int resolution, int frames, int palette_size);

// Kinematic state of one frame.
struct Pose {
  std::vector<double> angles;                    // per shape (joint angle)
  std::vector<std::pair<double, double>> roots;  // per shape, root translation (zero for children)
  double scale = 1.0;
  double shear = 0.0;
};

// Deterministic in spec.seed; pose 0 is the rest pose.
std::vector<Pose> simulate_motion(const SceneSpec& spec);

// Occluders are appended as extra root shapes; their paths are drawn from the seed.
SceneSpec with_occluders(const SceneSpec& spec);

RenderedFrame render_pose(const SceneSpec& expanded_spec, const Pose& pose);
std::vector<RenderedFrame> render_sequence(const SceneSpec& spec);

// Per segment, the shape id covering the most of its pixels (ties -> lower id).
std::vector<int> majority_labels(const seg::SegmentedFrame& frame, const ShapeRaster& shapes);

enum class ColorMapMode {
  Cover,    // injective when shapes <= palette, otherwise every palette id used
  Uniform,  // independent uniform draw per shape
};

// shape_count ids (0..shape_count-1) -> palette ids.
std::vector<int> make_color_map(int shape_count, int palette_size, Rng& rng, ColorMapMode mode = ColorMapMode::Cover);
std::vector<std::vector<int>> make_color_labels(const std::vector<std::vector<int>>& corr_labels,
                                                const std::vector<int>& color_map);

SequenceSample generate_sequence(const SceneSpec& spec, const seg::SegParams& params);
SequenceSample generate_sequence(const SceneSpec& spec);

// Builds a sample from rendered frames (used by generation and dataset loading).
SequenceSample assemble_sequence(const std::vector<LineImage>& images, const std::vector<ShapeRaster>& shapes,
                                 const std::vector<int>& palette, int palette_size, const seg::SegParams& params);

LabeledFrame labeled_frame(const SequenceSample& sample, int index);

struct AugmentedPair {
  LabeledFrame reference;
  LabeledFrame target;
};

// Geometric transform applied to one frame. Output pixel p samples the source
// at crop_origin + crop_scale * unflip(unshear(p - jitter)).
struct FrameTransform {
  double crop_x = 0.0;
  double crop_y = 0.0;
  double crop_scale = 1.0;
  double jitter_x = 0.0;
  double jitter_y = 0.0;
  double shear = 0.0;
  bool flip = false;
};

FrameTransform sample_transform(int width, int height, const AugmentConfig& cfg, Rng& rng);

// Resamples image and shape raster (nearest neighbour), re-segments and re-derives labels.
LabeledFrame apply_transform(const LabeledFrame& frame, const FrameTransform& transform,
                             const std::vector<int>& palette, const seg::SegParams& params);

AugmentedPair augment_pair(const LabeledFrame& reference, const LabeledFrame& target, const std::vector<int>& palette,
                           const AugmentConfig& cfg, const seg::SegParams& params, Rng& rng);

// Frame indices (t, t + k) with t uniform in [first, last - 1] and k uniform
// in [1, min(k_max, last - t)]; frames outside [first, last] are never used.
std::pair<int, int> sample_frame_indices(int first, int last, int max_skip, Rng& rng);

TrainingPair sample_training_pair(const SequenceSample& sample, const AugmentConfig& cfg,
                                  const seg::SegParams& params, Rng& rng, int first = 0, int last = -1);

std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& name);

}  // namespace ant::datagen
