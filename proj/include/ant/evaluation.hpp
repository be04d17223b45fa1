#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ant/dataset.hpp"
#include "ant/image.hpp"
#include "ant/matching.hpp"
#include "ant/model.hpp"
#include "ant/segmentation.hpp"

namespace ant::eval {

inline constexpr int kDefaultHorizon = 10;

// Forward match matrix S (reference segments x target segments) for two frame indices.
using Matcher = std::function<match::Matrix(int reference, int target)>;

// Caches per-frame network inputs; inference runs without recording gradients.
Matcher model_matcher(const model::Model<float>& model, const std::vector<seg::SegmentedFrame>& frames,
                      int crop_margin = 4);
// One-hot S from nearest_centroid_baseline.
Matcher centroid_matcher(const std::vector<seg::SegmentedFrame>& frames);

struct PropagationResult {
  std::vector<std::vector<int>> labels;         // frames 1..horizon
  std::vector<LabelMap> label_maps;             // class per pixel, kNoSegment on ink
  std::vector<match::Matrix> distributions;     // N x K over the previous frame's vocabulary
  std::vector<std::vector<int>> vocabularies;   // column class ids of each distribution
  std::vector<std::vector<double>> confidences; // max of each distribution row

  int size() const { return static_cast<int>(labels.size()); }
};

// Labels on frame t (1-based in the chain) that replace the prediction before
// the chain continues; negative entries keep the prediction.
using Overrides = std::map<int, std::vector<int>>;

PropagationResult recursive_propagate(const Matcher& matcher, const std::vector<seg::SegmentedFrame>& frames,
                                      const std::vector<int>& reference_labels, int horizon = kDefaultHorizon,
                                      const Overrides& overrides = {});
PropagationResult recursive_propagate(const model::Model<float>& model, const std::vector<seg::SegmentedFrame>& frames,
                                      const std::vector<int>& reference_labels, int horizon = kDefaultHorizon);

double segment_accuracy(const std::vector<std::vector<int>>& predicted, const std::vector<std::vector<int>>& truth);

// Segment labels painted into a class map (kNoSegment on ink).
LabelMap class_map(const seg::SegmentedFrame& frame, const std::vector<int>& labels);

struct IouTable {
  double mean = 0.0;                  // percent
  std::map<int, double> per_class;    // percent
};

// Pixel IoU per class present in the ground truth, pooled over all frames;
// pixels that are ink in the ground truth are ignored.
IouTable class_iou(const std::vector<LabelMap>& predicted, const std::vector<LabelMap>& truth);
double mean_iou(const std::vector<LabelMap>& predicted, const std::vector<LabelMap>& truth);
// Per-segment variant: every ground-truth segment scores the IoU of its class
// within its own frame; the result is the mean over segments.
double mean_iou_per_segment(const std::vector<seg::SegmentedFrame>& frames, const std::vector<std::vector<int>>& truth,
                            const std::vector<LabelMap>& predicted);

// Each target segment takes the label of the reference segment whose
// normalized centroid is closest (ties to the lower index).
std::vector<int> nearest_centroid_baseline(const seg::SegmentedFrame& reference, const std::vector<int>& labels,
                                           const seg::SegmentedFrame& target);

using Palette = std::map<int, Rgb>;
RgbImage colorize(const LabelMap& classes, const Palette& palette);
std::vector<RgbImage> colorize_sequence(const PropagationResult& result, const Palette& palette);

struct FrameMetrics {
  int frame = 0;
  double accuracy = 0.0;
  double mean_iou = 0.0;
};

struct MetricReport {
  double accuracy = 0.0;
  double mean_iou = 0.0;
  double mean_iou_per_segment = 0.0;
  int chains = 0;
  std::vector<FrameMetrics> per_frame;  // indexed by chain step
  std::map<int, double> per_class_iou;

  std::string to_json() const;
};

// Scores one or more propagation chains against ground-truth labels.
// `frames[c]` holds chain c (reference first), `truth[c]` its labels per frame.
MetricReport score_chains(const std::vector<std::vector<seg::SegmentedFrame>>& frames,
                          const std::vector<std::vector<std::vector<int>>>& truth,
                          const std::vector<PropagationResult>& results);

enum class LabelKind { Correspondence, Color };

struct HoldoutOptions {
  int horizon = kDefaultHorizon;
  int stride = 1;  // spacing between chain starts inside the held-out range
  LabelKind labels = LabelKind::Correspondence;
};

using MatcherFactory = std::function<Matcher(const std::vector<seg::SegmentedFrame>&)>;

// Runs chains starting at holdout_start, holdout_start + stride, ... on every
// sequence while the chain stays inside the held-out frames.
MetricReport evaluate_holdout(const std::vector<dataset::Sequence>& data, const MatcherFactory& factory,
                              const HoldoutOptions& options);

}  // namespace ant::eval
