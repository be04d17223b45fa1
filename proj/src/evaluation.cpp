#include "ant/evaluation.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <optional>

#include "ant/error.hpp"
#include "ant/objectives.hpp"
#include "json.hpp"

namespace ant::eval {

Matcher model_matcher(const model::Model<float>& model, const std::vector<seg::SegmentedFrame>& frames,
                      int crop_margin) {
  auto cache = std::make_shared<std::vector<std::optional<model::FrameInputs<float>>>>(frames.size());
  const int crop = model.config().crop;
  return [&model, &frames, cache, crop, crop_margin](int reference, int target) {
    auto inputs = [&](int i) -> const model::FrameInputs<float>& {
      auto& slot = (*cache)[i];
      if (!slot) slot = model::frame_inputs<float>(frames[i], crop, crop_margin);
      return *slot;
    };
    nn::NoGradGuard guard;
    const model::PairOutput<float> out = model.forward(inputs(reference), inputs(target), {});
    match::Matrix logits(out.logits->value.rows(), out.logits->value.cols());
    std::copy(out.logits->value.data.begin(), out.logits->value.data.end(), logits.data.begin());
    return match::forward_match(logits);
  };
}

Matcher centroid_matcher(const std::vector<seg::SegmentedFrame>& frames) {
  return [&frames](int reference, int target) {
    const seg::SegmentedFrame& ref = frames[reference];
    std::vector<int> ids(ref.size());
    for (int i = 0; i < ref.size(); ++i) ids[i] = i;
    const std::vector<int> nearest = nearest_centroid_baseline(ref, ids, frames[target]);
    match::Matrix s(ref.size(), frames[target].size());
    for (int j = 0; j < s.cols; ++j) s.at(nearest[j], j) = 1.0;
    return s;
  };
}

PropagationResult recursive_propagate(const Matcher& matcher, const std::vector<seg::SegmentedFrame>& frames,
                                      const std::vector<int>& reference_labels, int horizon,
                                      const Overrides& overrides) {
  require(horizon >= 0, ErrorCode::InvalidArgument, "horizon must be non-negative");
  require(static_cast<int>(frames.size()) >= horizon + 1, ErrorCode::InvalidArgument,
          "need " + std::to_string(horizon + 1) + " frames, got " + std::to_string(frames.size()));
  PropagationResult result;
  if (horizon == 0) return result;
  require(static_cast<int>(reference_labels.size()) == frames[0].size(), ErrorCode::LengthMismatch,
          "reference labels do not match the reference segment count");
  std::vector<int> current = reference_labels;
  for (int t = 1; t <= horizon; ++t) {
    require(frames[t].size() > 0, ErrorCode::EmptyFrame, "frame " + std::to_string(t) + " has no segments");
    const match::Matrix s = matcher(t - 1, t);
    require(s.rows == frames[t - 1].size() && s.cols == frames[t].size(), ErrorCode::ShapeMismatch,
            "matcher returned a matrix of the wrong shape");
    const obj::LabelAssignment assignment = obj::LabelAssignment::from_labels(current);
    match::Matrix dist = match::propagate(s, assignment.one_hot());
    std::vector<int> predicted = match::predict_labels(dist);
    for (int& p : predicted) p = assignment.vocabulary[p];
    if (auto it = overrides.find(t); it != overrides.end()) {
      require(it->second.size() == predicted.size(), ErrorCode::LengthMismatch,
              "override for frame " + std::to_string(t) + " does not match its segment count");
      for (size_t j = 0; j < predicted.size(); ++j) {
        if (it->second[j] >= 0) predicted[j] = it->second[j];
      }
    }
    result.confidences.push_back(match::confidences(dist));
    result.label_maps.push_back(class_map(frames[t], predicted));
    result.labels.push_back(predicted);
    result.distributions.push_back(std::move(dist));
    result.vocabularies.push_back(assignment.vocabulary);
    current = std::move(predicted);
  }
  return result;
}

PropagationResult recursive_propagate(const model::Model<float>& model, const std::vector<seg::SegmentedFrame>& frames,
                                      const std::vector<int>& reference_labels, int horizon) {
  return recursive_propagate(model_matcher(model, frames), frames, reference_labels, horizon);
}

double segment_accuracy(const std::vector<std::vector<int>>& predicted, const std::vector<std::vector<int>>& truth) {
  require(predicted.size() == truth.size(), ErrorCode::LengthMismatch, "frame counts differ");
  long correct = 0, total = 0;
  for (size_t f = 0; f < truth.size(); ++f) {
    require(predicted[f].size() == truth[f].size(), ErrorCode::LengthMismatch,
            "segment counts differ on frame " + std::to_string(f));
    for (size_t i = 0; i < truth[f].size(); ++i) correct += predicted[f][i] == truth[f][i] ? 1 : 0;
    total += static_cast<long>(truth[f].size());
  }
  require(total > 0, ErrorCode::LengthMismatch, "no segments to score");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

LabelMap class_map(const seg::SegmentedFrame& frame, const std::vector<int>& labels) {
  require(static_cast<int>(labels.size()) == frame.size(), ErrorCode::LengthMismatch,
          "label count differs from segment count");
  LabelMap out(frame.label_map.width, frame.label_map.height, kNoSegment);
  for (size_t i = 0; i < out.data.size(); ++i) {
    const int32_t s = frame.label_map.data[i];
    if (s != kNoSegment) out.data[i] = labels[s];
  }
  return out;
}

namespace {

struct Counts {
  long intersection = 0;
  long pred = 0;
  long truth = 0;
};

void accumulate_counts(const LabelMap& p, const LabelMap& g, std::map<int, Counts>& counts) {
  require(p.width == g.width && p.height == g.height, ErrorCode::ShapeMismatch, "label maps differ in size");
  for (size_t i = 0; i < g.data.size(); ++i) {
    if (g.data[i] == kNoSegment) continue;
    ++counts[g.data[i]].truth;
    if (p.data[i] == kNoSegment) continue;
    ++counts[p.data[i]].pred;
    if (p.data[i] == g.data[i]) ++counts[g.data[i]].intersection;
  }
}

IouTable table_from(const std::map<int, Counts>& counts) {
  IouTable t;
  double sum = 0.0;
  for (const auto& [c, n] : counts) {
    if (n.truth == 0) continue;
    const double iou = 100.0 * static_cast<double>(n.intersection) / static_cast<double>(n.pred + n.truth - n.intersection);
    t.per_class[c] = iou;
    sum += iou;
  }
  require(!t.per_class.empty(), ErrorCode::NoClasses, "ground truth has no labelled pixels");
  t.mean = sum / static_cast<double>(t.per_class.size());
  return t;
}

}  // namespace

IouTable class_iou(const std::vector<LabelMap>& predicted, const std::vector<LabelMap>& truth) {
  require(predicted.size() == truth.size(), ErrorCode::LengthMismatch, "frame counts differ");
  std::map<int, Counts> counts;
  for (size_t f = 0; f < truth.size(); ++f) accumulate_counts(predicted[f], truth[f], counts);
  return table_from(counts);
}

double mean_iou(const std::vector<LabelMap>& predicted, const std::vector<LabelMap>& truth) {
  return class_iou(predicted, truth).mean;
}

double mean_iou_per_segment(const std::vector<seg::SegmentedFrame>& frames, const std::vector<std::vector<int>>& truth,
                            const std::vector<LabelMap>& predicted) {
  require(frames.size() == truth.size() && frames.size() == predicted.size(), ErrorCode::LengthMismatch,
          "frame counts differ");
  double sum = 0.0;
  long segments = 0;
  for (size_t f = 0; f < frames.size(); ++f) {
    const LabelMap gt = class_map(frames[f], truth[f]);
    std::map<int, Counts> counts;
    accumulate_counts(predicted[f], gt, counts);
    const IouTable table = table_from(counts);
    for (int label : truth[f]) sum += table.per_class.at(label);
    segments += static_cast<long>(truth[f].size());
  }
  require(segments > 0, ErrorCode::NoClasses, "no segments to score");
  return sum / static_cast<double>(segments);
}

std::vector<int> nearest_centroid_baseline(const seg::SegmentedFrame& reference, const std::vector<int>& labels,
                                           const seg::SegmentedFrame& target) {
  require(reference.size() >= 1, ErrorCode::EmptyVocabulary, "reference frame has no segments");
  require(static_cast<int>(labels.size()) == reference.size(), ErrorCode::LengthMismatch,
          "label count differs from reference segment count");
  const double rw = reference.image.width, rh = reference.image.height;
  const double tw = target.image.width, th = target.image.height;
  std::vector<int> out(target.size());
  for (int j = 0; j < target.size(); ++j) {
    const double x = target.segments[j].cx / tw, y = target.segments[j].cy / th;
    double best = std::numeric_limits<double>::infinity();
    int best_i = 0;
    for (int i = 0; i < reference.size(); ++i) {
      const double dx = reference.segments[i].cx / rw - x, dy = reference.segments[i].cy / rh - y;
      const double d = dx * dx + dy * dy;
      if (d < best) {
        best = d;
        best_i = i;
      }
    }
    out[j] = labels[best_i];
  }
  return out;
}

RgbImage colorize(const LabelMap& classes, const Palette& palette) {
  RgbImage img(classes.width, classes.height, {0, 0, 0});
  for (int y = 0; y < classes.height; ++y) {
    for (int x = 0; x < classes.width; ++x) {
      const int32_t c = classes.at(x, y);
      if (c == kNoSegment) continue;
      auto it = palette.find(c);
      require(it != palette.end(), ErrorCode::MissingPaletteEntry, "palette has no colour for class " + std::to_string(c));
      img.set(x, y, it->second);
    }
  }
  return img;
}

std::vector<RgbImage> colorize_sequence(const PropagationResult& result, const Palette& palette) {
  std::vector<RgbImage> out;
  out.reserve(result.label_maps.size());
  for (const LabelMap& m : result.label_maps) out.push_back(colorize(m, palette));
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["mean_iou"] = mean_iou;
  j["mean_iou_per_segment"] = mean_iou_per_segment;
  j["chains"] = chains;
  j["per_frame"] = nlohmann::json::array();
  for (const FrameMetrics& f : per_frame) {
    j["per_frame"].push_back({{"frame", f.frame}, {"accuracy", f.accuracy}, {"mean_iou", f.mean_iou}});
  }
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [c, v] : per_class_iou) classes[std::to_string(c)] = v;
  j["per_class_iou"] = classes;
  return j.dump(2);
}

MetricReport score_chains(const std::vector<std::vector<seg::SegmentedFrame>>& frames,
                          const std::vector<std::vector<std::vector<int>>>& truth,
                          const std::vector<PropagationResult>& results) {
  require(frames.size() == truth.size() && frames.size() == results.size(), ErrorCode::LengthMismatch,
          "chain counts differ");
  MetricReport report;
  report.chains = static_cast<int>(results.size());
  std::vector<std::vector<int>> all_pred, all_truth;
  std::vector<LabelMap> all_pred_maps, all_truth_maps;
  std::vector<seg::SegmentedFrame> all_frames;
  int steps = 0;
  for (const auto& r : results) steps = std::max(steps, r.size());
  std::vector<std::vector<std::vector<int>>> step_pred(steps), step_truth(steps);
  std::vector<std::vector<LabelMap>> step_pred_maps(steps), step_truth_maps(steps);
  for (size_t c = 0; c < results.size(); ++c) {
    const PropagationResult& r = results[c];
    for (int k = 0; k < r.size(); ++k) {
      const seg::SegmentedFrame& frame = frames[c][k + 1];
      const std::vector<int>& gt = truth[c][k + 1];
      const LabelMap gt_map = class_map(frame, gt);
      all_pred.push_back(r.labels[k]);
      all_truth.push_back(gt);
      all_pred_maps.push_back(r.label_maps[k]);
      all_truth_maps.push_back(gt_map);
      all_frames.push_back(frame);
      step_pred[k].push_back(r.labels[k]);
      step_truth[k].push_back(gt);
      step_pred_maps[k].push_back(r.label_maps[k]);
      step_truth_maps[k].push_back(gt_map);
    }
  }
  if (all_pred.empty()) return report;
  report.accuracy = segment_accuracy(all_pred, all_truth);
  const IouTable table = class_iou(all_pred_maps, all_truth_maps);
  report.mean_iou = table.mean;
  report.per_class_iou = table.per_class;
  report.mean_iou_per_segment = mean_iou_per_segment(all_frames, all_truth, all_pred_maps);
  for (int k = 0; k < steps; ++k) {
    report.per_frame.push_back(
        {k + 1, segment_accuracy(step_pred[k], step_truth[k]), mean_iou(step_pred_maps[k], step_truth_maps[k])});
  }
  return report;
}

}  // namespace ant::eval

namespace ant::eval {

MetricReport evaluate_holdout(const std::vector<dataset::Sequence>& data, const MatcherFactory& factory,
                              const HoldoutOptions& options) {
  require(options.horizon >= 1 && options.stride >= 1, ErrorCode::InvalidArgument, "horizon and stride must be >= 1");
  std::vector<std::vector<seg::SegmentedFrame>> chain_frames;
  std::vector<std::vector<std::vector<int>>> chain_truth;
  std::vector<PropagationResult> results;
  for (const dataset::Sequence& seq : data) {
    const auto& sample = seq.sample;
    const auto& labels = options.labels == LabelKind::Correspondence ? sample.corr_labels : sample.color_labels;
    for (int s = seq.holdout_start; s + options.horizon < sample.length(); s += options.stride) {
      std::vector<seg::SegmentedFrame> frames(sample.frames.begin() + s, sample.frames.begin() + s + options.horizon + 1);
      std::vector<std::vector<int>> truth(labels.begin() + s, labels.begin() + s + options.horizon + 1);
      const Matcher matcher = factory(frames);
      results.push_back(recursive_propagate(matcher, frames, truth[0], options.horizon));
      chain_frames.push_back(std::move(frames));
      chain_truth.push_back(std::move(truth));
    }
  }
  return score_chains(chain_frames, chain_truth, results);
}

}  // namespace ant::eval
