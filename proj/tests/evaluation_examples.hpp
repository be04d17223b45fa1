#pragma once

// Evaluation-module examples shared by the unit tests and the acceptance
// runner. Each check returns an empty string on success, otherwise a message.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ant/datagen.hpp"
#include "ant/dataset.hpp"
#include "ant/error.hpp"
#include "ant/evaluation.hpp"
#include "ant/model.hpp"
#include "ant/objectives.hpp"

namespace ant::testing {

struct NamedCheck {
  std::string name;
  std::function<std::string()> run;
};

// Frame whose label map is given directly; ink wherever `labels` is kNoSegment.
inline seg::SegmentedFrame frame_from_labels(const LabelMap& labels) {
  LineImage img(labels.width, labels.height, 1.0f);
  for (size_t i = 0; i < labels.data.size(); ++i) {
    if (labels.data[i] == kNoSegment) img.pixels[i] = 0.0f;
  }
  return seg::frame_from_label_map(img, labels);
}

// Two segments split by an ink column at x = 10 on a 21 x 10 frame.
inline seg::SegmentedFrame split_frame() {
  LabelMap m(21, 10, 0);
  for (int y = 0; y < 10; ++y) {
    m.at(10, y) = kNoSegment;
    for (int x = 11; x < 21; ++x) m.at(x, y) = 1;
  }
  return frame_from_labels(m);
}

inline datagen::SequenceSample small_sequence(uint64_t seed = 5, int frames = 12) {
  datagen::CharacterOptions o;
  o.resolution = 128;
  o.frames = frames;
  o.palette_size = 4;
  return datagen::generate_sequence(datagen::character_scene(seed, o));
}

// First small sequence without occluders in which every shape of a frame is
// also visible in the previous frame.
inline datagen::SequenceSample visible_sequence(int frames) {
  datagen::CharacterOptions o;
  o.resolution = 128;
  o.frames = frames;
  o.occluders = 0;
  for (uint64_t seed = 1;; ++seed) {
    auto sample = datagen::generate_sequence(datagen::character_scene(seed, o));
    bool ok = true;
    for (int t = 1; t < frames && ok; ++t) {
      const auto& prev = sample.corr_labels[t - 1];
      for (int id : sample.corr_labels[t]) ok = ok && std::find(prev.begin(), prev.end(), id) != prev.end();
    }
    if (ok) return sample;
  }
}

// One-hot S built from ground-truth correspondence: every target column
// puts its mass on the first reference segment with the same shape id.
inline eval::Matcher oracle_matcher(const std::vector<std::vector<int>>& corr) {
  return [corr](int reference, int target) {
    const auto& a = corr[reference];
    const auto& b = corr[target];
    match::Matrix s(static_cast<int>(a.size()), static_cast<int>(b.size()));
    for (size_t j = 0; j < b.size(); ++j) {
      auto it = std::find(a.begin(), a.end(), b[j]);
      s.at(it == a.end() ? 0 : static_cast<int>(it - a.begin()), static_cast<int>(j)) = 1.0;
    }
    return s;
  };
}

template <class F>
std::string expect_error(ErrorCode code, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == code) return "";
    return std::string("wrong error ") + to_string(e.code());
  }
  return std::string("no ") + to_string(code) + " raised";
}

inline std::string expect_near(double got, double want, double tol) {
  if (std::abs(got - want) <= tol) return "";
  std::ostringstream s;
  s << "got " << got << ", expected " << want;
  return s.str();
}

// `trained` enables the checks that need a trained checkpoint; `data` provides
// frames for them (held-out frames are used).
inline std::vector<NamedCheck> evaluation_examples(const model::Model<float>* trained = nullptr,
                                                   const std::vector<dataset::Sequence>* data = nullptr) {
  std::vector<NamedCheck> checks;

  // recursive_propagate
  checks.push_back({"horizon 1 equals one pairwise propagation", [] {
    const auto sample = small_sequence();
    const model::ModelConfig cfg = [] {
      model::ModelConfig c;
      c.dim = 16;
      c.layers = 2;
      c.heads = 2;
      c.crop = 16;
      c.conv_widths = {8, 16};
      return c;
    }();
    const model::Model<float> net(cfg, 11);
    const std::vector<seg::SegmentedFrame> frames{sample.frames[0], sample.frames[1]};
    const auto& ref = sample.corr_labels[0];
    const auto result = eval::recursive_propagate(net, frames, ref, 1);
    const match::Matrix s = eval::model_matcher(net, frames)(0, 1);
    const obj::LabelAssignment a = obj::LabelAssignment::from_labels(ref);
    std::vector<int> expected = match::predict_labels(match::propagate(s, a.one_hot()));
    for (int& e : expected) e = a.vocabulary[e];
    return result.size() == 1 && result.labels[0] == expected ? std::string() : "labels differ";
  }});
  checks.push_back({"untrained model yields valid labels near chance", [] {
    // Reference labels are drawn independently of the target truth, so every
    // matcher has expected accuracy 100/K.
    std::mt19937_64 rng(17);
    const int k = 4;
    long correct = 0, total = 0;
    for (uint64_t seed = 1; seed <= 8; ++seed) {
      const auto sample = small_sequence(seed, 2);
      model::ModelConfig cfg;
      cfg.dim = 16;
      cfg.layers = 2;
      cfg.heads = 2;
      cfg.crop = 16;
      cfg.conv_widths = {8, 16};
      const model::Model<float> net(cfg, seed);
      for (int trial = 0; trial < 25; ++trial) {
        std::uniform_int_distribution<int> cls(0, k - 1);
        std::vector<int> ref(sample.frames[0].size()), truth(sample.frames[1].size());
        for (int& r : ref) r = cls(rng);
        for (int& t : truth) t = cls(rng);
        const auto result = eval::recursive_propagate(net, sample.frames, ref, 1);
        for (size_t j = 0; j < truth.size(); ++j) {
          const int p = result.labels[0][j];
          if (std::find(ref.begin(), ref.end(), p) == ref.end()) return std::string("label outside the vocabulary");
          correct += p == truth[j];
        }
        total += static_cast<long>(truth.size());
      }
    }
    const double acc = 100.0 * correct / total;
    // binomial standard error of the pooled accuracy is about 1.2 points here
    return expect_near(acc, 100.0 / k, 5.0);
  }});
  checks.push_back({"perfect matcher keeps 100% at every horizon", [] {
    const auto sample = visible_sequence(11);
    const auto result = eval::recursive_propagate(oracle_matcher(sample.corr_labels), sample.frames,
                                                  sample.corr_labels[0], 10);
    for (int t = 1; t <= 10; ++t) {
      if (eval::segment_accuracy({result.labels[t - 1]}, {sample.corr_labels[t]}) != 100.0) {
        return "frame " + std::to_string(t) + " below 100%";
      }
    }
    return std::string();
  }});
  checks.push_back({"empty frame mid-sequence is reported", [] {
    const auto sample = small_sequence();
    std::vector<seg::SegmentedFrame> frames{sample.frames[0], sample.frames[1], seg::SegmentedFrame{}};
    return expect_error(ErrorCode::EmptyFrame, [&] {
      eval::recursive_propagate(oracle_matcher(sample.corr_labels), frames, sample.corr_labels[0], 2);
    });
  }});

  // segment_accuracy
  checks.push_back({"accuracy of identical labels is 100", [] {
    return expect_near(eval::segment_accuracy({{1, 2, 3}, {4}}, {{1, 2, 3}, {4}}), 100.0, 0.0);
  }});
  checks.push_back({"accuracy of all-wrong labels is 0", [] {
    return expect_near(eval::segment_accuracy({{1, 1}, {2}}, {{0, 0}, {0}}), 0.0, 0.0);
  }});
  checks.push_back({"3 of 4 correct is 75", [] {
    return expect_near(eval::segment_accuracy({{0, 1, 2, 9}}, {{0, 1, 2, 3}}), 75.0, 0.0);
  }});
  checks.push_back({"accuracy length mismatch", [] {
    return expect_error(ErrorCode::LengthMismatch, [] { eval::segment_accuracy({{0, 1}}, {{0, 1, 2}}); });
  }});
  checks.push_back({"accuracy is invariant to a relabeling bijection", [] {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> cls(0, 5);
    std::vector<std::vector<int>> pred(3, std::vector<int>(20)), truth = pred;
    for (auto& f : pred) for (int& v : f) v = cls(rng);
    for (auto& f : truth) for (int& v : f) v = cls(rng);
    std::vector<int> perm{3, 5, 0, 1, 4, 2};
    auto relabel = [&](std::vector<std::vector<int>> x) {
      for (auto& f : x) for (int& v : f) v = perm[v];
      return x;
    };
    return expect_near(eval::segment_accuracy(relabel(pred), relabel(truth)), eval::segment_accuracy(pred, truth),
                       0.0);
  }});

  // mean IoU
  checks.push_back({"identical maps give 100 mIoU", [] {
    const auto sample = small_sequence();
    const LabelMap m = eval::class_map(sample.frames[0], sample.corr_labels[0]);
    return expect_near(eval::mean_iou({m}, {m}), 100.0, 0.0);
  }});
  checks.push_back({"disjoint prediction gives IoU 0 for that class", [] {
    LabelMap gt(10, 10, 1), pred(10, 10, 1);
    for (int y = 0; y < 5; ++y) for (int x = 0; x < 5; ++x) gt.at(x, y) = 0;
    for (int y = 5; y < 10; ++y) for (int x = 5; x < 10; ++x) pred.at(x, y) = 0;
    return expect_near(eval::class_iou({pred}, {gt}).per_class.at(0), 0.0, 0.0);
  }});
  checks.push_back({"half coverage plus equal spurious area gives 33.33", [] {
    // gt: class 7 on a 10x10 square; pred: its left half plus a 50-pixel
    // region elsewhere. |I| = 50, |U| = 100 + 50 = 150.
    LabelMap gt(30, 10, 0), pred(30, 10, 0);
    for (int y = 0; y < 10; ++y) {
      for (int x = 0; x < 10; ++x) gt.at(x, y) = 7;
      for (int x = 0; x < 5; ++x) pred.at(x, y) = 7;
      for (int x = 20; x < 25; ++x) pred.at(x, y) = 7;
    }
    return expect_near(eval::class_iou({pred}, {gt}).per_class.at(7), 100.0 * 50.0 / 150.0, 1e-9);
  }});
  checks.push_back({"mIoU is 100 only for identical maps", [] {
    const auto sample = small_sequence();
    const LabelMap gt = eval::class_map(sample.frames[0], sample.corr_labels[0]);
    LabelMap pred = gt;
    for (auto& v : pred.data) {
      if (v != kNoSegment) {
        v = v == 0 ? 1 : 0;
        break;
      }
    }
    const double miou = eval::mean_iou({pred}, {gt});
    return miou < 100.0 && miou >= 0.0 ? std::string() : "changed map still scores " + std::to_string(miou);
  }});
  checks.push_back({"mIoU without classes", [] {
    LabelMap empty(4, 4, kNoSegment);
    return expect_error(ErrorCode::NoClasses, [&] { eval::mean_iou({empty}, {empty}); });
  }});

  // nearest-centroid baseline
  checks.push_back({"baseline on identical frames is the identity", [] {
    const auto sample = small_sequence();
    const auto& f = sample.frames[0];
    std::vector<int> ids(f.size());
    for (int i = 0; i < f.size(); ++i) ids[i] = i;
    return eval::nearest_centroid_baseline(f, ids, f) == ids ? std::string() : "not the identity";
  }});
  checks.push_back({"single reference segment labels every target", [] {
    const auto sample = small_sequence();
    const seg::SegmentedFrame one = frame_from_labels(LabelMap(8, 8, 0));
    const auto out = eval::nearest_centroid_baseline(one, {42}, sample.frames[1]);
    return std::all_of(out.begin(), out.end(), [](int v) { return v == 42; }) ? std::string() : "label not inherited";
  }});
  checks.push_back({"segments swapped across the midline fool the baseline", [] {
    // reference: class 0 on the left, class 1 on the right; in the target the
    // two objects have traded places
    const seg::SegmentedFrame f = split_frame();
    const std::vector<int> truth{1, 0};
    const auto out = eval::nearest_centroid_baseline(f, {0, 1}, f);
    return expect_near(eval::segment_accuracy({out}, {truth}), 0.0, 0.0);
  }});

  // colorize
  checks.push_back({"one segment, red palette", [] {
    LabelMap m(6, 6, 0);
    m.at(2, 2) = kNoSegment;
    const RgbImage img = eval::colorize(eval::class_map(frame_from_labels(m), {0}), {{0, Rgb{255, 0, 0}}});
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 6; ++x) {
        const Rgb want = (x == 2 && y == 2) ? Rgb{0, 0, 0} : Rgb{255, 0, 0};
        if (img.at(x, y) != want) return std::string("wrong pixel colour");
      }
    }
    return std::string();
  }});
  checks.push_back({"equal label maps colorize equally", [] {
    const auto sample = small_sequence();
    const eval::Palette palette{{0, {1, 2, 3}}, {1, {4, 5, 6}}, {2, {7, 8, 9}}, {3, {10, 11, 12}}};
    const LabelMap a = eval::class_map(sample.frames[0], sample.color_labels[0]);
    const LabelMap b = eval::class_map(sample.frames[0], sample.color_labels[0]);
    return eval::colorize(a, palette) == eval::colorize(b, palette) ? std::string() : "images differ";
  }});
  checks.push_back({"majority colour per segment recovers the labels", [] {
    const auto sample = small_sequence(7, 6);
    const eval::Palette palette{{0, {230, 25, 75}}, {1, {60, 180, 75}}, {2, {255, 225, 25}}, {3, {0, 130, 200}}};
    const auto result = eval::recursive_propagate(oracle_matcher(sample.corr_labels), sample.frames,
                                                  sample.color_labels[0], 5);
    const auto images = eval::colorize_sequence(result, palette);
    std::map<Rgb, int> inverse;
    for (const auto& [c, rgb] : palette) inverse[rgb] = c;
    for (int t = 0; t < result.size(); ++t) {
      const seg::SegmentedFrame& f = sample.frames[t + 1];
      std::vector<std::map<int, int>> votes(f.size());
      for (int y = 0; y < f.label_map.height; ++y) {
        for (int x = 0; x < f.label_map.width; ++x) {
          const int s = f.label_map.at(x, y);
          if (s != kNoSegment) ++votes[s][inverse.at(images[t].at(x, y))];
        }
      }
      for (int s = 0; s < f.size(); ++s) {
        const auto best = std::max_element(votes[s].begin(), votes[s].end(),
                                           [](const auto& a, const auto& b) { return a.second < b.second; });
        if (best->first != result.labels[t][s]) return "frame " + std::to_string(t + 1) + " segment mismatch";
      }
    }
    return std::string();
  }});
  checks.push_back({"missing palette entry", [] {
    LabelMap m(3, 3, 5);
    return expect_error(ErrorCode::MissingPaletteEntry, [&] { eval::colorize(m, {{0, Rgb{1, 1, 1}}}); });
  }});

  if (trained && data) {
    checks.push_back({"trained model on repeated frames stays at 100%", [trained, data] {
      int chains = 0;
      for (const auto& seq : *data) {
        const int f = seq.holdout_start;
        const std::vector<seg::SegmentedFrame> frames(11, seq.sample.frames[f]);
        const auto& truth = seq.sample.corr_labels[f];
        const auto result = eval::recursive_propagate(*trained, frames, truth, 10);
        for (int t = 0; t < 10; ++t) {
          const double acc = eval::segment_accuracy({result.labels[t]}, {truth});
          if (acc != 100.0) {
            return seq.id + " step " + std::to_string(t + 1) + ": " + std::to_string(acc) + "%";
          }
        }
        ++chains;
      }
      return chains > 0 ? std::string() : std::string("no sequences");
    }});
  }
  return checks;
}

}  // namespace ant::testing
