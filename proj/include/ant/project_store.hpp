#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ant/image.hpp"
#include "ant/segmentation.hpp"

namespace ant::store {

enum class LabelSource { Human, Propagated, GroundTruth };

const char* to_string(LabelSource source);
LabelSource label_source_from_string(const std::string& text);

inline constexpr int kUnlabeled = -1;

struct SegmentLabel {
  int label = kUnlabeled;
  LabelSource source = LabelSource::Propagated;
  double confidence = 1.0;

  friend bool operator==(const SegmentLabel&, const SegmentLabel&) = default;
};

struct Assignment {
  int segment = 0;
  int label = 0;
};

struct ProjectMeta {
  std::string id;
  int frame_count = 0;
  long revision = 0;
  std::map<int, Rgb> palette;  // empty = any non-negative class is accepted
};

// One directory per project:
//   meta.json            id, frame count, revision, palette
//   frames/NNNNN.png     line drawing as uploaded
//   frames/NNNNN.seg.png 16-bit label map once segmented
//   labels/NNNNN.json    per-segment labels with their source
// Every file is replaced atomically. The store is not thread-safe; callers
// serialize access per project.
class ProjectStore {
 public:
  explicit ProjectStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  std::string create_project(const std::map<int, Rgb>& palette = {});
  bool exists(const std::string& id) const;
  std::vector<std::string> list_projects() const;
  ProjectMeta meta(const std::string& id) const;

  // Validates the PNG and appends it; returns the new frame index.
  int append_frame(const std::string& id, const std::vector<uint8_t>& png_bytes);
  LineImage frame_image(const std::string& id, int frame) const;
  std::vector<uint8_t> frame_png(const std::string& id, int frame) const;

  // Segments on first use and caches the label map; later calls reload it.
  seg::SegmentedFrame segment(const std::string& id, int frame);
  std::optional<seg::SegmentedFrame> cached_segmentation(const std::string& id, int frame) const;

  // One entry per segment; empty until the frame is segmented.
  std::vector<SegmentLabel> labels(const std::string& id, int frame) const;

  // Applies assignments with the given source. `expected_revision` enforces
  // optimistic concurrency (Conflict on mismatch). Classes must be
  // non-negative and in the palette when one is set (InvalidLabel).
  long set_labels(const std::string& id, int frame, const std::vector<Assignment>& assignments, LabelSource source,
                  std::optional<long> expected_revision = std::nullopt);

  // Writes predicted labels for whole frames, leaving human labels untouched.
  long store_predictions(const std::string& id, const std::map<int, std::vector<SegmentLabel>>& predictions);

 private:
  std::filesystem::path dir(const std::string& id) const;
  void check_frame(const ProjectMeta& meta, int frame) const;
  void write_meta(const ProjectMeta& meta) const;
  void write_labels(const std::string& id, int frame, const std::vector<SegmentLabel>& labels) const;

  std::filesystem::path root_;
};

}  // namespace ant::store
