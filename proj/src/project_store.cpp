#include "ant/project_store.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

#include "ant/error.hpp"
#include "ant/png_io.hpp"
#include "json.hpp"

namespace ant::store {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_stem(int frame) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", frame);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  png::write_file_atomic(path, std::vector<uint8_t>(text.begin(), text.end()));
}

json read_json(const fs::path& path) {
  const std::vector<uint8_t> bytes = png::read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::Io, "unreadable " + path.string() + ": " + e.what());
  }
}

bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)); });
}

}  // namespace

const char* to_string(LabelSource source) {
  switch (source) {
    case LabelSource::Human:
      return "human";
    case LabelSource::Propagated:
      return "propagated";
    case LabelSource::GroundTruth:
      return "ground-truth";
  }
  return "?";
}

LabelSource label_source_from_string(const std::string& text) {
  if (text == "human") return LabelSource::Human;
  if (text == "propagated") return LabelSource::Propagated;
  if (text == "ground-truth") return LabelSource::GroundTruth;
  fail(ErrorCode::InvalidArgument, "unknown label source '" + text + "'");
}

ProjectStore::ProjectStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

fs::path ProjectStore::dir(const std::string& id) const { return root_ / id; }

std::string ProjectStore::create_project(const std::map<int, Rgb>& palette) {
  for (const auto& [cls, rgb] : palette) {
    require(cls >= 0, ErrorCode::InvalidLabel, "palette classes must be non-negative");
  }
  int next = 1;
  for (const auto& id : list_projects()) {
    if (id.size() > 1 && id[0] == 'p') next = std::max(next, std::atoi(id.c_str() + 1) + 1);
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p%05d", next);
  ProjectMeta m;
  m.id = buf;
  m.palette = palette;
  fs::create_directories(dir(m.id) / "frames");
  fs::create_directories(dir(m.id) / "labels");
  write_meta(m);
  return m.id;
}

bool ProjectStore::exists(const std::string& id) const {
  return valid_id(id) && fs::exists(dir(id) / "meta.json");
}

std::vector<std::string> ProjectStore::list_projects() const {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root_)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && exists(name)) ids.push_back(name);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

ProjectMeta ProjectStore::meta(const std::string& id) const {
  require(exists(id), ErrorCode::NotFound, "unknown project '" + id + "'");
  const json j = read_json(dir(id) / "meta.json");
  ProjectMeta m;
  m.id = j.at("id").get<std::string>();
  m.frame_count = j.at("frame_count").get<int>();
  m.revision = j.at("revision").get<long>();
  for (const auto& [key, rgb] : j.at("palette").items()) m.palette[std::stoi(key)] = rgb.get<Rgb>();
  return m;
}

void ProjectStore::write_meta(const ProjectMeta& m) const {
  json palette = json::object();
  for (const auto& [cls, rgb] : m.palette) palette[std::to_string(cls)] = rgb;
  write_text(dir(m.id) / "meta.json",
             json{{"id", m.id}, {"frame_count", m.frame_count}, {"revision", m.revision}, {"palette", palette}}.dump(2));
}

void ProjectStore::check_frame(const ProjectMeta& m, int frame) const {
  require(frame >= 0 && frame < m.frame_count, ErrorCode::NotFound,
          "project '" + m.id + "' has no frame " + std::to_string(frame));
}

int ProjectStore::append_frame(const std::string& id, const std::vector<uint8_t>& png_bytes) {
  ProjectMeta m = meta(id);
  try {
    png::decode_line_image(png_bytes);
  } catch (const Error& e) {
    fail(ErrorCode::InvalidArgument, std::string("frame is not a readable PNG: ") + e.what());
  }
  const int index = m.frame_count;
  png::write_file_atomic(dir(id) / "frames" / (frame_stem(index) + ".png"), png_bytes);
  ++m.frame_count;
  ++m.revision;
  write_meta(m);
  return index;
}

LineImage ProjectStore::frame_image(const std::string& id, int frame) const {
  check_frame(meta(id), frame);
  return png::load_line_image(dir(id) / "frames" / (frame_stem(frame) + ".png"));
}

std::vector<uint8_t> ProjectStore::frame_png(const std::string& id, int frame) const {
  check_frame(meta(id), frame);
  return png::read_file(dir(id) / "frames" / (frame_stem(frame) + ".png"));
}

std::optional<seg::SegmentedFrame> ProjectStore::cached_segmentation(const std::string& id, int frame) const {
  check_frame(meta(id), frame);
  const fs::path path = dir(id) / "frames" / (frame_stem(frame) + ".seg.png");
  if (!fs::exists(path)) return std::nullopt;
  return seg::frame_from_label_map(frame_image(id, frame), seg::decode_label_map(png::load_gray16(path)));
}

seg::SegmentedFrame ProjectStore::segment(const std::string& id, int frame) {
  if (auto cached = cached_segmentation(id, frame)) return *cached;
  const LineImage image = frame_image(id, frame);
  seg::SegmentedFrame result =
      seg::extract_segments(image, seg::SegParams::for_resolution(image.width, image.height));
  png::write_file_atomic(dir(id) / "frames" / (frame_stem(frame) + ".seg.png"),
                         png::encode_gray16(seg::encode_label_map(result.label_map)));
  write_labels(id, frame, std::vector<SegmentLabel>(result.size()));
  ProjectMeta m = meta(id);
  ++m.revision;
  write_meta(m);
  return result;
}

std::vector<SegmentLabel> ProjectStore::labels(const std::string& id, int frame) const {
  check_frame(meta(id), frame);
  const fs::path path = dir(id) / "labels" / (frame_stem(frame) + ".json");
  if (!fs::exists(path)) return {};
  const json doc = read_json(path);
  std::vector<SegmentLabel> out;
  for (const json& e : doc.at("segments")) {
    SegmentLabel l;
    l.label = e.at("class").get<int>();
    l.source = label_source_from_string(e.at("source").get<std::string>());
    l.confidence = e.at("confidence").get<double>();
    out.push_back(l);
  }
  return out;
}

void ProjectStore::write_labels(const std::string& id, int frame, const std::vector<SegmentLabel>& labels) const {
  json segments = json::array();
  for (const auto& l : labels) {
    segments.push_back({{"class", l.label}, {"source", to_string(l.source)}, {"confidence", l.confidence}});
  }
  write_text(dir(id) / "labels" / (frame_stem(frame) + ".json"), json{{"segments", segments}}.dump());
}

long ProjectStore::set_labels(const std::string& id, int frame, const std::vector<Assignment>& assignments,
                              LabelSource source, std::optional<long> expected_revision) {
  ProjectMeta m = meta(id);
  check_frame(m, frame);
  if (expected_revision && *expected_revision != m.revision) {
    fail(ErrorCode::Conflict, "revision is " + std::to_string(m.revision) + ", request expected " +
                                  std::to_string(*expected_revision));
  }
  std::vector<SegmentLabel> current = labels(id, frame);
  if (current.empty()) {
    segment(id, frame);
    m = meta(id);
    current = labels(id, frame);
  }
  for (const Assignment& a : assignments) {
    require(a.segment >= 0 && a.segment < static_cast<int>(current.size()), ErrorCode::InvalidLabel,
            "frame " + std::to_string(frame) + " has no segment " + std::to_string(a.segment));
    require(a.label >= 0 && (m.palette.empty() || m.palette.count(a.label)), ErrorCode::InvalidLabel,
            "class " + std::to_string(a.label) + " is not in the project palette");
  }
  for (const Assignment& a : assignments) current[a.segment] = SegmentLabel{a.label, source, 1.0};
  write_labels(id, frame, current);
  ++m.revision;
  write_meta(m);
  return m.revision;
}

long ProjectStore::store_predictions(const std::string& id,
                                     const std::map<int, std::vector<SegmentLabel>>& predictions) {
  ProjectMeta m = meta(id);
  for (const auto& [frame, predicted] : predictions) {
    check_frame(m, frame);
    std::vector<SegmentLabel> current = labels(id, frame);
    require(current.size() == predicted.size(), ErrorCode::LengthMismatch,
            "prediction for frame " + std::to_string(frame) + " does not match its segments");
    for (size_t j = 0; j < current.size(); ++j) {
      if (current[j].source != LabelSource::Human) current[j] = predicted[j];
    }
    write_labels(id, frame, current);
  }
  if (!predictions.empty()) {
    ++m.revision;
    write_meta(m);
  }
  return m.revision;
}

}  // namespace ant::store
