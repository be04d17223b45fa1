#include "ant/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ant/error.hpp"
#include "ant/png_io.hpp"
#include "json.hpp"

namespace ant::dataset {
namespace fs = std::filesystem;
using nlohmann::json;
using datagen::SceneSpec;
using datagen::ShapeSpec;

namespace {

json shape_json(const ShapeSpec& s) {
  return json{{"kind", datagen::to_string(s.kind)},
              {"half_x", s.half_x},
              {"half_y", s.half_y},
              {"sides", s.sides},
              {"parent", s.parent},
              {"joint", {s.joint_x, s.joint_y}},
              {"center", {s.center_x, s.center_y}},
              {"base_angle", s.base_angle},
              {"angle_limit", s.angle_limit},
              {"z", s.z}};
}

ShapeSpec shape_from(const json& j) {
  ShapeSpec s;
  s.kind = datagen::shape_kind_from_string(j.value("kind", std::string("ellipse")));
  s.half_x = j.value("half_x", s.half_x);
  s.half_y = j.value("half_y", s.half_y);
  s.sides = j.value("sides", s.sides);
  s.parent = j.value("parent", s.parent);
  if (j.contains("joint")) {
    s.joint_x = j["joint"].at(0).get<double>();
    s.joint_y = j["joint"].at(1).get<double>();
  }
  if (j.contains("center")) {
    s.center_x = j["center"].at(0).get<double>();
    s.center_y = j["center"].at(1).get<double>();
  }
  s.base_angle = j.value("base_angle", s.base_angle);
  s.angle_limit = j.value("angle_limit", s.angle_limit);
  s.z = j.value("z", s.z);
  return s;
}

json scene_json(const SceneSpec& spec) {
  json shapes = json::array();
  for (const auto& s : spec.shapes) shapes.push_back(shape_json(s));
  return json{{"seed", spec.seed},
              {"shapes", shapes},
              {"motion",
               {{"translation_px", spec.motion.translation_px},
                {"rotation_rad", spec.motion.rotation_rad},
                {"shear", spec.motion.shear},
                {"scale", spec.motion.scale}}},
              {"occluders", spec.occluders},
              {"stroke_width", spec.stroke_width},
              {"resolution", spec.resolution},
              {"frames", spec.frames},
              {"palette_size", spec.palette_size}};
}

SceneSpec scene_from(const json& j) {
  SceneSpec spec;
  spec.seed = j.value("seed", uint64_t{0});
  for (const auto& s : j.value("shapes", json::array())) spec.shapes.push_back(shape_from(s));
  if (j.contains("motion")) {
    const json& m = j["motion"];
    spec.motion.translation_px = m.value("translation_px", 0.0);
    spec.motion.rotation_rad = m.value("rotation_rad", 0.0);
    spec.motion.shear = m.value("shear", 0.0);
    spec.motion.scale = m.value("scale", 0.0);
  }
  spec.occluders = j.value("occluders", 0);
  spec.stroke_width = j.value("stroke_width", 2);
  spec.resolution = j.value("resolution", 256);
  spec.frames = j.value("frames", 2);
  spec.palette_size = j.value("palette_size", 4);
  spec.validate();
  return spec;
}

std::string frame_name(int t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d.png", t);
  return buf;
}

int holdout_for(int frames, double fraction) {
  const int held = static_cast<int>(std::lround(frames * fraction));
  return std::clamp(frames - held, 2, frames);
}

}  // namespace

DatasetSpec desk_dataset_spec(uint64_t seed, int scenes, int frames, int resolution) {
  DatasetSpec spec;
  for (int s = 0; s < scenes; ++s) {
    datagen::CharacterOptions o;
    o.resolution = resolution;
    o.frames = frames;
    o.palette_size = 6;
    // vary complexity across scenes
    o.limb_links = 1 + (s % 2);
    o.buttons = 2 + (s % 3);
    o.pupils = (s % 4) != 3;
    o.occluders = (s % 3 == 2) ? 2 : 1;
    spec.scenes.push_back(datagen::character_scene(seed * 1000 + s, o));
  }
  return spec;
}

DatasetSpec ten_shape_dataset_spec(uint64_t seed, int scenes, int frames, int resolution) {
  DatasetSpec spec;
  for (int s = 0; s < scenes; ++s) {
    spec.scenes.push_back(
        datagen::character_scene(seed * 1000 + s, datagen::ten_shape_options(resolution, frames, 4)));
  }
  return spec;
}

DatasetSpec parse_dataset_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("dataset spec is not valid JSON: ") + e.what());
  }
  DatasetSpec spec;
  if (j.contains("preset")) {
    const std::string preset = j["preset"].get<std::string>();
    const uint64_t seed = j.value("seed", uint64_t{1});
    const int scenes = j.value("scenes", 8);
    const int frames = j.value("frames", 200);
    const int resolution = j.value("resolution", 256);
    if (preset == "desk") {
      spec = desk_dataset_spec(seed, scenes, frames, resolution);
    } else if (preset == "ten_shape") {
      spec = ten_shape_dataset_spec(seed, scenes, frames, resolution);
    } else {
      fail(ErrorCode::InvalidArgument, "unknown dataset preset '" + preset + "'");
    }
  } else {
    for (const auto& s : j.at("scenes")) spec.scenes.push_back(scene_from(s));
  }
  spec.holdout_fraction = j.value("holdout_fraction", spec.holdout_fraction);
  require(spec.holdout_fraction >= 0.0 && spec.holdout_fraction < 1.0, ErrorCode::InvalidArgument,
          "holdout fraction must lie in [0,1)");
  require(!spec.scenes.empty(), ErrorCode::InvalidArgument, "dataset spec has no scenes");
  return spec;
}

std::string scene_to_json(const SceneSpec& spec) { return scene_json(spec).dump(); }

SceneSpec scene_from_json(const std::string& json_text) { return scene_from(json::parse(json_text)); }

void write_sequence(const fs::path& dir, const datagen::SequenceSample& sample, const SceneSpec& spec,
                    int holdout_start) {
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "labels");
  for (int t = 0; t < sample.length(); ++t) {
    png::write_file_atomic(dir / "frames" / frame_name(t), png::encode_gray8(sample.frames[t].image));
    png::write_file_atomic(dir / "labels" / frame_name(t), png::encode_gray16(sample.shape_maps[t]));
  }
  const json meta{{"format_version", kFormatVersion},
                  {"frames", sample.length()},
                  {"palette", sample.palette},
                  {"palette_size", sample.palette_size},
                  {"holdout_start", holdout_start},
                  {"spec", scene_json(spec)}};
  const std::string text = meta.dump(2);
  png::write_file_atomic(dir / "meta.json", std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

Sequence load_sequence(const fs::path& dir, const seg::SegParams& params) {
  const png::Bytes raw = png::read_file(dir / "meta.json");
  json meta;
  try {
    meta = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    fail(ErrorCode::Io, "cannot parse " + (dir / "meta.json").string() + ": " + e.what());
  }
  const int version = meta.value("format_version", 0);
  require(version == kFormatVersion, ErrorCode::VersionMismatch,
          "dataset format version " + std::to_string(version) + ", expected " + std::to_string(kFormatVersion));
  const int frames = meta.at("frames").get<int>();
  std::vector<LineImage> images(frames);
  std::vector<datagen::ShapeRaster> shapes(frames);
  std::vector<std::string> errors(frames);
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < frames; ++t) {
    try {
      images[t] = png::load_line_image(dir / "frames" / frame_name(t));
      shapes[t] = png::load_gray16(dir / "labels" / frame_name(t));
    } catch (const std::exception& e) {
      errors[t] = e.what();
    }
  }
  for (const auto& e : errors) require(e.empty(), ErrorCode::Io, e);
  Sequence seq;
  seq.id = dir.filename().string();
  seq.sample = datagen::assemble_sequence(images, shapes, meta.at("palette").get<std::vector<int>>(),
                                          meta.at("palette_size").get<int>(), params);
  seq.holdout_start = meta.value("holdout_start", frames);
  return seq;
}

Sequence load_sequence(const fs::path& dir) {
  const png::Bytes raw = png::read_file(dir / "meta.json");
  const json meta = json::parse(raw.begin(), raw.end());
  const int res = meta.at("spec").value("resolution", 256);
  return load_sequence(dir, seg::SegParams::for_resolution(res, res));
}

std::vector<std::string> list_sequences(const fs::path& root) {
  require(fs::is_directory(root), ErrorCode::Io, "dataset root " + root.string() + " is not a directory");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<Sequence> load_dataset(const fs::path& root) {
  std::vector<Sequence> out;
  for (const auto& id : list_sequences(root)) out.push_back(load_sequence(root / id));
  require(!out.empty(), ErrorCode::Io, "dataset " + root.string() + " contains no sequences");
  return out;
}

std::vector<std::string> generate_dataset(const DatasetSpec& spec, const fs::path& root) {
  std::vector<std::string> ids;
  for (size_t s = 0; s < spec.scenes.size(); ++s) {
    const SceneSpec& scene = spec.scenes[s];
    const datagen::SequenceSample sample = datagen::generate_sequence(scene);
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%03zu", s);
    write_sequence(root / name, sample, scene, holdout_for(scene.frames, spec.holdout_fraction));
    ids.emplace_back(name);
  }
  return ids;
}

}  // namespace ant::dataset
