#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ant/datagen.hpp"

namespace ant::dataset {

inline constexpr int kFormatVersion = 1;

// What `generate --spec` consumes: either an explicit scene list or a preset.
struct DatasetSpec {
  std::vector<datagen::SceneSpec> scenes;
  double holdout_fraction = 0.1;  // trailing fraction of every sequence kept for evaluation
};

// Eight character scenes, 200 frames at 256 px.
DatasetSpec desk_dataset_spec(uint64_t seed = 1, int scenes = 8, int frames = 200, int resolution = 256);
// Ten drawn shapes per scene, palette of four colours.
DatasetSpec ten_shape_dataset_spec(uint64_t seed = 101, int scenes = 8, int frames = 200, int resolution = 256);

// Accepts {"scenes": [SceneSpec...], "holdout_fraction": f} or
// {"preset": "desk" | "ten_shape", "seed", "scenes", "frames", "resolution"}.
DatasetSpec parse_dataset_spec(const std::string& json_text);
std::string scene_to_json(const datagen::SceneSpec& spec);
datagen::SceneSpec scene_from_json(const std::string& json_text);

struct Sequence {
  std::string id;
  datagen::SequenceSample sample;
  int holdout_start = 0;  // frames >= holdout_start are evaluation-only
};

void write_sequence(const std::filesystem::path& dir, const datagen::SequenceSample& sample,
                    const datagen::SceneSpec& spec, int holdout_start);

// Re-segments every stored frame and re-derives labels from the shape rasters.
Sequence load_sequence(const std::filesystem::path& dir, const seg::SegParams& params);
Sequence load_sequence(const std::filesystem::path& dir);

std::vector<std::string> list_sequences(const std::filesystem::path& root);
std::vector<Sequence> load_dataset(const std::filesystem::path& root);

// Generates and writes every scene; returns the sequence ids.
std::vector<std::string> generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root);

}  // namespace ant::dataset
