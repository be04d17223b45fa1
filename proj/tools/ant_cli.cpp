#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ant/checkpoint.hpp"
#include "ant/dataset.hpp"
#include "ant/error.hpp"
#include "ant/evaluation.hpp"
#include "ant/png_io.hpp"
#include "ant/segmentation.hpp"
#include "ant/service.hpp"
#include "ant/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace ant;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "not an integer list: " + text);
    }
  }
  return out;
}

eval::Palette load_palette(const fs::path& path) {
  eval::Palette palette;
  try {
    const json j = json::parse(read_text(path));
    for (const auto& [key, value] : j.items()) {
      const auto rgb = value.get<std::vector<int>>();
      require(rgb.size() == 3, ErrorCode::InvalidArgument, "palette entries must be [r, g, b]");
      palette[std::stoi(key)] = {static_cast<uint8_t>(rgb[0]), static_cast<uint8_t>(rgb[1]),
                                 static_cast<uint8_t>(rgb[2])};
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("palette: ") + e.what());
  }
  return palette;
}

// Sorted *.png files of a directory.
std::vector<fs::path> png_files(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::Io, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// Per segment, the most frequent non-zero value of a 16-bit class raster (value - 1).
std::vector<int> labels_from_raster(const seg::SegmentedFrame& frame, const Grid<uint16_t>& raster) {
  require(raster.width == frame.label_map.width && raster.height == frame.label_map.height, ErrorCode::ShapeMismatch,
          "reference label image size differs from the frame");
  std::vector<std::map<int, long>> votes(frame.size());
  for (size_t i = 0; i < raster.data.size(); ++i) {
    const int s = frame.label_map.data[i];
    if (s != kNoSegment && raster.data[i] > 0) ++votes[s][raster.data[i] - 1];
  }
  std::vector<int> labels(frame.size());
  for (int s = 0; s < frame.size(); ++s) {
    require(!votes[s].empty(), ErrorCode::InvalidLabel, "segment " + std::to_string(s) + " has no reference label");
    labels[s] = std::max_element(votes[s].begin(), votes[s].end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; })
                    ->first;
  }
  return labels;
}

int run_generate(const fs::path& spec_path, const fs::path& out, std::optional<uint64_t> seed) {
  json j = json::parse(read_text(spec_path), nullptr, false);
  require(!j.is_discarded(), ErrorCode::InvalidArgument, "spec is not valid JSON");
  if (seed && j.contains("preset")) j["seed"] = *seed;
  dataset::DatasetSpec spec = dataset::parse_dataset_spec(j.dump());
  if (seed && !j.contains("preset")) {
    for (size_t i = 0; i < spec.scenes.size(); ++i) spec.scenes[i].seed = *seed * 1000 + i;
  }
  const auto ids = dataset::generate_dataset(spec, out);
  std::cout << "wrote " << ids.size() << " sequences to " << out.string() << "\n";
  return 0;
}

int run_segment(const fs::path& in, const fs::path& out, const std::string& radii, int min_area) {
  const LineImage image = png::load_line_image(in);
  seg::SegParams params = seg::SegParams::for_resolution(image.width, image.height);
  if (!radii.empty()) params.radii = parse_int_list(radii);
  params.min_area = min_area;
  params.validate();
  const seg::SegmentedFrame frame = seg::extract_segments(image, params);
  png::write_file_atomic(out, png::encode_gray16(seg::encode_label_map(frame.label_map)));
  std::cout << frame.size() << " segments\n";
  return 0;
}

int run_train(const fs::path& data, const fs::path& config, const fs::path& out) {
  const std::string text = read_text(config);
  const train::TrainConfig cfg = train::train_config_from_json(text);
  model::ModelConfig mc;
  const json j = json::parse(text);
  if (j.contains("model")) mc = model::model_config_from_json(j["model"].dump());
  const auto sequences = dataset::load_dataset(data);
  train::FitOptions options;
  options.out_dir = out.parent_path() / (out.stem().string() + ".run");
  options.on_log = [](const std::string& line) { std::cerr << line << "\n"; };
  const train::FitResult result = train::fit(sequences, cfg, mc, options);
  train::save_checkpoint(result.state, out);
  std::cout << "saved " << out.string() << " after " << result.state.step << " steps\n";
  return 0;
}

int run_eval(const fs::path& data, const fs::path& ckpt, int horizon, int stride, const std::string& labels,
             bool baseline) {
  const auto state = train::load_checkpoint<float>(ckpt);
  const auto sequences = dataset::load_dataset(data);
  eval::HoldoutOptions ho;
  ho.horizon = horizon;
  ho.stride = stride;
  ho.labels = labels == "color" ? eval::LabelKind::Color : eval::LabelKind::Correspondence;
  const auto& net = state.model;
  const eval::MetricReport report = eval::evaluate_holdout(
      sequences, [&net](const std::vector<seg::SegmentedFrame>& f) { return eval::model_matcher(net, f); }, ho);
  json out = json::parse(report.to_json());
  if (baseline) {
    const eval::MetricReport b = eval::evaluate_holdout(sequences, eval::centroid_matcher, ho);
    out["baseline"] = json::parse(b.to_json());
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_colorize(const fs::path& frames_dir, const fs::path& ref_labels, const fs::path& palette_path,
                 const fs::path& ckpt, const fs::path& out) {
  const auto state = train::load_checkpoint<float>(ckpt);
  const eval::Palette palette = load_palette(palette_path);
  std::vector<seg::SegmentedFrame> frames;
  for (const fs::path& p : png_files(frames_dir)) {
    const LineImage image = png::load_line_image(p);
    frames.push_back(seg::extract_segments(image, seg::SegParams::for_resolution(image.width, image.height)));
  }
  require(!frames.empty(), ErrorCode::Io, "no PNG frames in " + frames_dir.string());
  const std::vector<int> reference = labels_from_raster(frames[0], png::load_gray16(ref_labels));
  const auto result = eval::recursive_propagate(state.model, frames, reference, static_cast<int>(frames.size()) - 1);
  fs::create_directories(out);
  std::vector<RgbImage> images{eval::colorize(eval::class_map(frames[0], reference), palette)};
  for (RgbImage& img : eval::colorize_sequence(result, palette)) images.push_back(std::move(img));
  for (size_t t = 0; t < images.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu.png", t);
    png::write_file_atomic(out / name, png::encode_rgb(images[t]));
  }
  std::cout << "wrote " << images.size() << " frames to " << out.string() << "\n";
  return 0;
}

int run_serve(const fs::path& ckpt, const fs::path& store, int port) {
  if (const char* env = std::getenv("ANT_PORT"); env && port == 0) port = std::atoi(env);
  if (port == 0) port = 8080;
  auto state = train::load_checkpoint<float>(ckpt);
  service::Service svc(std::make_shared<model::Model<float>>(std::move(state.model)), store);
  std::cerr << "listening on port " << port << "\n";
  svc.listen("0.0.0.0", port);
  return 0;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::InvalidArgument: return kExitUsage;
    case ErrorCode::NonFiniteLoss: return kExitNumeric;
    default: return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segment matching and colour propagation for line-art animation"};
  app.require_subcommand(1);

  fs::path spec, out_dir;
  std::optional<uint64_t> seed;
  auto* gen = app.add_subcommand("generate", "Render a procedural dataset");
  gen->add_option("--spec", spec, "dataset spec JSON")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "override the scene seeds");

  fs::path seg_in, seg_out;
  std::string radii;
  int min_area = 10;
  auto* segment = app.add_subcommand("segment", "Extract segments and write a 16-bit label map");
  segment->add_option("--in", seg_in, "line image PNG")->required();
  segment->add_option("--out", seg_out, "label map PNG")->required();
  segment->add_option("--radii", radii, "trapped-ball radii, descending, e.g. 4,2,1");
  segment->add_option("--min-area", min_area, "minimum segment area in pixels");

  fs::path data, config, ckpt_out;
  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--data", data, "dataset directory")->required();
  trn->add_option("--config", config, "training config JSON")->required();
  trn->add_option("--out", ckpt_out, "checkpoint path")->required();

  fs::path ckpt;
  int horizon = eval::kDefaultHorizon, stride = 1;
  std::string labels = "correspondence";
  bool baseline = false;
  auto* ev = app.add_subcommand("eval", "Recursive propagation metrics on held-out frames");
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--horizon", horizon, "frames per chain");
  ev->add_option("--stride", stride, "spacing of chain starts");
  ev->add_option("--labels", labels, "correspondence | color")->check(CLI::IsMember({"correspondence", "color"}));
  ev->add_flag("--baseline", baseline, "also report the nearest-centroid baseline");

  fs::path frames_dir, ref_labels, palette;
  auto* col = app.add_subcommand("colorize", "Propagate reference colours through a frame directory");
  col->add_option("--frames", frames_dir, "directory of line PNGs")->required();
  col->add_option("--ref-labels", ref_labels, "16-bit class raster of the first frame (class + 1, 0 = none)")
      ->required();
  col->add_option("--palette", palette, "JSON object class -> [r, g, b]")->required();
  col->add_option("--ckpt", ckpt, "checkpoint")->required();
  col->add_option("--out", out_dir, "output directory")->required();

  fs::path store;
  int port = 0;
  auto* srv = app.add_subcommand("serve", "Run the HTTP service");
  srv->add_option("--ckpt", ckpt, "checkpoint")->required();
  srv->add_option("--store", store, "project store directory")->required();
  srv->add_option("--port", port, "port (default ANT_PORT or 8080)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return run_generate(spec, out_dir, seed);
    if (*segment) return run_segment(seg_in, seg_out, radii, min_area);
    if (*trn) return run_train(data, config, ckpt_out);
    if (*ev) return run_eval(data, ckpt, horizon, stride, labels, baseline);
    if (*col) return run_colorize(frames_dir, ref_labels, palette, ckpt, out_dir);
    if (*srv) return run_serve(ckpt, store, port);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
