#include "ant/service.hpp"

#include <map>
#include <mutex>
#include <thread>

#include "ant/error.hpp"
#include "ant/evaluation.hpp"
#include "ant/png_io.hpp"
#include "httplib.h"
#include "json.hpp"

namespace ant::service {
namespace {

using nlohmann::json;

constexpr const char* kProject = R"(/api/projects/([A-Za-z0-9]+))";
constexpr const char* kFrame = R"(/api/projects/([A-Za-z0-9]+)/frames/(\d+))";

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::Conflict:
      return 409;
    case ErrorCode::InvalidLabel:
    case ErrorCode::EmptyFrame:
      return 422;
    case ErrorCode::InvalidArgument:
    case ErrorCode::LengthMismatch:
    case ErrorCode::ShapeMismatch:
      return 400;
    default:
      return 500;
  }
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("request body is not JSON: ") + e.what());
  }
}

int frame_param(const httplib::Request& req) {
  try {
    return std::stoi(req.matches[2].str());
  } catch (const std::exception&) {
    fail(ErrorCode::NotFound, "frame index out of range");
  }
}

int int_param(const httplib::Request& req, const std::string& name, int fallback) {
  if (!req.has_param(name)) return fallback;
  try {
    return std::stoi(req.get_param_value(name));
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidArgument, "query parameter '" + name + "' must be an integer");
  }
}

json segments_json(const seg::SegmentedFrame& frame) {
  json segments = json::array();
  for (const auto& s : frame.segments) {
    segments.push_back({{"index", s.index},
                        {"bbox", {{"x", s.bbox.x}, {"y", s.bbox.y}, {"w", s.bbox.w}, {"h", s.bbox.h}}},
                        {"area", s.area},
                        {"centroid", {s.cx, s.cy}},
                        {"polygon", seg::segment_outline(frame, s.index)}});
  }
  return segments;
}

json labels_json(const std::vector<store::SegmentLabel>& labels) {
  json out = json::array();
  for (size_t j = 0; j < labels.size(); ++j) {
    out.push_back({{"segment", j},
                   {"class", labels[j].label},
                   {"source", store::to_string(labels[j].source)},
                   {"confidence", labels[j].confidence}});
  }
  return out;
}

}  // namespace

struct Service::Impl {
  std::shared_ptr<const model::Model<float>> model;
  store::ProjectStore projects;
  httplib::Server server;
  std::thread thread;

  std::mutex registry_mutex;
  std::map<std::string, std::unique_ptr<std::mutex>> locks;

  Impl(std::shared_ptr<const model::Model<float>> m, const std::filesystem::path& root)
      : model(std::move(m)), projects(root) {
    routes();
  }

  std::mutex& project_lock(const std::string& id) {
    std::lock_guard<std::mutex> guard(registry_mutex);
    auto& slot = locks[id];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
  }

  // Runs `body` under the project's lock and maps library errors to statuses.
  template <class F>
  httplib::Server::Handler locked(F body) {
    return [this, body](const httplib::Request& req, httplib::Response& res) {
      try {
        const std::string id = req.matches[1].str();
        if (!projects.exists(id)) fail(ErrorCode::NotFound, "unknown project '" + id + "'");
        std::lock_guard<std::mutex> guard(project_lock(id));
        body(id, req, res);
      } catch (const Error& e) {
        send_json(res, {{"error", to_string(e.code())}, {"message", e.what()}}, status_for(e.code()));
      } catch (const std::exception& e) {
        send_json(res, {{"error", "internal"}, {"message", e.what()}}, 500);
      }
    };
  }

  void routes() {
    server.Post("/api/projects", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const json body = parse_body(req);
        std::map<int, Rgb> palette;
        if (body.contains("palette")) {
          for (const auto& [key, rgb] : body.at("palette").items()) palette[std::stoi(key)] = rgb.get<Rgb>();
        }
        std::lock_guard<std::mutex> guard(registry_mutex);
        const std::string id = projects.create_project(palette);
        send_json(res, {{"id", id}, {"revision", projects.meta(id).revision}});
      } catch (const Error& e) {
        send_json(res, {{"error", to_string(e.code())}, {"message", e.what()}}, status_for(e.code()));
      } catch (const std::exception& e) {
        send_json(res, {{"error", "bad_request"}, {"message", e.what()}}, 400);
      }
    });

    server.Get(kProject, locked([this](const std::string& id, const httplib::Request&, httplib::Response& res) {
      const store::ProjectMeta m = projects.meta(id);
      json palette = json::object();
      for (const auto& [cls, rgb] : m.palette) palette[std::to_string(cls)] = rgb;
      res.set_header("ETag", std::to_string(m.revision));
      send_json(res, {{"id", m.id}, {"frame_count", m.frame_count}, {"revision", m.revision}, {"palette", palette}});
    }));

    server.Post(std::string(kProject) + "/frames",
                locked([this](const std::string& id, const httplib::Request& req, httplib::Response& res) {
                  const int index = projects.append_frame(id, std::vector<uint8_t>(req.body.begin(), req.body.end()));
                  send_json(res, {{"frame_index", index}, {"revision", projects.meta(id).revision}});
                }));

    server.Get(kFrame, locked([this](const std::string& id, const httplib::Request& req, httplib::Response& res) {
      const int n = frame_param(req);
      const auto bytes = projects.frame_png(id, n);
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
    }));

    server.Post(std::string(kFrame) + "/segment",
                locked([this](const std::string& id, const httplib::Request& req, httplib::Response& res) {
                  const int n = frame_param(req);
                  const seg::SegmentedFrame frame = projects.segment(id, n);
                  send_json(res, {{"frame", n},
                                  {"width", frame.image.width},
                                  {"height", frame.image.height},
                                  {"revision", projects.meta(id).revision},
                                  {"segments", segments_json(frame)}});
                }));

    server.Get(std::string(kFrame) + "/labelmap",
               locked([this](const std::string& id, const httplib::Request& req, httplib::Response& res) {
                 const int n = frame_param(req);
                 const auto frame = projects.cached_segmentation(id, n);
                 require(frame.has_value(), ErrorCode::NotFound, "frame " + std::to_string(n) + " is not segmented");
                 const auto bytes = png::encode_gray16(seg::encode_label_map(frame->label_map));
                 res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
               }));

    server.Get(std::string(kFrame) + "/labels",
               locked([this](const std::string& id, const httplib::Request& req, httplib::Response& res) {
                 const int n = frame_param(req);
                 const long revision = projects.meta(id).revision;
                 res.set_header("ETag", std::to_string(revision));
                 send_json(res, {{"frame", n}, {"revision", revision}, {"labels", labels_json(projects.labels(id, n))}});
               }));

    server.Put(std::string(kFrame) + "/labels",
               locked([this](const std::string& id, const httplib::Request& req, httplib::Response& res) {
                 const int n = frame_param(req);
                 const json body = parse_body(req);
                 std::optional<long> expected;
                 if (req.has_header("If-Match")) {
                   std::string tag = req.get_header_value("If-Match");
                   std::erase(tag, '"');
                   try {
                     expected = std::stol(tag);
                   } catch (const std::exception&) {
                     fail(ErrorCode::InvalidArgument, "If-Match must carry a revision number");
                   }
                 }
                 std::vector<store::Assignment> assignments;
                 try {
                   for (const json& a : body.at("assignments")) {
                     assignments.push_back({a.at("segment").get<int>(), a.at("class").get<int>()});
                   }
                 } catch (const json::exception& e) {
                   fail(ErrorCode::InvalidArgument, std::string("bad assignments: ") + e.what());
                 }
                 const auto source = store::label_source_from_string(body.value("source", std::string("human")));
                 const long revision = projects.set_labels(id, n, assignments, source, expected);
                 res.set_header("ETag", std::to_string(revision));
                 send_json(res, {{"revision", revision}});
               }));

    server.Post(std::string(kProject) + "/propagate",
                locked([this](const std::string& id, const httplib::Request& req, httplib::Response& res) {
                  propagate(id, parse_body(req), res);
                }));

    server.Get(std::string(kFrame) + "/attention",
               locked([this](const std::string& id, const httplib::Request& req, httplib::Response& res) {
                 attention(id, frame_param(req), req, res);
               }));
  }

  void propagate(const std::string& id, const json& body, httplib::Response& res) {
    int reference = 0, horizon = 0;
    try {
      reference = body.at("reference_frame").get<int>();
      horizon = body.value("horizon", eval::kDefaultHorizon);
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidArgument, std::string("bad propagate request: ") + e.what());
    }
    require(horizon >= 0, ErrorCode::InvalidArgument, "horizon must be non-negative");
    const store::ProjectMeta meta = projects.meta(id);
    require(reference >= 0 && reference < meta.frame_count, ErrorCode::NotFound,
            "project '" + id + "' has no frame " + std::to_string(reference));
    horizon = std::min(horizon, meta.frame_count - 1 - reference);
    if (horizon == 0) {
      send_json(res, {{"reference_frame", reference}, {"revision", meta.revision}, {"frames", json::array()}});
      return;
    }

    std::vector<seg::SegmentedFrame> frames;
    std::vector<std::vector<store::SegmentLabel>> stored;
    for (int t = 0; t <= horizon; ++t) {
      frames.push_back(projects.segment(id, reference + t));
      stored.push_back(projects.labels(id, reference + t));
    }
    std::vector<int> ref_labels;
    for (const auto& l : stored[0]) {
      require(l.label >= 0, ErrorCode::InvalidLabel, "reference frame has unlabelled segments");
      ref_labels.push_back(l.label);
    }
    eval::Overrides overrides;
    for (int t = 1; t <= horizon; ++t) {
      std::vector<int> human(stored[t].size(), -1);
      bool any = false;
      for (size_t j = 0; j < stored[t].size(); ++j) {
        if (stored[t][j].source == store::LabelSource::Human && stored[t][j].label >= 0) {
          human[j] = stored[t][j].label;
          any = true;
        }
      }
      if (any) overrides[t] = std::move(human);
    }
    const eval::Matcher matcher = model ? eval::model_matcher(*model, frames) : eval::centroid_matcher(frames);
    const eval::PropagationResult result = eval::recursive_propagate(matcher, frames, ref_labels, horizon, overrides);

    std::map<int, std::vector<store::SegmentLabel>> predictions;
    json out = json::array();
    for (int t = 1; t <= horizon; ++t) {
      std::vector<store::SegmentLabel> labels;
      json classes = json::array(), confidence = json::array(), sources = json::array();
      for (size_t j = 0; j < result.labels[t - 1].size(); ++j) {
        const bool human = stored[t][j].source == store::LabelSource::Human && stored[t][j].label >= 0;
        store::SegmentLabel l{result.labels[t - 1][j], human ? store::LabelSource::Human : store::LabelSource::Propagated,
                              human ? 1.0 : result.confidences[t - 1][j]};
        classes.push_back(l.label);
        confidence.push_back(l.confidence);
        sources.push_back(store::to_string(l.source));
        labels.push_back(l);
      }
      predictions[reference + t] = std::move(labels);
      out.push_back({{"frame", reference + t}, {"labels", classes}, {"confidence", confidence}, {"source", sources}});
    }
    const long revision = projects.store_predictions(id, predictions);
    send_json(res, {{"reference_frame", reference}, {"revision", revision}, {"frames", out}});
  }

  void attention(const std::string& id, int frame, const httplib::Request& req, httplib::Response& res) {
    if (!model) {
      send_json(res, {{"error", "unavailable"}, {"message", "no model loaded"}}, 503);
      return;
    }
    const store::ProjectMeta meta = projects.meta(id);
    require(frame >= 0 && frame < meta.frame_count, ErrorCode::NotFound,
            "project '" + id + "' has no frame " + std::to_string(frame));
    const int layer = int_param(req, "layer", 0);
    const int head = int_param(req, "head", 0);
    const int other = int_param(req, "with", frame + 1 < meta.frame_count ? frame + 1 : std::max(frame - 1, 0));
    require(other >= 0 && other < meta.frame_count, ErrorCode::NotFound, "no frame " + std::to_string(other));
    const auto& cfg = model->config();
    require(layer >= 0 && layer < cfg.layers, ErrorCode::InvalidArgument,
            "layer must lie in [0, " + std::to_string(cfg.layers) + ")");
    require(head >= 0 && head < cfg.heads, ErrorCode::InvalidArgument,
            "head must lie in [0, " + std::to_string(cfg.heads) + ")");

    const seg::SegmentedFrame a = projects.segment(id, frame);
    const seg::SegmentedFrame b = projects.segment(id, other);
    const int margin = seg::SegParams{}.crop_margin;
    const auto maps = model::attention_maps(*model, model::frame_inputs<float>(a, cfg.crop, margin),
                                            model::frame_inputs<float>(b, cfg.crop, margin));
    const model::AttentionKind kind =
        model::ModelConfig::is_self_block(layer) ? model::AttentionKind::SelfA : model::AttentionKind::CrossAB;
    for (const auto& m : maps) {
      if (m.layer != layer || m.head != head || m.kind != kind) continue;
      json rows = json::array();
      for (int r = 0; r < m.rows; ++r) {
        rows.push_back(std::vector<double>(m.weights.begin() + static_cast<long>(r) * m.cols,
                                           m.weights.begin() + static_cast<long>(r + 1) * m.cols));
      }
      send_json(res, {{"frame", frame},
                      {"with", other},
                      {"layer", layer},
                      {"head", head},
                      {"kind", model::to_string(kind)},
                      {"rows", m.rows},
                      {"cols", m.cols},
                      {"weights", rows}});
      return;
    }
    fail(ErrorCode::NotFound, "no attention map for that layer and head");
  }
};

Service::Service(std::shared_ptr<const model::Model<float>> model, const std::filesystem::path& store_root)
    : impl_(std::make_unique<Impl>(std::move(model), store_root)) {}

Service::~Service() { stop(); }

void Service::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) fail(ErrorCode::Io, "cannot listen on " + host + ":" + std::to_string(port));
}

int Service::start(const std::string& host) {
  const int port = impl_->server.bind_to_any_port(host);
  require(port > 0, ErrorCode::Io, "cannot bind " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

store::ProjectStore& Service::store() { return impl_->projects; }

}  // namespace ant::service
