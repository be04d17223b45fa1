#include <atomic>
#include <thread>

#include "ant/error.hpp"
#include "ant/png_io.hpp"
#include "ant/project_store.hpp"
#include "ant/service.hpp"
#include "doctest.h"
#include "evaluation_examples.hpp"
#include "httplib.h"
#include "json.hpp"
#include "support.hpp"

using namespace ant;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string png_body(const seg::SegmentedFrame& frame) {
  const auto bytes = png::encode_gray8(frame.image);
  return {bytes.begin(), bytes.end()};
}

struct Server {
  fs::path root;
  std::unique_ptr<service::Service> svc;
  int port = 0;

  Server(const fs::path& dir, std::shared_ptr<const model::Model<float>> model = nullptr) : root(dir) {
    svc = std::make_unique<service::Service>(std::move(model), root);
    port = svc->start();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

json body_of(const httplib::Result& r) {
  REQUIRE(r);
  return json::parse(r->body);
}

// Creates a project holding `frames` and segments each of them.
std::string seeded_project(httplib::Client& c, const std::vector<seg::SegmentedFrame>& frames) {
  const std::string id = body_of(c.Post("/api/projects", "{}", "application/json"))["id"];
  for (size_t i = 0; i < frames.size(); ++i) {
    const auto r = c.Post("/api/projects/" + id + "/frames", png_body(frames[i]), "image/png");
    REQUIRE(r->status == 200);
    CHECK(json::parse(r->body)["frame_index"] == static_cast<int>(i));
    REQUIRE(c.Post("/api/projects/" + id + "/frames/" + std::to_string(i) + "/segment")->status == 200);
  }
  return id;
}

long label_frame(httplib::Client& c, const std::string& id, int frame, const std::vector<int>& classes) {
  json assignments = json::array();
  for (size_t j = 0; j < classes.size(); ++j) assignments.push_back({{"segment", j}, {"class", classes[j]}});
  const auto r = c.Put("/api/projects/" + id + "/frames/" + std::to_string(frame) + "/labels",
                       json{{"assignments", assignments}}.dump(), "application/json");
  REQUIRE(r->status == 200);
  return json::parse(r->body)["revision"];
}

}  // namespace

TEST_CASE("project store") {
  const fs::path dir = testing::scratch_dir("store");
  const auto sample = testing::small_sequence(3, 2);
  store::ProjectStore s(dir);
  const std::string id = s.create_project({{0, {255, 0, 0}}, {1, {0, 0, 255}}});
  CHECK(s.exists(id));
  CHECK(s.list_projects() == std::vector<std::string>{id});
  CHECK(s.append_frame(id, png::encode_gray8(sample.frames[0].image)) == 0);
  CHECK(s.frame_image(id, 0).pixels == sample.frames[0].image.pixels);
  CHECK(s.labels(id, 0).empty());
  CHECK_FALSE(s.cached_segmentation(id, 0).has_value());

  const auto frame = s.segment(id, 0);
  REQUIRE(s.cached_segmentation(id, 0).has_value());
  CHECK(s.cached_segmentation(id, 0)->label_map.data == frame.label_map.data);
  const auto labels = s.labels(id, 0);
  REQUIRE(labels.size() == frame.segments.size());
  CHECK(labels[0].label == store::kUnlabeled);

  const long rev = s.meta(id).revision;
  const long next = s.set_labels(id, 0, {{0, 1}}, store::LabelSource::Human, rev);
  CHECK(next > rev);
  CHECK(s.labels(id, 0)[0] == store::SegmentLabel{1, store::LabelSource::Human, 1.0});

  auto code_of = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code_of([&] { s.set_labels(id, 0, {{0, 0}}, store::LabelSource::Human, rev); }) == ErrorCode::Conflict);
  CHECK(code_of([&] { s.set_labels(id, 0, {{0, 7}}, store::LabelSource::Human); }) == ErrorCode::InvalidLabel);
  CHECK(code_of([&] { s.set_labels(id, 0, {{0, -2}}, store::LabelSource::Human); }) == ErrorCode::InvalidLabel);
  CHECK(code_of([&] { s.set_labels(id, 0, {{100000, 0}}, store::LabelSource::Human); }) == ErrorCode::InvalidLabel);
  CHECK(code_of([&] { s.segment(id, 3); }) == ErrorCode::NotFound);
  CHECK(code_of([&] { s.meta("nope"); }) == ErrorCode::NotFound);
  CHECK(code_of([&] { s.append_frame(id, {1, 2, 3}); }) != ErrorCode::NotFound);

  // predictions never overwrite human labels
  std::vector<store::SegmentLabel> predicted(labels.size(), {0, store::LabelSource::Propagated, 0.5});
  s.store_predictions(id, {{0, predicted}});
  CHECK(s.labels(id, 0)[0].label == 1);
  CHECK(s.labels(id, 0)[0].source == store::LabelSource::Human);
  if (labels.size() > 1) CHECK(s.labels(id, 0)[1].source == store::LabelSource::Propagated);

  // a fresh store over the same root sees everything
  store::ProjectStore reopened(dir);
  CHECK(reopened.meta(id).palette.size() == 2);
  CHECK(reopened.labels(id, 0) == s.labels(id, 0));
  fs::remove_all(dir);
}

TEST_CASE("HTTP workflow") {
  const fs::path dir = testing::scratch_dir("service");
  const auto sample = testing::small_sequence(4, 4);
  Server server(dir);
  auto c = server.client();
  const std::string id = seeded_project(c, sample.frames);
  const std::string base = "/api/projects/" + id;

  SUBCASE("project meta and frames") {
    const json meta = body_of(c.Get(base));
    CHECK(meta["frame_count"] == 4);
    const auto png = c.Get(base + "/frames/2");
    REQUIRE(png->status == 200);
    CHECK(png->get_header_value("Content-Type") == "image/png");
    CHECK(png->body == png_body(sample.frames[2]));
  }
  SUBCASE("segment returns polygons and the label map matches") {
    const json seg = body_of(c.Post(base + "/frames/1/segment"));
    CHECK(seg["width"] == sample.frames[1].image.width);
    REQUIRE(!seg["segments"].empty());
    for (const auto& s : seg["segments"]) {
      CHECK(s["polygon"].size() >= 3);
      CHECK(s["area"].get<int>() > 0);
    }
    const auto map = c.Get(base + "/frames/1/labelmap");
    REQUIRE(map->status == 200);
    const auto raster = png::decode_gray16({reinterpret_cast<const uint8_t*>(map->body.data()), map->body.size()});
    const LabelMap labels = seg::decode_label_map(raster);
    CHECK(labels.width == sample.frames[1].image.width);
    int max_label = -1;
    for (int v : labels.data) max_label = std::max(max_label, v);
    CHECK(max_label + 1 == static_cast<int>(seg["segments"].size()));
  }
  SUBCASE("labels honour If-Match") {
    const auto got = c.Get(base + "/frames/0/labels");
    const std::string etag = got->get_header_value("ETag");
    const json put = {{"assignments", {{{"segment", 0}, {"class", 2}}}}};
    httplib::Headers stale{{"If-Match", "\"" + etag + "\""}};
    CHECK(c.Put(base + "/frames/0/labels", stale, put.dump(), "application/json")->status == 200);
    CHECK(c.Put(base + "/frames/0/labels", stale, put.dump(), "application/json")->status == 409);
    const json labels = body_of(c.Get(base + "/frames/0/labels"));
    CHECK(labels["labels"][0]["class"] == 2);
    CHECK(labels["labels"][0]["source"] == "human");
  }
  SUBCASE("concurrent writers with the same revision") {
    const std::string etag = c.Get(base)->get_header_value("ETag");
    std::atomic<int> ok{0}, conflict{0};
    std::vector<std::thread> writers;
    for (int w = 0; w < 2; ++w) {
      writers.emplace_back([&, w] {
        auto local = server.client();
        const json put = {{"assignments", {{{"segment", 0}, {"class", w}}}}};
        const auto r = local.Put(base + "/frames/0/labels", {{"If-Match", etag}}, put.dump(), "application/json");
        if (r && r->status == 200) ++ok;
        if (r && r->status == 409) ++conflict;
      });
    }
    for (auto& t : writers) t.join();
    CHECK(ok == 1);
    CHECK(conflict == 1);
  }
  SUBCASE("error statuses") {
    CHECK(c.Get("/api/projects/missing")->status == 404);
    CHECK(c.Get(base + "/frames/9")->status == 404);
    CHECK(c.Post(base + "/frames/9/segment")->status == 404);
    const json bad_class = {{"assignments", {{{"segment", 0}, {"class", -5}}}}};
    CHECK(c.Put(base + "/frames/0/labels", bad_class.dump(), "application/json")->status == 422);
    const json bad_segment = {{"assignments", {{{"segment", 9999}, {"class", 0}}}}};
    CHECK(c.Put(base + "/frames/0/labels", bad_segment.dump(), "application/json")->status == 422);
    CHECK(c.Put(base + "/frames/0/labels", "{oops", "application/json")->status == 400);
    CHECK(c.Post(base + "/frames", "not a png", "image/png")->status >= 400);
    CHECK(c.Post(base + "/propagate", R"({"reference_frame": 0})", "application/json")->status == 422);
    CHECK(c.Get(base + "/frames/0/attention")->status == 503);
  }
  SUBCASE("propagation") {
    const size_t n0 = sample.frames[0].segments.size();
    std::vector<int> classes(n0);
    for (size_t j = 0; j < n0; ++j) classes[j] = static_cast<int>(j % 3);
    label_frame(c, id, 0, classes);

    const json empty = body_of(c.Post(base + "/propagate", R"({"reference_frame": 0, "horizon": 0})", "application/json"));
    CHECK(empty["frames"].empty());

    // a human label on frame 2 survives and feeds frame 3
    const size_t n2 = sample.frames[2].segments.size();
    label_frame(c, id, 2, std::vector<int>(n2, 1));
    const json out = body_of(c.Post(base + "/propagate", R"({"reference_frame": 0, "horizon": 3})", "application/json"));
    REQUIRE(out["frames"].size() == 3);
    CHECK(out["frames"][0]["frame"] == 1);
    CHECK(out["frames"][0]["labels"].size() == sample.frames[1].segments.size());
    for (const auto& l : out["frames"][1]["labels"]) CHECK(l == 1);
    for (const auto& s : out["frames"][1]["source"]) CHECK(s == "human");
    for (const auto& l : out["frames"][2]["labels"]) CHECK(l == 1);
    const json stored = body_of(c.Get(base + "/frames/3/labels"));
    CHECK(stored["labels"][0]["source"] == "propagated");
    CHECK(stored["labels"][0]["class"] == 1);
  }
  SUBCASE("state survives a restart") {
    label_frame(c, id, 1, {2});
    const json before = body_of(c.Get(base + "/frames/1/labels"));
    server.svc->stop();
    server.svc.reset();
    Server again(dir);
    auto c2 = again.client();
    CHECK(body_of(c2.Get(base + "/frames/1/labels")) == before);
    CHECK(body_of(c2.Get(base))["frame_count"] == 4);
  }
  fs::remove_all(dir);
}

TEST_CASE("attention endpoint with a model") {
  const fs::path dir = testing::scratch_dir("service_attn");
  const auto sample = testing::small_sequence(5, 2);
  auto model = std::make_shared<model::Model<float>>(testing::tiny_config(), 1);
  Server server(dir, model);
  auto c = server.client();
  const std::string id = seeded_project(c, sample.frames);
  const std::string base = "/api/projects/" + id;

  const json self = body_of(c.Get(base + "/frames/0/attention?layer=0&head=1"));
  CHECK(self["kind"] == model::to_string(model::AttentionKind::SelfA));
  CHECK(self["with"] == 1);
  const int rows = self["rows"];
  CHECK(rows == static_cast<int>(sample.frames[0].segments.size()));
  for (const auto& row : self["weights"]) {
    double sum = 0.0;
    for (double w : row) sum += w;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-4));
  }
  const json cross = body_of(c.Get(base + "/frames/0/attention?layer=1&head=0"));
  CHECK(cross["cols"] == static_cast<int>(sample.frames[1].segments.size()));
  CHECK(c.Get(base + "/frames/0/attention?layer=7")->status == 400);
  CHECK(c.Get(base + "/frames/0/attention?with=5")->status == 404);
  fs::remove_all(dir);
}
