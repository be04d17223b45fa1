#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "ant/model.hpp"
#include "ant/project_store.hpp"

namespace ant::service {

// HTTP front end over a ProjectStore.
//
//   POST /api/projects                               {palette?}           -> {id, revision}
//   GET  /api/projects/{id}                                               -> meta
//   POST /api/projects/{id}/frames                   PNG body             -> {frame_index, revision}
//   GET  /api/projects/{id}/frames/{n}                                    -> PNG as uploaded
//   POST /api/projects/{id}/frames/{n}/segment                            -> segments with outlines
//   GET  /api/projects/{id}/frames/{n}/labelmap                           -> 16-bit PNG
//   GET  /api/projects/{id}/frames/{n}/labels                             -> labels with sources
//   PUT  /api/projects/{id}/frames/{n}/labels        {assignments, source} -> {revision}; honours If-Match
//   POST /api/projects/{id}/propagate                {reference_frame, horizon} -> per-frame predictions
//   GET  /api/projects/{id}/frames/{n}/attention?layer=&head=&with=      -> attention weights
//
// Status codes: 404 unknown project or frame, 409 revision conflict, 422
// invalid label class or segment, 400 malformed request.
//
// Without a model, propagation falls back to nearest-centroid matching and
// the attention endpoint answers 503.
class Service {
 public:
  Service(std::shared_ptr<const model::Model<float>> model, const std::filesystem::path& store_root);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Blocks until stop().
  void listen(const std::string& host, int port);
  // Binds an ephemeral port, serves on a background thread and returns the port.
  int start(const std::string& host = "127.0.0.1");
  void stop();

  store::ProjectStore& store();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ant::service
