#pragma once

#include "dif/correspond/correspond.hpp"
#include "dif/training/training.hpp"

#include <json.hpp>

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace dif::service {

using nlohmann::json;

struct Reply {
  int status = 200;
  json body;
};

struct ServiceOptions {
  int resolution = correspond::kDefaultResolution;  // default mesh resolution
  int max_resolution = 256;
  correspond::EditOptions edit;                    // per-request overrides: iterations, lr
  double gamma = correspond::kDefaultGamma;
  int correspond_samples = correspond::kDenseSamples;
};

/// In-memory editing sessions over one read-only checkpoint. Sessions do not
/// survive a restart.
class Service {
 public:
  explicit Service(training::Checkpoint ckpt, ServiceOptions opt = {});

  Reply health() const;
  /// {shape_id} or {code: [...]} -> {session_id, mesh}
  Reply create_session(const std::string& body);
  /// Mesh of a session; with `reference`, per-vertex uncertainty against it.
  Reply mesh(const std::string& session, const std::string& resolution, const std::string& reference);
  /// {session, handles: [{p1 | p1_prime, p2}], mode, iterations?, lr?} -> {mesh, code_delta_norm, ...}
  Reply edit(const std::string& body);
  /// {session} -> {mesh, depth}
  Reply undo(const std::string& body);
  /// Correspondences from A's mesh vertices to B's surface.
  Reply correspond(const std::string& a, const std::string& b, const std::string& limit);

  /// Registers every endpoint plus CORS headers on an httplib server.
  void mount(httplib::Server& server);

  const training::Checkpoint& checkpoint() const { return ckpt_; }

 private:
  struct State {
    correspond::Code code;
    correspond::TriMesh mesh;  // at the default resolution
  };
  struct Session {
    std::mutex mutex;
    std::atomic<bool> busy{false};
    State current;
    std::vector<State> history;
  };

  std::shared_ptr<Session> find(const std::string& id) const;
  correspond::TriMesh surface(const correspond::Code& code, int resolution) const;

  training::Checkpoint ckpt_;
  ServiceOptions opt_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
};

/// Flat vertex and triangle arrays.
json mesh_json(const correspond::TriMesh& mesh);

}  // namespace dif::service
