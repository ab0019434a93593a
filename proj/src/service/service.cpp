#include "dif/service/service.hpp"

#include "dif/geometry/sampling.hpp"

#include <httplib.h>

#include <cmath>

namespace dif::service {

using correspond::Code;
using correspond::TriMesh;
using correspond::Vec3;

namespace {

/// Malformed request; status 400 naming the field.
struct BadRequest {
  std::string field, message;
};

Reply error(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  return {status, extra};
}

json parse_body(const std::string& body) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw BadRequest{"body", "expected a JSON object"};
    return j;
  } catch (const json::parse_error& e) {
    throw BadRequest{"body", std::string("invalid JSON: ") + e.what()};
  }
}

const json& field(const json& j, const std::string& name) {
  auto it = j.find(name);
  if (it == j.end()) throw BadRequest{name, "missing field"};
  return *it;
}

std::string string_field(const json& j, const std::string& name) {
  const json& v = field(j, name);
  if (!v.is_string()) throw BadRequest{name, "expected a string"};
  return v.get<std::string>();
}

Vec3 vec3_field(const json& j, const std::string& name) {
  const json& v = field(j, name);
  if (!v.is_array() || v.size() != 3) throw BadRequest{name, "expected an array of 3 numbers"};
  Vec3 p;
  for (int i = 0; i < 3; ++i) {
    if (!v[static_cast<std::size_t>(i)].is_number()) throw BadRequest{name, "expected an array of 3 numbers"};
    p(i) = v[static_cast<std::size_t>(i)].get<double>();
  }
  if (!p.allFinite()) throw BadRequest{name, "non-finite coordinate"};
  return p;
}

int int_param(const std::string& s, const std::string& name, int fallback) {
  if (s.empty()) return fallback;
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw BadRequest{name, "expected an integer"};
  }
}

/// Mesh vertices plus a dense resampling of its surface.
Eigen::Matrix3Xd reference_points(const TriMesh& m, int dense) {
  std::mt19937_64 rng(0);
  const Eigen::Matrix3Xd extra = geometry::sample_uniform(m, dense, rng);
  const auto nv = static_cast<Eigen::Index>(m.vertices.size());
  Eigen::Matrix3Xd out(3, nv + extra.cols());
  for (Eigen::Index i = 0; i < nv; ++i) out.col(i) = m.vertices[static_cast<std::size_t>(i)];
  out.rightCols(extra.cols()) = extra;
  return out;
}

Reply bad(const BadRequest& b) { return error(400, b.field + ": " + b.message, {{"field", b.field}}); }

}  // namespace

json mesh_json(const TriMesh& mesh) {
  std::vector<float> v;
  v.reserve(mesh.vertices.size() * 3);
  for (const auto& p : mesh.vertices)
    for (int i = 0; i < 3; ++i) v.push_back(static_cast<float>(p(i)));
  std::vector<int> t;
  t.reserve(mesh.triangles.size() * 3);
  for (const auto& tri : mesh.triangles)
    for (int i = 0; i < 3; ++i) t.push_back(tri(i));
  return {{"vertices", v}, {"triangles", t}, {"vertex_count", mesh.vertices.size()}, {"triangle_count", mesh.triangles.size()}};
}

Service::Service(training::Checkpoint ckpt, ServiceOptions opt) : ckpt_(std::move(ckpt)), opt_(opt) {}

TriMesh Service::surface(const Code& code, int resolution) const {
  return correspond::reconstruct(ckpt_.model, code, resolution);
}

std::shared_ptr<Service::Session> Service::find(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

Reply Service::health() const {
  return {200,
          {{"status", "ok"},
           {"shapes", ckpt_.shape_ids},
           {"latent_dim", ckpt_.model.config.latent_dim},
           {"variational", ckpt_.variational()}}};
}

Reply Service::create_session(const std::string& body) {
  try {
    const json j = parse_body(body);
    Code code;
    if (j.contains("shape_id")) {
      const std::string id = string_field(j, "shape_id");
      const int i = ckpt_.find(id);
      if (i < 0) return error(404, "unknown shape_id '" + id + "'");
      code = ckpt_.codes[static_cast<std::size_t>(i)];
    } else if (j.contains("code")) {
      const json& c = j["code"];
      if (!c.is_array() || static_cast<int>(c.size()) != ckpt_.model.config.latent_dim)
        throw BadRequest{"code", "expected an array of " + std::to_string(ckpt_.model.config.latent_dim) + " numbers"};
      code.resize(static_cast<Eigen::Index>(c.size()));
      for (std::size_t i = 0; i < c.size(); ++i) {
        if (!c[i].is_number()) throw BadRequest{"code", "expected numbers"};
        code(static_cast<Eigen::Index>(i)) = c[i].get<float>();
      }
      if (!code.allFinite()) throw BadRequest{"code", "non-finite entry"};
    } else {
      throw BadRequest{"shape_id", "missing field (or give 'code')"};
    }
    auto s = std::make_shared<Session>();
    s->current = {code, surface(code, opt_.resolution)};
    std::string id;
    {
      std::lock_guard lock(sessions_mutex_);
      id = "s" + std::to_string(next_id_++);
      sessions_[id] = s;
    }
    return {200, {{"session_id", id}, {"mesh", mesh_json(s->current.mesh)}}};
  } catch (const BadRequest& b) {
    return bad(b);
  }
}

Reply Service::mesh(const std::string& session, const std::string& resolution, const std::string& reference) {
  try {
    if (session.empty()) throw BadRequest{"session", "missing parameter"};
    auto s = find(session);
    if (!s) return error(404, "unknown session '" + session + "'");
    const int res = int_param(resolution, "resolution", opt_.resolution);
    if (res < 2 || res > opt_.max_resolution)
      throw BadRequest{"resolution", "must be in [2, " + std::to_string(opt_.max_resolution) + "]"};
    State st;
    {
      std::lock_guard lock(s->mutex);
      st = s->current;
    }
    TriMesh m = res == opt_.resolution ? st.mesh : surface(st.code, res);
    json out = {{"session_id", session}, {"resolution", res}, {"mesh", mesh_json(m)}};
    if (!reference.empty()) {
      auto r = find(reference);
      if (!r) return error(404, "unknown reference session '" + reference + "'");
      State rs;
      {
        std::lock_guard lock(r->mutex);
        rs = r->current;
      }
      std::vector<double> u(m.vertices.size(), 0.0);
      if (!m.vertices.empty()) {
        if (rs.mesh.triangles.empty()) return error(422, "reference session has an empty surface");
        const Eigen::Matrix3Xd dense = reference_points(rs.mesh, opt_.correspond_samples);
        Eigen::Matrix3Xd pts(3, static_cast<Eigen::Index>(m.vertices.size()));
        for (std::size_t i = 0; i < m.vertices.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = m.vertices[i];
        const auto pairs = correspond::correspond(ckpt_.model, st.code, rs.code, pts, dense, opt_.gamma);
        for (std::size_t i = 0; i < pairs.size(); ++i) u[i] = pairs[i].u;
      }
      out["reference"] = reference;
      out["uncertainty"] = u;
    }
    return {200, out};
  } catch (const BadRequest& b) {
    return bad(b);
  }
}

Reply Service::edit(const std::string& body) {
  std::shared_ptr<Session> s;
  try {
    const json j = parse_body(body);
    const std::string id = string_field(j, "session");
    s = find(id);
    if (!s) return error(404, "unknown session '" + id + "'");

    correspond::EditRequest req;
    const std::string mode = j.value("mode", std::string("move"));
    if (mode == "move") req.mode = correspond::EditMode::kMove;
    else if (mode == "add" || mode == "add-structure") req.mode = correspond::EditMode::kAddStructure;
    else throw BadRequest{"mode", "expected 'move' or 'add'"};
    const json& handles = field(j, "handles");
    if (!handles.is_array() || handles.empty()) throw BadRequest{"handles", "expected a non-empty array"};
    json echo = json::array();
    for (std::size_t i = 0; i < handles.size(); ++i) {
      const json& h = handles[i];
      const std::string at = "handles[" + std::to_string(i) + "]";
      if (!h.is_object()) throw BadRequest{at, "expected an object"};
      const char* start = req.mode == correspond::EditMode::kMove ? "p1" : "p1_prime";
      if (!h.contains(start)) throw BadRequest{at + "." + start, "missing field"};
      correspond::Handle hd;
      try {
        hd.p1 = vec3_field(h, start);
        hd.p2 = vec3_field(h, "p2");
      } catch (const BadRequest& b) {
        throw BadRequest{at + "." + b.field, b.message};
      }
      req.handles.push_back(hd);
      echo.push_back({{start, {hd.p1.x(), hd.p1.y(), hd.p1.z()}}, {"p2", {hd.p2.x(), hd.p2.y(), hd.p2.z()}}});
    }
    correspond::EditOptions eo = opt_.edit;
    eo.resolution = opt_.resolution;
    if (j.contains("iterations")) {
      if (!j["iterations"].is_number_integer() || j["iterations"].get<int>() < 0) throw BadRequest{"iterations", "expected a non-negative integer"};
      eo.iterations = j["iterations"].get<int>();
    }
    if (j.contains("lr")) {
      if (!j["lr"].is_number() || !(j["lr"].get<double>() > 0)) throw BadRequest{"lr", "expected a positive number"};
      eo.lr = j["lr"].get<double>();
    }

    bool expected = false;
    if (!s->busy.compare_exchange_strong(expected, true)) return error(409, "an edit is already running on session '" + id + "'");
    struct Release {
      std::atomic<bool>& b;
      ~Release() { b = false; }
    } release{s->busy};

    {
      std::lock_guard lock(s->mutex);
      req.alpha = s->current.code;
    }
    correspond::EditResult r;
    try {
      r = correspond::edit(ckpt_.model, req, eo);
    } catch (const correspond::EditError& e) {
      return error(422, e.what());
    } catch (const correspond::Diverged& e) {
      return error(422, e.what(), {{"trace", e.trace()}});
    }
    const double delta = (r.alpha - req.alpha).cast<double>().norm();
    std::size_t depth = 0;
    {
      std::lock_guard lock(s->mutex);
      s->history.push_back(s->current);
      s->current = {r.alpha, r.mesh};
      depth = s->history.size();
    }
    return {200,
            {{"session_id", id},
             {"mesh", mesh_json(r.mesh)},
             {"code_delta_norm", delta},
             {"handle_residual", r.handle_residual},
             {"surface_residual", r.surface_residual},
             {"handles", echo},
             {"trace", r.log},
             {"depth", depth}}};
  } catch (const BadRequest& b) {
    return bad(b);
  }
}

Reply Service::undo(const std::string& body) {
  try {
    const json j = parse_body(body);
    const std::string id = string_field(j, "session");
    auto s = find(id);
    if (!s) return error(404, "unknown session '" + id + "'");
    if (s->busy) return error(409, "an edit is running on session '" + id + "'");
    std::lock_guard lock(s->mutex);
    if (s->history.empty()) return error(409, "nothing to undo");
    s->current = s->history.back();
    s->history.pop_back();
    return {200, {{"session_id", id}, {"mesh", mesh_json(s->current.mesh)}, {"depth", s->history.size()}}};
  } catch (const BadRequest& b) {
    return bad(b);
  }
}

Reply Service::correspond(const std::string& a, const std::string& b, const std::string& limit) {
  try {
    if (a.empty()) throw BadRequest{"sessionA", "missing parameter"};
    if (b.empty()) throw BadRequest{"sessionB", "missing parameter"};
    auto sa = find(a), sb = find(b);
    if (!sa) return error(404, "unknown session '" + a + "'");
    if (!sb) return error(404, "unknown session '" + b + "'");
    const int max_pairs = int_param(limit, "limit", 0);
    if (max_pairs < 0) throw BadRequest{"limit", "must be >= 0"};
    State as, bs;
    {
      std::lock_guard lock(sa->mutex);
      as = sa->current;
    }
    {
      std::lock_guard lock(sb->mutex);
      bs = sb->current;
    }
    if (as.mesh.vertices.empty() || bs.mesh.triangles.empty()) return error(422, "empty surface");
    std::size_t n = as.mesh.vertices.size();
    if (max_pairs > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(max_pairs));
    Eigen::Matrix3Xd pts(3, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) pts.col(static_cast<Eigen::Index>(i)) = as.mesh.vertices[i];
    const Eigen::Matrix3Xd dense = reference_points(bs.mesh, opt_.correspond_samples);
    const auto pairs = correspond::correspond(ckpt_.model, as.code, bs.code, pts, dense, opt_.gamma);
    json arr = json::array();
    for (const auto& p : pairs)
      arr.push_back({{"p_i", {p.p_i.x(), p.p_i.y(), p.p_i.z()}}, {"p_j", {p.p_j.x(), p.p_j.y(), p.p_j.z()}}, {"u", p.u}});
    return {200, {{"sessionA", a}, {"sessionB", b}, {"pairs", arr}}};
  } catch (const BadRequest& e) {
    return bad(e);
  }
}

void Service::mount(httplib::Server& server) {
  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto guarded = [send](auto fn) {
    return [send, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, fn(req));
      } catch (const std::exception& e) {
        send(res, error(500, e.what()));
      }
    };
  };
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/health", guarded([this](const httplib::Request&) { return health(); }));
  server.Post("/session", guarded([this](const httplib::Request& r) { return create_session(r.body); }));
  server.Get("/mesh", guarded([this](const httplib::Request& r) {
    return mesh(r.get_param_value("session"), r.get_param_value("resolution"), r.get_param_value("reference"));
  }));
  server.Post("/edit", guarded([this](const httplib::Request& r) { return edit(r.body); }));
  server.Post("/undo", guarded([this](const httplib::Request& r) { return undo(r.body); }));
  server.Get("/correspond", guarded([this](const httplib::Request& r) {
    return correspond(r.get_param_value("sessionA"), r.get_param_value("sessionB"), r.get_param_value("limit"));
  }));
}

}  // namespace dif::service
