#include "dif/cli/cli.hpp"

#include "dif/correspond/correspond.hpp"
#include "dif/geometry/io.hpp"
#include "dif/geometry/marching_cubes.hpp"
#include "dif/geometry/mesh.hpp"
#include "dif/geometry/sampling.hpp"
#include "dif/geometry/toys.hpp"
#include "dif/service/service.hpp"
#include "dif/training/dataset.hpp"
#include "dif/training/training.hpp"
#include "dif/util/parallel.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace dif::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t' || c == '\n') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<double> parse_point(const std::string& s) {
  const auto parts = split_list(s);
  if (parts.size() != 3) throw UsageError("expected a point 'x,y,z', got '" + s + "'");
  std::vector<double> p;
  for (const auto& t : parts) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.size() || !std::isfinite(v)) throw UsageError("bad coordinate '" + t + "' in '" + s + "'");
    p.push_back(v);
  }
  return p;
}

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t i) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + i + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<fs::path> files_with(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void ensure_dir(const fs::path& p) {
  if (!p.empty()) fs::create_directories(p);
}

void ensure_parent(const fs::path& p) { ensure_dir(p.parent_path()); }

training::Checkpoint load_ckpt(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  return training::load_checkpoint(path);
}

/// A shape id of the checkpoint or a JSON file with a "code" array.
correspond::Code resolve_code(const training::Checkpoint& ck, const std::string& ref) {
  const int i = ck.find(ref);
  if (i >= 0) return ck.codes[static_cast<std::size_t>(i)];
  if (!fs::is_regular_file(ref)) throw UsageError("unknown shape '" + ref + "' (not an id in the checkpoint or a code file)");
  std::ifstream in(ref);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("code file " + ref + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("code") || !j["code"].is_array()) throw UsageError("code file " + ref + ": missing \"code\" array");
  const auto v = j["code"].get<std::vector<float>>();
  if (static_cast<int>(v.size()) != ck.model.config.latent_dim)
    throw UsageError("code file " + ref + ": length " + std::to_string(v.size()) + ", expected " +
                     std::to_string(ck.model.config.latent_dim));
  return Eigen::Map<const Eigen::VectorXf>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<float> to_vec(const correspond::Code& c) { return {c.data(), c.data() + c.size()}; }

void write_json(const json& j, const fs::path& path) {
  ensure_parent(path);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

correspond::Vec3 point_of(const std::string& s) {
  const auto p = parse_point(s);
  return {p[0], p[1], p[2]};
}

int axis_of(const std::string& s) { return s == "x" ? 0 : s == "y" ? 1 : 2; }

losses::Category category_of(const std::string& s) {
  if (s == "car") return losses::Category::kCar;
  if (s == "plane" || s == "airplane") return losses::Category::kPlane;
  if (s == "chair") return losses::Category::kChair;
  return losses::Category::kTable;
}

// ---- option storage -------------------------------------------------------------

struct Options {
  int threads = 0;
  std::string config;

  // shared
  std::string ckpt, out, data, shape, a, b;
  std::uint64_t seed = 0;
  int resolution = correspond::kDefaultResolution;
  double gamma = correspond::kDefaultGamma;
  int dense = correspond::kDenseSamples;

  // gen-toys
  std::string family = "table", stretcher = "mixed";
  int count = 20;

  // prep
  std::string in;
  int surface = 50000, free = 50000, views = geometry::kViewCount;

  // train
  std::string preset = "toy", category = "table", mode = "norm", log;
  int epochs = 0, batch_size = 0, surface_points = 0, free_points = 0, latent_dim = 0;
  double lr = 0;
  bool no_normal = false, no_smooth = false, no_correction = false;

  // embed
  std::string samples, mesh_out, code_out;
  int iterations = 0;

  // mesh
  bool templ = false;

  // correspond
  int points = 0;

  // labels
  std::string sources, targets = "all", report;
  int k = 10;
  int embed_iterations = 300;

  // texture
  std::string source, target, source_mesh, uncertainty;

  // edit
  std::vector<std::string> p1, p2;
  std::string edit_mode = "move";
  bool project = false;

  // interp
  int steps = 5;
  int retrieve = 0;

  // slice
  std::string axis = "y";
  double offset = 0;
  std::vector<double> levels;

  // serve
  std::string bind = "127.0.0.1:8080";
};

// ---- subcommands ----------------------------------------------------------------

int cmd_gen_toys(const Options& o, std::ostream& out) {
  const auto family = geometry::parse_family(o.family);
  ensure_dir(o.out);
  for (int i = 0; i < o.count; ++i) {
    std::optional<bool> st;
    if (o.stretcher == "mixed") st = i % 2 == 0;
    if (o.stretcher == "all") st = true;
    if (o.stretcher == "none") st = false;
    const auto spec = geometry::ToySpec::random(family, mix(o.seed, static_cast<std::uint64_t>(i)), st);
    const auto toy = geometry::toy_family(spec);
    char name[64];
    std::snprintf(name, sizeof name, "%s_%03d", geometry::family_name(family), i);
    const fs::path base = fs::path(o.out) / name;
    geometry::save_mesh(toy.mesh, base.string() + ".obj");
    geometry::save_labels(toy.mesh.labels, base.string() + ".vlabels");
    geometry::save_keypoints(toy.keypoints, base.string() + ".keypoints");
    out << name << (spec.stretcher ? " stretcher" : "") << "\n";
  }
  return kExitOk;
}

int cmd_prep(const Options& o, std::ostream& out) {
  const auto meshes = files_with(o.in, ".obj");
  if (meshes.empty()) throw UsageError("no .obj files in " + o.in);
  ensure_dir(o.out);
  for (std::size_t i = 0; i < meshes.size(); ++i) {
    const auto& path = meshes[i];
    auto mesh = geometry::load_mesh(path);
    const fs::path stem = path.parent_path() / path.stem();
    const fs::path vlabels = stem.string() + ".vlabels";
    if (fs::exists(vlabels)) {
      mesh.labels = geometry::load_labels(vlabels);
      if (mesh.labels.size() != mesh.vertices.size())
        throw UsageError(vlabels.string() + ": " + std::to_string(mesh.labels.size()) + " labels for " +
                         std::to_string(mesh.vertices.size()) + " vertices");
    }
    const auto norm = geometry::normalize_mesh(mesh);
    const auto s = geometry::sample_shape(mesh, o.surface, o.free, mix(o.seed, i), o.views);
    const fs::path base = fs::path(o.out) / path.stem();
    geometry::save_samples(s, base.string() + ".difs");
    if (!s.labels.empty()) geometry::save_labels(s.labels, base.string() + ".labels");
    const fs::path keys = stem.string() + ".keypoints";
    if (fs::exists(keys)) {
      auto k = geometry::load_keypoints(keys);
      for (auto& kp : k) kp.position = norm.apply(kp.position);
      geometry::save_keypoints(k, base.string() + ".keypoints");
    }
    out << path.stem().string() << ": " << s.surface.cols() << " surface, " << s.free.cols() << " free\n";
  }
  return kExitOk;
}

void write_loss_header(std::ostream& f) {
  f << "epoch,total,sdf,sdf_value,sdf_normal,sdf_eikonal,sdf_offsurface,normal,smooth,correction,reg\n";
}

void write_loss_row(std::ostream& f, const training::EpochLog& l) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", l.epoch, l.total, l.sdf, l.sdf_value,
                l.sdf_normal, l.sdf_eikonal, l.sdf_offsurface, l.normal, l.smooth, l.correction, l.reg);
  f << buf;
}

int cmd_train(const Options& o, const CLI::App& sub, const json& extra, std::ostream& out, std::ostream& err) {
  training::TrainConfig c = o.preset == "toy" ? training::toy_config() : training::TrainConfig{};
  auto given = [&](const char* name) { return sub.get_option(name)->count() > 0; };
  if (given("--category")) c.weights = losses::LossWeights::for_category(category_of(o.category));
  try {
    training::apply_json(extra, c);
  } catch (const std::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (given("--epochs")) c.epochs = o.epochs;
  if (given("--batch-size")) c.batch_size = o.batch_size;
  if (given("--surface-points")) c.surface_points = o.surface_points;
  if (given("--free-points")) c.free_points = o.free_points;
  if (given("--latent-dim")) c.model.latent_dim = o.latent_dim;
  if (given("--lr")) c.lr = o.lr;
  if (given("--seed")) c.seed = o.seed;
  if (given("--mode")) c.mode = o.mode == "variational" ? training::RegMode::kVariational : training::RegMode::kNorm;
  if (o.no_normal) c.ablation.no_normal = true;
  if (o.no_smooth) c.ablation.no_smooth = true;
  if (o.no_correction) c.ablation.no_correction = true;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto data = training::load_dataset(o.data);
  if (data.shapes.empty()) throw UsageError("no .difs caches in " + o.data);
  out << "training on " << data.shapes.size() << " shapes, " << c.epochs << " epochs\n";

  const fs::path log_path = o.log.empty() ? fs::path(o.out).replace_extension(".loss.csv") : fs::path(o.log);
  ensure_parent(log_path);
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  write_loss_header(log);

  training::Checkpoint ck;
  try {
    ck = training::train(data.shapes, c, data.ids, [&](const training::EpochLog& l) {
      write_loss_row(log, l);
      log.flush();
      char buf[256];
      std::snprintf(buf, sizeof buf, "epoch %d total %.5g sdf %.5g normal %.4g smooth %.4g correction %.4g reg %.4g (%.2fs)\n",
                    l.epoch, l.total, l.sdf, l.normal, l.smooth, l.correction, l.reg, l.seconds);
      out << buf << std::flush;
    });
  } catch (const training::TrainingDiverged& e) {
    err << "training diverged: " << e.what() << " (term " << e.term() << ")\n";
    auto last = e.last_good();
    for (auto& h : last.history) h.seconds = 0;
    const fs::path p = o.out + ".last_good";
    training::save_checkpoint(last, p);
    err << "last good state written to " << p.string() << "\n";
    return kExitFailure;
  }
  for (auto& h : ck.history) h.seconds = 0;
  ensure_parent(o.out);
  training::save_checkpoint(ck, o.out);
  out << "wrote " << o.out << " and " << log_path.string() << "\n";
  return kExitOk;
}

int cmd_embed(const Options& o, const CLI::App& sub, std::ostream& out) {
  const auto ck = load_ckpt(o.ckpt);
  const auto s = training::to_sample_set(geometry::load_samples(o.samples));
  correspond::EmbedOptions eo;
  eo.lr = sub.get_option("--lr")->count() ? o.lr : ck.config.lr;
  if (o.iterations > 0) eo.iterations = o.iterations;
  eo.seed = o.seed;
  eo.init_std = ck.config.latent_init_std;
  const auto r = correspond::embed(ck, s, eo);
  write_json({{"code", to_vec(r.code)}, {"trace", r.trace}}, o.out);
  out << "final loss " << (r.trace.empty() ? 0.0 : r.trace.back()) << "\n";
  if (!o.mesh_out.empty()) {
    ensure_parent(o.mesh_out);
    geometry::save_mesh(correspond::reconstruct(ck.model, r.code, o.resolution), o.mesh_out);
  }
  return kExitOk;
}

int cmd_mesh(const Options& o, std::ostream& out) {
  const auto ck = load_ckpt(o.ckpt);
  geometry::TriMesh m;
  if (o.templ) {
    m = correspond::template_isosurfaces(ck.model, {0.0}, o.resolution).front();
  } else {
    if (o.shape.empty()) throw UsageError("--shape or --template is required");
    m = correspond::reconstruct(ck.model, resolve_code(ck, o.shape), o.resolution);
  }
  ensure_parent(o.out);
  geometry::save_mesh(m, o.out);
  out << m.num_vertices() << " vertices, " << m.num_triangles() << " triangles\n";
  return kExitOk;
}

int cmd_correspond(const Options& o, std::ostream& out) {
  const auto ck = load_ckpt(o.ckpt);
  const auto ca = resolve_code(ck, o.a), cb = resolve_code(ck, o.b);
  Eigen::Matrix3Xd pa;
  if (o.points > 0) {
    pa = correspond::dense_surface(ck.model, ca, o.points, o.resolution, o.seed);
  } else {
    const auto m = correspond::reconstruct(ck.model, ca, o.resolution);
    pa.resize(3, static_cast<Eigen::Index>(m.vertices.size()));
    for (std::size_t i = 0; i < m.vertices.size(); ++i) pa.col(static_cast<Eigen::Index>(i)) = m.vertices[i];
  }
  const auto pairs = correspond::correspond(ck.model, ca, cb, pa, o.gamma, o.resolution, mix(o.seed, 1));
  ensure_parent(o.out);
  correspond::write_correspondences_csv(pairs, o.out);
  double mean_u = 0;
  for (const auto& p : pairs) mean_u += p.u;
  out << pairs.size() << " pairs, mean uncertainty " << (pairs.empty() ? 0.0 : mean_u / static_cast<double>(pairs.size())) << "\n";
  return kExitOk;
}

struct LabeledCache {
  Eigen::Matrix3Xd points;
  std::vector<int> labels;
};

LabeledCache labeled_points(const fs::path& dir, const std::string& id, int n, std::uint64_t seed) {
  const auto s = geometry::load_samples(dir / (id + ".difs"));
  const auto labels = geometry::load_labels(dir / (id + ".labels"));
  if (static_cast<Eigen::Index>(labels.size()) != s.surface.cols()) throw UsageError(id + ": label count differs from surface samples");
  std::vector<Eigen::Index> idx(labels.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  if (n > 0 && static_cast<std::size_t>(n) < idx.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(n));
    std::sort(idx.begin(), idx.end());
  }
  LabeledCache c;
  c.points.resize(3, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    c.points.col(static_cast<Eigen::Index>(i)) = s.surface.col(idx[i]);
    c.labels.push_back(labels[static_cast<std::size_t>(idx[i])]);
  }
  return c;
}

int cmd_labels(const Options& o, std::ostream& out) {
  const auto ck = load_ckpt(o.ckpt);
  const fs::path dir = o.data;
  auto code_for = [&](const std::string& id) -> correspond::Code {
    const int i = ck.find(id);
    if (i >= 0) return ck.codes[static_cast<std::size_t>(i)];
    const fs::path cache = dir / (id + ".difs");
    if (!fs::exists(cache)) throw UsageError("unknown shape '" + id + "'");
    correspond::EmbedOptions eo;
    eo.lr = ck.config.lr;
    eo.iterations = o.embed_iterations;
    eo.seed = mix(o.seed, std::hash<std::string>{}(id));
    return correspond::embed(ck, training::to_sample_set(geometry::load_samples(cache)), eo).code;
  };

  const auto source_ids = split_list(o.sources);
  if (source_ids.empty()) throw UsageError("--sources needs at least one id");
  std::vector<std::string> target_ids;
  if (o.targets == "all") {
    const std::set<std::string> src(source_ids.begin(), source_ids.end());
    for (const auto& p : files_with(dir, ".labels"))
      if (!src.count(p.stem().string())) target_ids.push_back(p.stem().string());
  } else {
    target_ids = split_list(o.targets);
  }
  if (target_ids.empty()) throw UsageError("no targets");

  std::vector<correspond::LabeledShape> sources;
  for (const auto& id : source_ids) {
    auto lp = labeled_points(dir, id, o.points, mix(o.seed, std::hash<std::string>{}(id)));
    sources.push_back({code_for(id), std::move(lp.points), std::move(lp.labels)});
  }

  std::ofstream rep;
  if (!o.report.empty()) {
    ensure_parent(o.report);
    rep.open(o.report);
    if (!rep) throw std::runtime_error("cannot write " + o.report);
    rep << "target,method";
    for (int l = 0; l < geometry::kPartCount; ++l) rep << ",iou_" << geometry::part_name(l);
    rep << ",mean_iou\n";
  }
  double sum_dif = 0, sum_base = 0;
  for (const auto& id : target_ids) {
    const auto lp = labeled_points(dir, id, o.points, mix(o.seed, std::hash<std::string>{}(id)));
    const auto code = code_for(id);
    const auto dif = correspond::score_labels(correspond::transfer_labels(ck.model, sources, code, lp.points, o.k), lp.labels);
    const auto base =
        correspond::score_labels(correspond::transfer_labels(ck.model, sources, code, lp.points, o.k, true), lp.labels);
    sum_dif += dif.mean_iou;
    sum_base += base.mean_iou;
    if (rep.is_open()) {
      for (const auto* r : {&dif, &base}) {
        rep << id << "," << (r == &dif ? "dif" : "closest_point");
        for (int l = 0; l < geometry::kPartCount; ++l) {
          const double v = l < static_cast<int>(r->part_iou.size()) ? r->part_iou[static_cast<std::size_t>(l)] : -1.0;
          rep << ",";
          if (v >= 0) rep << v;
        }
        rep << "," << r->mean_iou << "\n";
      }
    }
  }
  const double n = static_cast<double>(target_ids.size());
  out << target_ids.size() << " targets: mean IoU dif " << sum_dif / n << ", closest point " << sum_base / n << "\n";
  return kExitOk;
}

int cmd_texture(const Options& o, std::ostream& out) {
  const auto ck = load_ckpt(o.ckpt);
  const auto cs = resolve_code(ck, o.source), ct = resolve_code(ck, o.target);
  geometry::TriMesh src;
  if (!o.source_mesh.empty()) {
    src = geometry::load_mesh(o.source_mesh);
    if (src.colors.empty()) throw UsageError(o.source_mesh + " has no vertex colors");
  } else {
    src = correspond::reconstruct(ck.model, cs, o.resolution);
    for (const auto& v : src.vertices) src.colors.push_back(((v.array() + 1.0) * 0.5).cwiseMax(0.0).cwiseMin(1.0).cast<float>().matrix());
  }
  const auto tgt = correspond::reconstruct(ck.model, ct, o.resolution);
  const auto r = correspond::transfer_texture(ck.model, src, cs, tgt, ct, o.gamma, o.dense, o.seed);
  ensure_parent(o.out);
  geometry::save_mesh(r.mesh, o.out);
  if (!o.uncertainty.empty()) {
    ensure_parent(o.uncertainty);
    std::ofstream f(o.uncertainty);
    f << "vertex,u\n";
    for (std::size_t i = 0; i < r.uncertainty.size(); ++i) f << i << "," << r.uncertainty[i] << "\n";
  }
  out << r.mesh.num_vertices() << " vertices colored\n";
  return kExitOk;
}

int cmd_edit(const Options& o, const CLI::App& sub, std::ostream& out) {
  const auto ck = load_ckpt(o.ckpt);
  if (o.p1.size() != o.p2.size()) throw UsageError("--p1 and --p2 must be given the same number of times");
  correspond::EditRequest req;
  req.alpha = resolve_code(ck, o.shape);
  req.mode = o.edit_mode == "add" ? correspond::EditMode::kAddStructure : correspond::EditMode::kMove;
  const correspond::ShapeField field(ck.model, req.alpha);
  for (std::size_t i = 0; i < o.p1.size(); ++i) {
    correspond::Handle h{point_of(o.p1[i]), point_of(o.p2[i])};
    if (o.project && req.mode == correspond::EditMode::kMove) {
      const auto q = field.project(h.p1);
      h.p2 += q - h.p1;
      h.p1 = q;
    }
    req.handles.push_back(h);
  }
  correspond::EditOptions eo;
  if (o.iterations > 0) eo.iterations = o.iterations;
  if (sub.get_option("--lr")->count()) eo.lr = o.lr;
  eo.resolution = o.out.empty() ? 0 : o.resolution;
  correspond::EditResult r;
  try {
    r = correspond::edit(ck.model, req, eo);
  } catch (const correspond::EditError& e) {
    throw UsageError(e.what());
  }
  if (!o.out.empty()) {
    ensure_parent(o.out);
    geometry::save_mesh(r.mesh, o.out);
  }
  if (!o.code_out.empty()) write_json({{"code", to_vec(r.alpha)}, {"log", r.log}}, o.code_out);
  out << "handle residual " << r.handle_residual << ", surface residual " << r.surface_residual << ", code change "
      << (r.alpha - req.alpha).cast<double>().norm() << "\n";
  return kExitOk;
}

int cmd_interp(const Options& o, std::ostream& out) {
  const auto ck = load_ckpt(o.ckpt);
  const auto ca = resolve_code(ck, o.a), cb = resolve_code(ck, o.b);
  if (o.steps < 2) throw UsageError("--steps must be >= 2");
  ensure_dir(o.out);
  for (int s = 0; s < o.steps; ++s) {
    const double t = static_cast<double>(s) / (o.steps - 1);
    const auto c = correspond::latent_interp(ca, cb, t);
    char name[64];
    std::snprintf(name, sizeof name, "interp_%02d.obj", s);
    geometry::save_mesh(correspond::reconstruct(ck.model, c, o.resolution), fs::path(o.out) / name);
    out << name << " t=" << t;
    if (o.retrieve > 0)
      for (const auto& r : correspond::latent_retrieve(ck, c, o.retrieve)) out << " " << r.id << ":" << r.distance;
    out << "\n";
  }
  return kExitOk;
}

int cmd_slice(const Options& o, std::ostream& out) {
  const auto ck = load_ckpt(o.ckpt);
  const auto s = correspond::template_slice(ck.model, axis_of(o.axis), o.offset, o.resolution);
  ensure_parent(o.out);
  if (fs::path(o.out).extension() == ".csv")
    correspond::write_slice_csv(s, o.out);
  else
    correspond::write_slice_pgm(s, o.out);
  if (!o.levels.empty()) {
    const auto iso = correspond::template_isosurfaces(ck.model, o.levels, o.resolution);
    for (std::size_t i = 0; i < iso.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "_iso%+.3f.obj", o.levels[i]);
      geometry::save_mesh(iso[i], fs::path(o.out).replace_extension().string() + name);
    }
  }
  out << "slice " << o.axis << "=" << o.offset << " range [" << s.values.minCoeff() << ", " << s.values.maxCoeff() << "]\n";
  return kExitOk;
}

int cmd_serve(const Options& o, std::ostream& out) {
  const auto colon = o.bind.rfind(':');
  if (colon == std::string::npos) throw UsageError("--bind must be host:port");
  const std::string host = o.bind.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(o.bind.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("bad port in --bind " + o.bind);
  }
  service::ServiceOptions so;
  so.resolution = o.resolution;
  so.gamma = o.gamma;
  service::Service svc(load_ckpt(o.ckpt), so);
  httplib::Server server;
  svc.mount(server);
  out << "listening on " << host << ":" << port << "\n" << std::flush;
  if (!server.listen(host, port)) throw std::runtime_error("cannot bind " + o.bind);
  return kExitOk;
}

// ---- parser ----------------------------------------------------------------

void add_common(CLI::App* s, Options& o) { s->add_option("--config", o.config, "JSON file of flag values; flags win"); }

struct Parser {
  CLI::App app{"Deformed implicit fields: templates, dense correspondence and editing", "dif"};
  Options o;
  std::map<std::string, CLI::App*> subs;

  CLI::App* sub(const std::string& name, const std::string& help) {
    auto* s = app.add_subcommand(name, help);
    add_common(s, o);
    subs[name] = s;
    return s;
  }

  Parser() {
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--threads", o.threads, "worker threads (default DIF_THREADS or all cores)")->check(CLI::PositiveNumber);
    const auto res = CLI::Range(4, 512);

    auto* s = sub("gen-toys", "write procedural labeled toy shapes");
    s->add_option("--family", o.family)->check(CLI::IsMember({"table", "chair"}));
    s->add_option("--count", o.count)->check(CLI::PositiveNumber);
    s->add_option("--out", o.out)->required();
    s->add_option("--seed", o.seed);
    s->add_option("--stretcher", o.stretcher, "mixed, all or none")->check(CLI::IsMember({"mixed", "all", "none"}));

    s = sub("prep", "normalize meshes and cache surface and free-space samples");
    s->add_option("--in", o.in)->required();
    s->add_option("--out", o.out)->required();
    s->add_option("--surface", o.surface)->check(CLI::PositiveNumber);
    s->add_option("--free", o.free)->check(CLI::PositiveNumber);
    s->add_option("--views", o.views)->check(CLI::PositiveNumber);
    s->add_option("--seed", o.seed);

    s = sub("train", "train template, hypernetwork and codes");
    s->add_option("--data", o.data)->required();
    s->add_option("--out", o.out)->required();
    s->add_option("--preset", o.preset, "toy or full")->check(CLI::IsMember({"toy", "full"}));
    s->add_option("--category", o.category)->check(CLI::IsMember({"car", "plane", "airplane", "chair", "table"}));
    s->add_option("--epochs", o.epochs)->check(CLI::NonNegativeNumber);
    s->add_option("--batch-size", o.batch_size)->check(CLI::PositiveNumber);
    s->add_option("--surface-points", o.surface_points)->check(CLI::PositiveNumber);
    s->add_option("--free-points", o.free_points)->check(CLI::PositiveNumber);
    s->add_option("--latent-dim", o.latent_dim)->check(CLI::PositiveNumber);
    s->add_option("--lr", o.lr)->check(CLI::PositiveNumber);
    s->add_option("--mode", o.mode)->check(CLI::IsMember({"norm", "variational"}));
    s->add_option("--seed", o.seed);
    s->add_option("--log", o.log, "loss CSV (default <out>.loss.csv)");
    s->add_flag("--no-normal", o.no_normal);
    s->add_flag("--no-smooth", o.no_smooth);
    s->add_flag("--no-correction", o.no_correction);

    s = sub("embed", "fit a code to an unseen shape's samples");
    s->add_option("--ckpt", o.ckpt)->required();
    s->add_option("--samples", o.samples, ".difs cache")->required();
    s->add_option("--out", o.out, "code JSON")->required();
    s->add_option("--mesh-out", o.mesh_out);
    s->add_option("--iterations", o.iterations)->check(CLI::PositiveNumber);
    s->add_option("--lr", o.lr)->check(CLI::PositiveNumber);
    s->add_option("--resolution", o.resolution)->check(res);
    s->add_option("--seed", o.seed);

    s = sub("mesh", "extract a shape's or the template's surface");
    s->add_option("--ckpt", o.ckpt)->required();
    s->add_option("--shape", o.shape, "shape id or code JSON");
    s->add_flag("--template", o.templ);
    s->add_option("--resolution", o.resolution)->check(res);
    s->add_option("--out", o.out)->required();

    s = sub("correspond", "dense correspondences from shape A to shape B");
    s->add_option("--ckpt", o.ckpt)->required();
    s->add_option("--a", o.a)->required();
    s->add_option("--b", o.b)->required();
    s->add_option("--out", o.out)->required();
    s->add_option("--points", o.points, "surface samples of A (0: mesh vertices)")->check(CLI::NonNegativeNumber);
    s->add_option("--gamma", o.gamma)->check(CLI::PositiveNumber);
    s->add_option("--resolution", o.resolution)->check(res);
    s->add_option("--seed", o.seed);

    s = sub("labels", "transfer part labels from labeled sources");
    s->add_option("--ckpt", o.ckpt)->required();
    s->add_option("--data", o.data, "directory of .difs and .labels")->required();
    s->add_option("--sources", o.sources)->required();
    s->add_option("--targets", o.targets, "ids or 'all'");
    s->add_option("--k", o.k)->check(CLI::PositiveNumber);
    s->add_option("--points", o.points, "labeled points per shape (0: all)")->check(CLI::NonNegativeNumber);
    s->add_option("--embed-iterations", o.embed_iterations)->check(CLI::PositiveNumber);
    s->add_option("--report", o.report, "per-part IoU CSV");
    s->add_option("--seed", o.seed);

    s = sub("texture", "copy vertex colors from a source to a target");
    s->add_option("--ckpt", o.ckpt)->required();
    s->add_option("--source", o.source)->required();
    s->add_option("--target", o.target)->required();
    s->add_option("--source-mesh", o.source_mesh, "colored OBJ (default: position colors)");
    s->add_option("--out", o.out)->required();
    s->add_option("--uncertainty", o.uncertainty, "per-vertex CSV");
    s->add_option("--gamma", o.gamma)->check(CLI::PositiveNumber);
    s->add_option("--dense", o.dense)->check(CLI::NonNegativeNumber);
    s->add_option("--resolution", o.resolution)->check(res);
    s->add_option("--seed", o.seed);

    s = sub("edit", "drag surface points and re-fit the code");
    s->add_option("--ckpt", o.ckpt)->required();
    s->add_option("--shape", o.shape)->required();
    s->add_option("--p1", o.p1, "x,y,z start point (repeatable)")->required();
    s->add_option("--p2", o.p2, "x,y,z target point (repeatable)")->required();
    s->add_option("--mode", o.edit_mode)->check(CLI::IsMember({"move", "add"}));
    s->add_flag("--project", o.project, "snap p1 to the surface first");
    s->add_option("--iterations", o.iterations)->check(CLI::PositiveNumber);
    s->add_option("--lr", o.lr)->check(CLI::PositiveNumber);
    s->add_option("--resolution", o.resolution)->check(res);
    s->add_option("--out", o.out);
    s->add_option("--code-out", o.code_out);

    s = sub("interp", "meshes along a latent line");
    s->add_option("--ckpt", o.ckpt)->required();
    s->add_option("--a", o.a)->required();
    s->add_option("--b", o.b)->required();
    s->add_option("--steps", o.steps);
    s->add_option("--retrieve", o.retrieve, "nearest training shapes to list per step")->check(CLI::NonNegativeNumber);
    s->add_option("--resolution", o.resolution)->check(res);
    s->add_option("--out", o.out)->required();

    s = sub("slice", "template field on an axis-aligned plane");
    s->add_option("--ckpt", o.ckpt)->required();
    s->add_option("--axis", o.axis)->check(CLI::IsMember({"x", "y", "z"}));
    s->add_option("--offset", o.offset)->check(CLI::Range(-1.0, 1.0));
    s->add_option("--resolution", o.resolution)->check(res);
    s->add_option("--levels", o.levels, "iso-levels to also extract");
    s->add_option("--out", o.out, ".pgm or .csv")->required();

    s = sub("serve", "HTTP editing service");
    s->add_option("--ckpt", o.ckpt)->required();
    s->add_option("--bind", o.bind, "host:port");
    s->add_option("--resolution", o.resolution)->check(res);
    s->add_option("--gamma", o.gamma)->check(CLI::PositiveNumber);
  }
};

std::string scalar_arg(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) {
    std::ostringstream s;
    s.precision(17);
    s << v.get<double>();
    return s.str();
  }
  throw UsageError("config value " + v.dump() + " is not a string or number");
}

/// Turns config keys that name flags of `sub` into arguments, skipping flags
/// already on the command line. Other keys are returned.
json expand_config(const json& j, CLI::App* sub, const std::vector<std::string>& args, std::vector<std::string>& expanded) {
  json extra = json::object();
  for (const auto& [key, v] : j.items()) {
    const std::string flag = "--" + key;
    const auto* opt = key == "config" ? nullptr : sub->get_option_no_throw(flag);
    if (!opt) {
      extra[key] = v;
      continue;
    }
    const bool present = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (present) continue;
    if (v.is_boolean()) {
      if (v.get<bool>()) expanded.push_back(flag);
    } else if (v.is_array()) {
      for (const auto& e : v) {
        expanded.push_back(flag);
        expanded.push_back(e.is_array() ? scalar_arg(e[0]) + "," + scalar_arg(e[1]) + "," + scalar_arg(e[2]) : scalar_arg(e));
      }
    } else {
      expanded.push_back(flag);
      expanded.push_back(scalar_arg(v));
    }
  }
  return extra;
}

std::string config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

}  // namespace

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  Parser p;
  std::vector<std::string> args = args_in;
  json extra = json::object();
  try {
    const std::string cfg = config_path(args);
    if (!cfg.empty() && !args.empty() && p.subs.count(args[0])) {
      std::ifstream f(cfg);
      if (!f) throw UsageError("cannot read config " + cfg);
      json j;
      try {
        j = json::parse(f);
      } catch (const json::exception& e) {
        throw UsageError("config " + cfg + ": " + e.what());
      }
      if (!j.is_object()) throw UsageError("config " + cfg + ": expected a JSON object");
      std::vector<std::string> expanded;
      extra = expand_config(j, p.subs[args[0]], args, expanded);
      if (args[0] != "train" && !extra.empty()) throw UsageError("config " + cfg + ": unknown key '" + extra.begin().key() + "'");
      args.insert(args.begin() + 1, expanded.begin(), expanded.end());
    }
    std::vector<std::string> rev(args.rbegin(), args.rend());
    p.app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << p.app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << p.app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = p.app.get_subcommands();
    err << (subs.empty() ? p.app.help() : subs.front()->help());
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (p.o.threads > 0) util::set_threads(p.o.threads);
  auto* sub = p.app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    if (name == "gen-toys") return cmd_gen_toys(p.o, out);
    if (name == "prep") return cmd_prep(p.o, out);
    if (name == "train") return cmd_train(p.o, *sub, extra, out, err);
    if (name == "embed") return cmd_embed(p.o, *sub, out);
    if (name == "mesh") return cmd_mesh(p.o, out);
    if (name == "correspond") return cmd_correspond(p.o, out);
    if (name == "labels") return cmd_labels(p.o, out);
    if (name == "texture") return cmd_texture(p.o, out);
    if (name == "edit") return cmd_edit(p.o, *sub, out);
    if (name == "interp") return cmd_interp(p.o, out);
    if (name == "slice") return cmd_slice(p.o, out);
    if (name == "serve") return cmd_serve(p.o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << sub->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace dif::cli
