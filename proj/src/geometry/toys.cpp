#include "dif/geometry/toys.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <stdexcept>

namespace dif::geometry {

const char* part_name(int label) {
  switch (label) {
    case kTop: return "top";
    case kLeg: return "leg";
    case kStretcher: return "stretcher";
    case kBack: return "back";
    default: return "unknown";
  }
}

const char* family_name(ToyFamily f) { return f == ToyFamily::kTable ? "table" : "chair"; }

ToyFamily parse_family(const std::string& name) {
  if (name == "table") return ToyFamily::kTable;
  if (name == "chair") return ToyFamily::kChair;
  throw std::invalid_argument("unknown toy family '" + name + "' (expected table or chair)");
}

ToySpec ToySpec::defaults(ToyFamily family) {
  ToySpec s;
  s.family = family;
  if (family == ToyFamily::kChair) {
    s.top_width = 0.5;
    s.top_depth = 0.5;
    s.top_thickness = 0.06;
    s.height = 0.45;
    s.leg_size = 0.05;
    s.leg_inset = 0.02;
    s.stretcher_size = 0.03;
  }
  return s;
}

ToySpec ToySpec::random(ToyFamily family, std::uint64_t seed, std::optional<bool> stretcher) {
  std::mt19937_64 rng(seed);
  auto u = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  ToySpec s = defaults(family);
  s.seed = seed;
  if (family == ToyFamily::kTable) {
    s.top_width = u(1.0, 1.4);
    s.top_depth = u(0.6, 0.9);
    s.top_thickness = u(0.06, 0.1);
    s.height = u(0.6, 0.9);
    s.leg_size = u(0.07, 0.11);
    s.leg_inset = u(0.02, 0.08);
  } else {
    s.top_width = u(0.45, 0.6);
    s.top_depth = u(0.45, 0.6);
    s.top_thickness = u(0.05, 0.08);
    s.height = u(0.4, 0.5);
    s.leg_size = u(0.04, 0.06);
    s.leg_inset = u(0.02, 0.04);
    s.back_height = u(0.4, 0.6);
  }
  s.stretcher_height = u(0.2, 0.4);
  s.stretcher = stretcher ? *stretcher : std::bernoulli_distribution(0.5)(rng);
  return s;
}

void ToySpec::validate() const {
  auto in = [](double v, double lo, double hi, const char* name) {
    if (!(v >= lo && v <= hi))
      throw std::invalid_argument(std::string("toy parameter ") + name + " = " + std::to_string(v) + " outside [" +
                                  std::to_string(lo) + ", " + std::to_string(hi) + "]");
  };
  in(top_width, 0.2, 2.0, "top_width");
  in(top_depth, 0.2, 2.0, "top_depth");
  in(top_thickness, 0.02, 0.3, "top_thickness");
  in(height, 0.2, 1.5, "height");
  in(leg_size, 0.02, 0.3, "leg_size");
  in(leg_inset, 0.01, 0.3, "leg_inset");
  in(stretcher_height, 0.1, 0.8, "stretcher_height");
  in(stretcher_size, 0.01, 0.3, "stretcher_size");
  in(back_height, 0.1, 1.5, "back_height");
  in(back_thickness, 0.02, 0.3, "back_thickness");
  if (height <= top_thickness * 1.5) throw std::invalid_argument("toy height must exceed 1.5x the top thickness");
  if (2 * (leg_inset + leg_size) >= std::min(top_width, top_depth))
    throw std::invalid_argument("toy legs do not fit under the top");
  if (stretcher && stretcher_size >= leg_size) throw std::invalid_argument("stretcher must be thinner than the legs");
  if (family == ToyFamily::kChair && back_thickness + 0.02 >= top_depth / 2)
    throw std::invalid_argument("chair back is too thick for the seat");
}

double Box::sdf(const Vec3& p) const {
  const Vec3 q = (p - center).cwiseAbs() - half;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

double ToyShape::sdf(const Vec3& p) const {
  double d = 1e300;
  for (const auto& b : boxes) d = std::min(d, b.sdf(p));
  return d;
}

int ToyShape::count_label(int label) const {
  return static_cast<int>(std::count_if(boxes.begin(), boxes.end(), [&](const Box& b) { return b.label == label; }));
}

TriMesh box_mesh(const Vec3& center, const Vec3& half, int label) {
  TriMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.push_back(center + half.cwiseProduct(Vec3(i & 1 ? 1 : -1, i & 2 ? 1 : -1, i & 4 ? 1 : -1)));
  // Outward winding; vertex bit 0 = +x, bit 1 = +y, bit 2 = +z.
  static constexpr int kQuads[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
  for (const auto& q : kQuads) {
    m.triangles.emplace_back(q[0], q[1], q[2]);
    m.triangles.emplace_back(q[0], q[2], q[3]);
  }
  if (label >= 0) m.labels.assign(8, label);
  return m;
}

ToyShape toy_family(const ToySpec& spec) {
  spec.validate();
  ToyShape toy;
  toy.spec = spec;
  const double w = spec.top_width / 2, d = spec.top_depth / 2, t = spec.top_thickness;
  const double leg_len = spec.height - t / 2;
  const double lx = w - spec.leg_inset - spec.leg_size / 2, lz = d - spec.leg_inset - spec.leg_size / 2;

  std::vector<Box> boxes;
  boxes.push_back({Vec3(0, spec.height - t / 2, 0), Vec3(w, t / 2, d), kTop});
  for (int sx : {-1, 1})
    for (int sz : {-1, 1})
      boxes.push_back({Vec3(sx * lx, leg_len / 2, sz * lz), Vec3(spec.leg_size / 2, leg_len / 2, spec.leg_size / 2), kLeg});
  if (spec.stretcher) {
    const double y = spec.stretcher_height * leg_len;
    for (int sz : {-1, 1})
      boxes.push_back({Vec3(0, y, sz * lz), Vec3(lx + spec.leg_size / 4, spec.stretcher_size / 2, spec.stretcher_size / 2), kStretcher});
  }
  if (spec.family == ToyFamily::kChair) {
    // Inset from the seat's rear and side faces so no faces are coplanar.
    const double y0 = spec.height - t / 2, y1 = spec.height + spec.back_height;
    boxes.push_back({Vec3(0, (y0 + y1) / 2, -d + 0.01 + spec.back_thickness / 2),
                     Vec3(w - 0.01, (y1 - y0) / 2, spec.back_thickness / 2), kBack});
  }

  std::vector<Keypoint> keys;
  const Box& top = boxes.front();
  for (int sy : {-1, 1})
    for (int sz : {-1, 1})
      for (int sx : {-1, 1}) {
        const std::string name = std::string("top_") + (sx < 0 ? "left" : "right") + "_" + (sz < 0 ? "back" : "front") + "_" +
                                 (sy < 0 ? "lower" : "upper");
        keys.push_back({name, top.center + top.half.cwiseProduct(Vec3(sx, sy, sz))});
      }
  for (int sz : {-1, 1})
    for (int sx : {-1, 1})
      keys.push_back({std::string("foot_") + (sx < 0 ? "left" : "right") + "_" + (sz < 0 ? "back" : "front"), Vec3(sx * lx, 0, sz * lz)});

  for (const auto& b : boxes) toy.mesh.append(box_mesh(b.center, b.half, b.label));
  toy.normalization = normalize_mesh(toy.mesh);
  for (auto& b : boxes) {
    b.center = toy.normalization.apply(b.center);
    b.half *= toy.normalization.scale;
  }
  for (auto& k : keys) k.position = toy.normalization.apply(k.position);
  toy.boxes = std::move(boxes);
  toy.keypoints = std::move(keys);
  return toy;
}

}  // namespace dif::geometry
