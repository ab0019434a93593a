#pragma once

#include "dif/geometry/mesh.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dif::geometry {

enum class ToyFamily { kTable, kChair };

/// Part labels of the toy family.
enum PartLabel : int { kTop = 0, kLeg = 1, kStretcher = 2, kBack = 3 };
inline constexpr int kPartCount = 4;
const char* part_name(int label);
const char* family_name(ToyFamily f);
ToyFamily parse_family(const std::string& name);

/// Dimensions before normalization; y is up and +z is the front.
struct ToySpec {
  ToyFamily family = ToyFamily::kTable;
  double top_width = 1.2;
  double top_depth = 0.8;
  double top_thickness = 0.08;
  double height = 0.75;
  double leg_size = 0.08;
  double leg_inset = 0.05;
  bool stretcher = false;
  double stretcher_height = 0.3;  // fraction of leg length
  double stretcher_size = 0.05;
  double back_height = 0.5;  // chairs only
  double back_thickness = 0.06;
  std::uint64_t seed = 0;

  static ToySpec defaults(ToyFamily family);
  /// Dimensions drawn from the family's sampling ranges.
  static ToySpec random(ToyFamily family, std::uint64_t seed, std::optional<bool> stretcher = std::nullopt);
  /// Throws std::invalid_argument if a parameter is outside its declared range.
  void validate() const;
};

struct Box {
  Vec3 center = Vec3::Zero();
  Vec3 half = Vec3::Ones();
  int label = kTop;
  double sdf(const Vec3& p) const;
};

struct Keypoint {
  std::string name;
  Vec3 position = Vec3::Zero();
};

struct ToyShape {
  ToySpec spec;
  TriMesh mesh;              // normalized, per-vertex labels
  std::vector<Box> boxes;    // normalized frame
  std::vector<Keypoint> keypoints;
  Similarity normalization;  // raw dimensions -> normalized frame
  /// Exact signed distance of the union of boxes.
  double sdf(const Vec3& p) const;
  int count_label(int label) const;
};

/// Union-of-boxes table or chair with 12 named keypoints: 8 top corners and 4
/// leg-bottom centers.
ToyShape toy_family(const ToySpec& spec);

/// Closed, outward-wound box mesh.
TriMesh box_mesh(const Vec3& center, const Vec3& half, int label = -1);

}  // namespace dif::geometry
