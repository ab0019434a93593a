#pragma once

#include "dif/geometry/sampling.hpp"
#include "dif/geometry/toys.hpp"

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace dif::geometry {

class FileFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kSampleCacheVersion = 1;

/// Binary sample cache: "DIFS", u32 version, u32 surface count, u32 free
/// count, then little-endian float32 surface points, normals, free points, sdf.
/// Labels are not part of the cache.
void save_samples(const ShapeSamples& s, const std::filesystem::path& path);
ShapeSamples load_samples(const std::filesystem::path& path);

/// One integer per line.
void save_labels(const std::vector<int>& labels, const std::filesystem::path& path);
std::vector<int> load_labels(const std::filesystem::path& path);

/// One "name x y z" record per line.
void save_keypoints(const std::vector<Keypoint>& keys, const std::filesystem::path& path);
std::vector<Keypoint> load_keypoints(const std::filesystem::path& path);

}  // namespace dif::geometry
