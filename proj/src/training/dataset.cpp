#include "dif/training/dataset.hpp"

#include "dif/geometry/io.hpp"

#include <algorithm>

namespace dif::training {

losses::SampleSet to_sample_set(const geometry::ShapeSamples& s) {
  losses::SampleSet out;
  out.surface = s.surface.cast<float>();
  out.normals = s.normals.cast<float>();
  out.free = s.free.cast<float>();
  out.sdf = s.sdf.cast<float>();
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".difs") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .difs sample caches in " + dir.string());
  Dataset d;
  for (const auto& f : files) {
    d.shapes.push_back(to_sample_set(geometry::load_samples(f)));
    d.ids.push_back(f.stem().string());
  }
  return d;
}

}  // namespace dif::training
