#include "dif/geometry/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dif::geometry {

namespace {

static_assert(std::endian::native == std::endian::little, "sample caches assume a little-endian host");

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream f(path, mode);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream f(path, mode);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  return f;
}

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

void write_floats(std::ostream& os, const double* data, std::size_t n) {
  std::vector<float> buf(data, data + n);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
}

void read_exact(std::istream& is, char* dst, std::size_t n, const std::filesystem::path& path, const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw FileFormatError(path.string() + ": truncated " + what);
}

void read_floats(std::istream& is, double* dst, std::size_t n, const std::filesystem::path& path, const char* what) {
  std::vector<float> buf(n);
  read_exact(is, reinterpret_cast<char*>(buf.data()), n * sizeof(float), path, what);
  std::copy(buf.begin(), buf.end(), dst);
}

}  // namespace

void save_samples(const ShapeSamples& s, const std::filesystem::path& path) {
  if (s.normals.cols() != s.surface.cols() || s.sdf.size() != s.free.cols())
    throw std::invalid_argument("sample arrays have inconsistent sizes");
  auto f = open_out(path, std::ios::binary);
  f.write("DIFS", 4);
  write_u32(f, kSampleCacheVersion);
  write_u32(f, static_cast<std::uint32_t>(s.surface.cols()));
  write_u32(f, static_cast<std::uint32_t>(s.free.cols()));
  write_floats(f, s.surface.data(), static_cast<std::size_t>(s.surface.size()));
  write_floats(f, s.normals.data(), static_cast<std::size_t>(s.normals.size()));
  write_floats(f, s.free.data(), static_cast<std::size_t>(s.free.size()));
  write_floats(f, s.sdf.data(), static_cast<std::size_t>(s.sdf.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

ShapeSamples load_samples(const std::filesystem::path& path) {
  auto f = open_in(path, std::ios::binary);
  char magic[4];
  read_exact(f, magic, 4, path, "header");
  if (std::memcmp(magic, "DIFS", 4) != 0) throw FileFormatError(path.string() + ": not a sample cache (bad magic)");
  std::uint32_t header[3];
  read_exact(f, reinterpret_cast<char*>(header), sizeof(header), path, "header");
  if (header[0] != kSampleCacheVersion)
    throw FileFormatError(path.string() + ": unsupported sample cache version " + std::to_string(header[0]));
  ShapeSamples s;
  s.surface.resize(3, header[1]);
  s.normals.resize(3, header[1]);
  s.free.resize(3, header[2]);
  s.sdf.resize(header[2]);
  read_floats(f, s.surface.data(), static_cast<std::size_t>(s.surface.size()), path, "surface points");
  read_floats(f, s.normals.data(), static_cast<std::size_t>(s.normals.size()), path, "normals");
  read_floats(f, s.free.data(), static_cast<std::size_t>(s.free.size()), path, "free points");
  read_floats(f, s.sdf.data(), static_cast<std::size_t>(s.sdf.size()), path, "sdf values");
  return s;
}

void save_labels(const std::vector<int>& labels, const std::filesystem::path& path) {
  auto f = open_out(path);
  for (int l : labels) f << l << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<int> load_labels(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::vector<int> out;
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    int v;
    std::string rest;
    if (!(ss >> v) || (ss >> rest)) throw FileFormatError(path.string() + ":" + std::to_string(n) + ": expected one integer");
    out.push_back(v);
  }
  return out;
}

void save_keypoints(const std::vector<Keypoint>& keys, const std::filesystem::path& path) {
  auto f = open_out(path);
  f.precision(9);
  for (const auto& k : keys) f << k.name << ' ' << k.position.x() << ' ' << k.position.y() << ' ' << k.position.z() << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Keypoint> load_keypoints(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::vector<Keypoint> out;
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    Keypoint k;
    if (!(ss >> k.name >> k.position.x() >> k.position.y() >> k.position.z()))
      throw FileFormatError(path.string() + ":" + std::to_string(n) + ": expected 'name x y z'");
    out.push_back(k);
  }
  return out;
}

}  // namespace dif::geometry
