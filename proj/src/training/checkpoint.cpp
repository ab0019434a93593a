#include "dif/training/training.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dif::training {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

json history_json(const std::vector<EpochLog>& h) {
  json a = json::array();
  for (const auto& e : h)
    a.push_back({{"epoch", e.epoch}, {"total", e.total}, {"sdf", e.sdf}, {"normal", e.normal}, {"smooth", e.smooth},
                 {"correction", e.correction}, {"reg", e.reg}, {"sdf_value", e.sdf_value}, {"sdf_normal", e.sdf_normal},
                 {"sdf_eikonal", e.sdf_eikonal}, {"sdf_offsurface", e.sdf_offsurface}, {"seconds", e.seconds}});
  return a;
}

std::vector<EpochLog> history_from(const json& a) {
  std::vector<EpochLog> h;
  for (const auto& e : a) {
    EpochLog l;
    l.epoch = e.at("epoch").get<int>();
    l.total = e.at("total").get<double>();
    l.sdf = e.at("sdf").get<double>();
    l.normal = e.at("normal").get<double>();
    l.smooth = e.at("smooth").get<double>();
    l.correction = e.at("correction").get<double>();
    l.reg = e.at("reg").get<double>();
    l.sdf_value = e.at("sdf_value").get<double>();
    l.sdf_normal = e.at("sdf_normal").get<double>();
    l.sdf_eikonal = e.at("sdf_eikonal").get<double>();
    l.sdf_offsurface = e.at("sdf_offsurface").get<double>();
    l.seconds = e.at("seconds").get<double>();
    h.push_back(l);
  }
  return h;
}

void write_floats(std::ostream& os, const float* p, Eigen::Index n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * static_cast<Eigen::Index>(sizeof(float))));
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}
  void read(void* dst, std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw CheckpointError(path_ + ": truncated checkpoint (reading " + what + ")");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  void floats(float* dst, Eigen::Index n, const char* what) { read(dst, static_cast<std::size_t>(n) * sizeof(float), what); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
  std::string path_;
};

void expect_equal(const char* field, double got, double want) {
  if (got != want)
    throw ConfigMismatch(field, "file has " + json(got).dump() + ", expected " + json(want).dump());
}

}  // namespace

int Checkpoint::find(const std::string& id) const {
  for (std::size_t i = 0; i < shape_ids.size(); ++i)
    if (shape_ids[i] == id) return static_cast<int>(i);
  return -1;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const Eigen::Index k = ckpt.config.model.latent_dim;
  if (ckpt.shape_ids.size() != ckpt.codes.size()) throw std::invalid_argument("checkpoint: one shape id per code required");
  if (ckpt.variational() && ckpt.sigmas.size() != ckpt.codes.size())
    throw std::invalid_argument("checkpoint: variational mode needs one sigma per code");
  for (std::size_t i = 0; i < ckpt.codes.size(); ++i)
    if (ckpt.codes[i].size() != k || (ckpt.variational() && ckpt.sigmas[i].size() != k))
      throw std::invalid_argument("checkpoint: code length differs from latent_dim");
  if (!(ckpt.model.config == ckpt.config.model)) throw std::invalid_argument("checkpoint: model and config architectures differ");

  const json header = {{"config", to_json(ckpt.config)},
                       {"shape_ids", ckpt.shape_ids},
                       {"history", history_json(ckpt.history)},
                       {"parameters", ckpt.model.num_params()}};
  const std::string text = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write("DIFN", 4);
  const std::uint32_t version = kCheckpointVersion, len = static_cast<std::uint32_t>(text.size());
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : ckpt.model.parameters()) write_floats(f, p->data(), p->size());
  for (const auto& c : ckpt.codes) write_floats(f, c.data(), c.size());
  if (ckpt.variational())
    for (const auto& s : ckpt.sigmas) write_floats(f, s.data(), s.size());
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const nets::ModelConfig* expect) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(f), {}), path.string());

  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, "DIFN", 4) != 0) throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  std::uint32_t version = 0, len = 0;
  r.read(&version, 4, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  r.read(&len, 4, "header length");
  std::string text(len, '\0');
  r.read(text.data(), len, "header");

  Checkpoint ck;
  std::vector<std::string> ids;
  try {
    const json header = json::parse(text);
    apply_json(header.at("config"), ck.config);
    ids = header.at("shape_ids").get<std::vector<std::string>>();
    ck.history = history_from(header.at("history"));
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }

  const nets::ModelConfig& m = ck.config.model;
  if (expect) {
    expect_equal("latent_dim", m.latent_dim, expect->latent_dim);
    expect_equal("template_width", m.template_width, expect->template_width);
    expect_equal("template_layers", m.template_layers, expect->template_layers);
    expect_equal("deform_width", m.deform_width, expect->deform_width);
    expect_equal("deform_layers", m.deform_layers, expect->deform_layers);
    expect_equal("hyper_width", m.hyper_width, expect->hyper_width);
    expect_equal("hyper_layers", m.hyper_layers, expect->hyper_layers);
    expect_equal("first_omega", m.first_omega, expect->first_omega);
    expect_equal("hidden_omega", m.hidden_omega, expect->hidden_omega);
    expect_equal("use_correction", m.use_correction, expect->use_correction);
  }

  ck.model = nets::DifModel<float>::init(m, 0);
  for (auto* p : ck.model.parameters()) r.floats(p->data(), p->size(), "model parameters");
  const Eigen::Index k = m.latent_dim;
  ck.codes.assign(ids.size(), Eigen::VectorXf(k));
  for (auto& c : ck.codes) r.floats(c.data(), k, "latent codes");
  if (ck.variational()) {
    ck.sigmas.assign(ids.size(), Eigen::VectorXf(k));
    for (auto& s : ck.sigmas) r.floats(s.data(), k, "sigmas");
  }
  if (r.remaining() != 0) throw CheckpointError(path.string() + ": " + std::to_string(r.remaining()) + " unexpected trailing bytes");
  ck.shape_ids = std::move(ids);
  return ck;
}

}  // namespace dif::training
