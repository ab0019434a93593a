#include "dif/geometry/io.hpp"
#include "dif/geometry/mesh.hpp"
#include "dif/geometry/sampling.hpp"
#include "dif/training/dataset.hpp"
#include "dif/training/training.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace dif;
using namespace dif::training;

namespace {

nets::ModelConfig tiny_model() {
  nets::ModelConfig c;
  c.latent_dim = 4;
  c.template_width = 16;
  c.template_layers = 2;
  c.deform_width = 8;
  c.deform_layers = 2;
  c.hyper_width = 8;
  c.hyper_layers = 1;
  return c;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.model = tiny_model();
  c.epochs = 3;
  c.surface_points = 100;
  c.free_points = 100;
  c.batch_size = 2;
  c.lr = 1e-3;
  c.seed = 9;
  return c;
}

std::vector<losses::SampleSet> spheres(std::initializer_list<double> radii, int n = 400) {
  std::vector<losses::SampleSet> out;
  int seed = 1;
  for (double r : radii) out.push_back(to_sample_set(geometry::sample_shape(geometry::icosphere(r, 2), n, n, seed++, 12)));
  return out;
}

std::filesystem::path temp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

std::vector<char> bytes_of(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& b) {
  std::ofstream f(p, std::ios::binary);
  f.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("config JSON round trip and overlay") {
  TrainConfig c = tiny_config();
  c.mode = RegMode::kVariational;
  c.ablation.no_smooth = true;
  c.weights.kl = 7;
  TrainConfig d;
  apply_json(to_json(c), d);
  CHECK(to_json(d) == to_json(c));
  CHECK(d.mode == RegMode::kVariational);
  CHECK(d.ablation.no_smooth);
  CHECK(d.model == c.model);

  TrainConfig e = tiny_config();
  apply_json(nlohmann::json{{"epochs", 11}, {"weights", {{"reg", 5.0}}}}, e);
  CHECK(e.epochs == 11);
  CHECK(e.weights.reg == 5.0);
  CHECK(e.batch_size == tiny_config().batch_size);

  CHECK_THROWS_WITH_AS(apply_json(nlohmann::json{{"epoch", 3}}, e), doctest::Contains("epoch"), std::invalid_argument);
  CHECK_THROWS_AS(apply_json(nlohmann::json{{"model", {{"widht", 3}}}}, e), std::invalid_argument);
  CHECK_THROWS_AS(apply_json(nlohmann::json{{"lr", "fast"}}, e), std::invalid_argument);
  TrainConfig bad = tiny_config();
  bad.lr = 0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("lr"), std::invalid_argument);
}

TEST_CASE("checkpoint round trip is bitwise") {
  const auto data = spheres({0.4, 0.6});
  TrainConfig c = tiny_config();
  c.epochs = 2;
  for (RegMode mode : {RegMode::kNorm, RegMode::kVariational}) {
    c.mode = mode;
    const auto ck = train(data, c, {"a", "b"});
    const auto p = temp("dif_ckpt_test.difn");
    save_checkpoint(ck, p);
    const auto back = load_checkpoint(p);
    CHECK(back.model.flatten() == ck.model.flatten());
    REQUIRE(back.codes.size() == 2);
    CHECK(back.codes[1] == ck.codes[1]);
    CHECK(back.sigmas.size() == (mode == RegMode::kVariational ? 2u : 0u));
    if (mode == RegMode::kVariational) CHECK(back.sigmas[0] == ck.sigmas[0]);
    CHECK(back.shape_ids == ck.shape_ids);
    CHECK(back.history == ck.history);
    CHECK(to_json(back.config) == to_json(ck.config));
    save_checkpoint(back, temp("dif_ckpt_test2.difn"));
    CHECK(bytes_of(p) == bytes_of(temp("dif_ckpt_test2.difn")));
    CHECK(back.find("b") == 1);
    CHECK(back.find("zz") == -1);
  }
}

TEST_CASE("checkpoint errors") {
  const auto ck = train(spheres({0.5}), tiny_config(), {"s"});
  const auto p = temp("dif_ckpt_err.difn");
  save_checkpoint(ck, p);
  const auto good = bytes_of(p);

  auto b = good;
  b[0] = 'X';
  write_bytes(p, b);
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("bad magic"), CheckpointError);

  b = good;
  b[4] = 9;
  write_bytes(p, b);
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("version"), CheckpointError);

  b = good;
  b.resize(b.size() - 3);
  write_bytes(p, b);
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("truncated"), CheckpointError);

  b = good;
  b.push_back(0);
  write_bytes(p, b);
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("trailing"), CheckpointError);

  write_bytes(p, good);
  nets::ModelConfig other = tiny_model();
  other.latent_dim = 8;
  try {
    load_checkpoint(p, &other);
    FAIL("expected a mismatch");
  } catch (const ConfigMismatch& e) {
    CHECK(e.field() == "latent_dim");
  }
  const auto expect = tiny_model();
  CHECK_NOTHROW(load_checkpoint(p, &expect));
  CHECK_THROWS_AS(load_checkpoint(temp("dif_no_such_file.difn")), CheckpointError);
}

TEST_CASE("variational sampling") {
  const Eigen::VectorXf alpha = Eigen::VectorXf::LinSpaced(4, -1, 1);
  std::mt19937_64 rng(3);
  CHECK(variational_sample(alpha, Eigen::VectorXf::Zero(4), rng) == alpha);

  const Eigen::VectorXf sigma = Eigen::VectorXf::Constant(4, 0.5f);
  const int n = 100000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(4);
  for (int i = 0; i < n; ++i) sum += variational_sample(alpha, sigma, rng).cast<double>();
  const Eigen::VectorXd mean = sum / n;
  for (int d = 0; d < 4; ++d) CHECK(std::abs(mean(d) - alpha(d)) < 3 * 0.5 / std::sqrt(n));

  std::mt19937_64 r1(7), r2(7);
  CHECK(variational_sample(alpha, sigma, r1) == variational_sample(alpha, sigma, r2));
  CHECK_THROWS(variational_sample(alpha, -sigma, r1));
  CHECK_THROWS(variational_sample(alpha, Eigen::VectorXf::Zero(3), r1));
}

TEST_CASE("draw_points samples without replacement") {
  const auto s = spheres({0.5}, 200)[0];
  std::mt19937_64 rng(1);
  const auto d = draw_points(s, 50, 70, rng);
  CHECK(d.surface_count() == 50);
  CHECK(d.free_count() == 70);
  for (Eigen::Index i = 0; i < d.free_count(); ++i) {
    int hits = 0;
    for (Eigen::Index j = 0; j < s.free_count(); ++j)
      if (s.free.col(j) == d.free.col(i)) {
        ++hits;
        CHECK(s.sdf(j) == d.sdf(i));
      }
    CHECK(hits == 1);
    for (Eigen::Index k = 0; k < i; ++k) CHECK(d.free.col(k) != d.free.col(i));
  }
  const auto all = draw_points(s, 1000, 1000, rng);
  CHECK(all.surface_count() == s.surface_count());
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto data = spheres({0.4, 0.55, 0.7});
  const auto a = train(data, tiny_config());
  const auto b = train(data, tiny_config());
  REQUIRE(a.history.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.history[i].total == b.history[i].total);
  CHECK(a.model.flatten() == b.model.flatten());
  CHECK(a.codes[2] == b.codes[2]);
  TrainConfig c = tiny_config();
  c.seed = 10;
  CHECK(train(data, c).history[0].total != a.history[0].total);
}

TEST_CASE("zero epochs return the initial codes") {
  const auto data = spheres({0.4, 0.55, 0.7});
  TrainConfig c = tiny_config();
  c.epochs = 0;
  c.latent_init_std = 0.01;
  const auto init = train(data, c);
  CHECK(init.history.empty());
  REQUIRE(init.codes.size() == 3);
  double sum2 = 0;
  for (const auto& code : init.codes) {
    CHECK(code.size() == 4);
    sum2 += code.cast<double>().squaredNorm();
  }
  CHECK(std::sqrt(sum2 / 12) < 0.03);
  CHECK(init.model.flatten() == nets::DifModel<float>::init(c.model, c.seed).flatten());
  c.epochs = 1;
  const auto one = train(data, c);
  for (std::size_t i = 0; i < 3; ++i) CHECK(one.codes[i] != init.codes[i]);
}

TEST_CASE("ablated priors contribute zero") {
  const auto data = spheres({0.5});
  TrainConfig c = tiny_config();
  c.ablation = {true, true, true};
  const auto ck = train(data, c);
  for (const auto& e : ck.history) {
    CHECK(e.normal == 0);
    CHECK(e.smooth == 0);
    CHECK(e.correction == 0);
  }
  // The correction branch is gone from the field as well.
  CHECK_FALSE(ck.model.config.use_correction);
  CHECK_FALSE(ck.config.model.use_correction);
  const auto d = nets::deform_net(ck.model, ck.codes[0]);
  const auto with = nets::evaluate_field<float>(ck.model.templ, d, data[0].free, true, false);
  const auto without = nets::evaluate_field<float>(ck.model.templ, d, data[0].free, false, false);
  CHECK(with.s != without.s);
  c.ablation = {};
  const auto on = train(data, c);
  CHECK(on.model.config.use_correction);
  CHECK(on.history[0].normal > 0);
  CHECK(on.history[0].smooth > 0);
}

TEST_CASE("divergence names the offending term") {
  TrainConfig c = tiny_config();
  c.lr = 1e30;
  c.epochs = 50;
  try {
    train(spheres({0.5}), c);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    const std::string what = e.what();
    CHECK(!e.term().empty());
    CHECK(what.find(e.term()) != std::string::npos);
    CHECK(e.last_good().model.flatten().allFinite());
  }
}

TEST_CASE("overfitting one sphere") {
  const auto data = spheres({0.5}, 3000);
  TrainConfig c;
  c.model = tiny_model();
  c.model.template_width = 32;
  c.model.use_correction = false;
  c.epochs = 800;
  c.model.first_omega = 10;
  c.surface_points = 1000;
  c.free_points = 1000;
  c.batch_size = 1;
  c.lr = 1e-3;
  c.seed = 2;
  c.weights.normal = c.weights.smooth = c.weights.correction = c.weights.reg = 0;
  c.ablation.no_correction = true;
  const auto ck = train(data, c);
  CHECK(ck.history.back().total < ck.history.front().total / 10);
  // Held-out free points.
  const auto held = to_sample_set(geometry::sample_shape(geometry::icosphere(0.5, 2), 3000, 2000, 99, 12));
  const auto deform = nets::deform_net(ck.model, ck.codes[0]);
  const auto f = nets::evaluate_field<float>(ck.model.templ, deform, held.free, false, false);
  std::vector<float> err;
  for (Eigen::Index i = 0; i < held.free_count(); ++i) err.push_back(std::abs(f.s(i) - held.sdf(i)));
  std::nth_element(err.begin(), err.begin() + err.size() / 2, err.end());
  CHECK(err[err.size() / 2] < 0.01);
}

TEST_CASE("dataset loading") {
  const auto dir = temp("dif_dataset_test");
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto s = geometry::sample_shape(geometry::icosphere(0.5, 1), 20, 20, 1, 8);
  geometry::save_samples(s, dir / "b.difs");
  geometry::save_samples(s, dir / "a.difs");
  std::ofstream(dir / "notes.txt") << "ignored";
  const auto ds = load_dataset(dir);
  REQUIRE(ds.ids.size() == 2);
  CHECK(ds.ids[0] == "a");
  CHECK(ds.ids[1] == "b");
  CHECK(ds.shapes[0].surface_count() == 20);
  std::filesystem::remove_all(dir);
  CHECK_THROWS(load_dataset(dir));
}
