#pragma once

#include "dif/diffkit/adam.hpp"
#include "dif/losses/losses.hpp"
#include "dif/nets/networks.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dif::training {

enum class RegMode { kNorm, kVariational };

struct TrainConfig {
  nets::ModelConfig model;
  int epochs = 60;
  int surface_points = 4000;  // per shape per iteration
  int free_points = 4000;
  int batch_size = 16;        // shapes per iteration, capped at the dataset size
  double lr = 1e-4;
  losses::LossWeights weights;
  double latent_init_std = 0.01;
  RegMode mode = RegMode::kNorm;
  losses::Ablation ablation;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
};

/// Desk-scale table run: small nets, 2K+2K points, 300 epochs of 4-shape batches.
TrainConfig toy_config();

nlohmann::json to_json(const nets::ModelConfig& c);
nlohmann::json to_json(const losses::LossWeights& w);
nlohmann::json to_json(const TrainConfig& c);
/// Overlays the keys present in j onto c; unknown keys are an error.
void apply_json(const nlohmann::json& j, nets::ModelConfig& c);
void apply_json(const nlohmann::json& j, losses::LossWeights& w);
void apply_json(const nlohmann::json& j, TrainConfig& c);

/// Mean per-iteration batch losses of one epoch.
struct EpochLog {
  int epoch = 0;
  double total = 0, sdf = 0, normal = 0, smooth = 0, correction = 0, reg = 0;
  double sdf_value = 0, sdf_normal = 0, sdf_eikonal = 0, sdf_offsurface = 0;
  double seconds = 0;
  bool operator==(const EpochLog&) const = default;
};

struct Checkpoint {
  TrainConfig config;
  nets::DifModel<float> model;
  std::vector<Eigen::VectorXf> codes;
  std::vector<Eigen::VectorXf> sigmas;  // variational mode only
  std::vector<std::string> shape_ids;
  std::vector<EpochLog> history;

  bool variational() const { return config.mode == RegMode::kVariational; }
  std::size_t shape_count() const { return codes.size(); }
  /// Index of a shape id, or -1.
  int find(const std::string& id) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loaded configuration disagrees with what the caller expects.
class ConfigMismatch : public CheckpointError {
 public:
  ConfigMismatch(const std::string& field, const std::string& detail)
      : CheckpointError("checkpoint field '" + field + "' mismatch: " + detail), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// "DIFN", u32 version, u32 JSON length, JSON header, then float32 arrays:
/// model parameters in declared order, codes, and sigmas in variational mode.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError on bad magic, version or truncation, and
/// ConfigMismatch if `expect` is given and the architecture differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, const nets::ModelConfig* expect = nullptr);

/// Training diverged: the offending term and the state before the failing step.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::string term, Checkpoint last_good, int epoch, int iteration);
  const std::string& term() const noexcept { return term_; }
  const Checkpoint& last_good() const noexcept { return last_good_; }

 private:
  std::string term_;
  Checkpoint last_good_;
};

/// Per-shape loss and gradients for one draw of points.
struct ShapeStep {
  losses::LossBreakdown terms;
  Eigen::VectorXf model_grad;      // empty unless requested
  Eigen::VectorXf code_grad;
  Eigen::VectorXf log_sigma_grad;  // variational mode only
};

struct StepOptions {
  bool model_grad = true;
  bool priors = true;          // false: SDF terms and the regularizer only
  bool use_correction = true;  // Delta s enters the field
  float scale = 1.0f;          // multiplies the loss before differentiation
};

/// With log_sigma and eps given, the field uses alpha + exp(log_sigma) * eps
/// and the regularizer is the KL term; otherwise |alpha|^2 / k.
ShapeStep shape_step(const nets::DifModel<float>& model, const Eigen::VectorXf& alpha, const Eigen::VectorXf* log_sigma,
                     const Eigen::VectorXf* eps, const losses::SampleSet& draw, const TrainConfig& cfg, const StepOptions& opt);

/// Random subset of the shape's samples without replacement (all of them if the pool is smaller).
losses::SampleSet draw_points(const losses::SampleSet& pool, int surface, int free, std::mt19937_64& rng);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Auto-decoder training of T, Psi and one code per shape.
Checkpoint train(const std::vector<losses::SampleSet>& dataset, const TrainConfig& cfg, std::vector<std::string> ids = {},
                 const EpochCallback& on_epoch = {});

/// alpha + sigma * eps with eps ~ N(0, I).
Eigen::VectorXf variational_sample(const Eigen::VectorXf& alpha, const Eigen::VectorXf& sigma, std::mt19937_64& rng);

}  // namespace dif::training
