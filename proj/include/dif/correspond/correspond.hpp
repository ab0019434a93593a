#pragma once

#include "dif/geometry/marching_cubes.hpp"
#include "dif/geometry/mesh.hpp"
#include "dif/losses/losses.hpp"
#include "dif/nets/networks.hpp"
#include "dif/training/training.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dif::correspond {

using Model = nets::DifModel<float>;
using Code = Eigen::VectorXf;
using geometry::TriMesh;
using geometry::Vec3;

inline constexpr double kDefaultGamma = 100.0;
inline constexpr int kDefaultResolution = 64;
inline constexpr int kDenseSamples = 10000;

/// The field of one shape: T composed with the Deform-Net generated from a code.
class ShapeField {
 public:
  ShapeField(const Model& model, const Code& code);

  /// Phi at each point.
  Eigen::VectorXd values(const Eigen::Matrix3Xd& points) const;
  /// Phi and its spatial gradient.
  Eigen::VectorXd values(const Eigen::Matrix3Xd& points, Eigen::Matrix3Xd* grad) const;
  /// p + v(p).
  Eigen::Matrix3Xd template_images(const Eigen::Matrix3Xd& points) const;
  /// Marching cubes of Phi over [-1,1]^3.
  TriMesh reconstruct(int resolution = kDefaultResolution) const;
  /// Newton steps p <- p - Phi grad / |grad|^2 toward the zero level set.
  Vec3 project(const Vec3& p, int steps = 5) const;

  const Model& model() const { return model_; }
  const Code& code() const { return code_; }

 private:
  const Model& model_;
  Code code_;
  nets::SineMlp<float> deform_;
};

TriMesh reconstruct(const Model& model, const Code& code, int resolution = kDefaultResolution);

// ---- embedding ---------------------------------------------------------------

struct EmbedOptions {
  int iterations = 300;
  double lr = 1e-4;
  int surface_points = 2000;
  int free_points = 2000;
  double init_std = 0.01;
  std::uint64_t seed = 0;
};

struct EmbedResult {
  Code code;
  std::vector<double> trace;  // loss per iteration
};

/// Non-finite objective in embed or edit; carries the objective trace so far.
class Diverged : public std::runtime_error {
 public:
  Diverged(const std::string& what, std::vector<double> trace) : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

/// Code minimizing the SDF loss plus the weighted norm regularizer with T and
/// Psi frozen. Throws Diverged on a non-finite loss.
EmbedResult embed(const training::Checkpoint& ckpt, const losses::SampleSet& samples, const EmbedOptions& opt = {});

// ---- correspondence ------------------------------------------------------------

struct CorrespondencePair {
  Vec3 p_i = Vec3::Zero(), p_j = Vec3::Zero();
  Vec3 t_i = Vec3::Zero(), t_j = Vec3::Zero();  // template images
  double u = 0;
  int j = -1;  // index into the target point set
};

/// 1 - exp(-gamma d^2).
inline double uncertainty(double distance, double gamma = kDefaultGamma) { return 1.0 - std::exp(-gamma * distance * distance); }

/// Nearest template-space match of each point of A among B's surface points.
std::vector<CorrespondencePair> correspond(const Model& model, const Code& code_a, const Code& code_b,
                                           const Eigen::Matrix3Xd& points_a, const Eigen::Matrix3Xd& surface_b,
                                           double gamma = kDefaultGamma);
/// Same, with B's surface resampled densely from its reconstruction.
std::vector<CorrespondencePair> correspond(const Model& model, const Code& code_a, const Code& code_b,
                                           const Eigen::Matrix3Xd& points_a, double gamma = kDefaultGamma,
                                           int resolution = kDefaultResolution, std::uint64_t seed = 0);

/// n uniform points on the reconstructed surface of a code.
Eigen::Matrix3Xd dense_surface(const Model& model, const Code& code, int n = kDenseSamples, int resolution = kDefaultResolution,
                               std::uint64_t seed = 0);

void write_correspondences_csv(const std::vector<CorrespondencePair>& pairs, const std::filesystem::path& path);

// ---- label and texture transfer -----------------------------------------------------

struct LabeledShape {
  Code code;
  Eigen::Matrix3Xd points;  // surface points in object space
  std::vector<int> labels;
};

struct TransferReport {
  std::vector<int> predicted;
  std::vector<double> part_iou;  // indexed by label; -1 for parts absent from both
  double mean_iou = 0;
  double median_iou = 0;
};

/// k-NN majority vote of source labels; ties go to the lower label. With
/// `object_space` the vote runs on raw coordinates instead of template images.
std::vector<int> transfer_labels(const Model& model, const std::vector<LabeledShape>& sources, const Code& target_code,
                                 const Eigen::Matrix3Xd& target_points, int k = 10, bool object_space = false);
/// IoU per part over the labels present in either list.
TransferReport score_labels(std::vector<int> predicted, const std::vector<int>& truth);

struct TextureResult {
  TriMesh mesh;                      // target with per-vertex colors
  std::vector<double> uncertainty;   // per target vertex
  std::vector<int> source_index;     // matched point in the source set (vertices first, then resampled points)
};

/// Each target vertex takes the color of its template-space nearest neighbour
/// among the source vertices and a dense resampling of the source surface.
TextureResult transfer_texture(const Model& model, const TriMesh& source, const Code& source_code, const TriMesh& target,
                               const Code& target_code, double gamma = kDefaultGamma, int dense = kDenseSamples,
                               std::uint64_t seed = 0);

// ---- editing -----------------------------------------------------------------

struct Handle {
  Vec3 p1 = Vec3::Zero();  // surface point (move) or template point (add-structure)
  Vec3 p2 = Vec3::Zero();  // target position
};

enum class EditMode { kMove, kAddStructure };

struct EditRequest {
  Code alpha;
  std::vector<Handle> handles;
  EditMode mode = EditMode::kMove;
};

struct EditOptions {
  int iterations = 1000;
  double lr = 1e-4;
  double w_handle = 1.0, w_surface = 1.0, w_code = 5.0;  // code term is the mean of |alpha_hat - alpha| over entries
  double eps_surf = 0.01;
  int resolution = kDefaultResolution;  // 0 skips mesh extraction
  int log_every = 25;                   // iterations averaged into one log entry
};

struct EditResult {
  Code alpha;
  TriMesh mesh;
  std::vector<double> trace;      // objective per iteration, before each step
  std::vector<double> log;        // mean of trace over each block of log_every iterations
  std::vector<Vec3> p1_template;  // p1' per handle
  double handle_residual = 0;     // max |p2 + v(p2) - p1'| after the edit
  double surface_residual = 0;    // max |Phi(p2)| after the edit
};

class EditError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

EditResult edit(const Model& model, const EditRequest& req, const EditOptions& opt = {});

// ---- latent space ----------------------------------------------------------------

Code latent_interp(const Code& a, const Code& b, double t);

struct Retrieved {
  int index = -1;
  std::string id;
  double distance = 0;
};
std::vector<Retrieved> latent_retrieve(const training::Checkpoint& ckpt, const Code& code, int k);
/// Draw from N(0, prior^2 I); variational checkpoints only.
Code latent_sample(const training::Checkpoint& ckpt, std::mt19937_64& rng);

// ---- template slices -------------------------------------------------------------

struct SliceGrid {
  int axis = 0;  // 0 = x, 1 = y, 2 = z
  double offset = 0;
  int resolution = 0;
  Eigen::MatrixXd values;  // row = second free axis, col = first free axis
};

SliceGrid template_slice(const Model& model, int axis, double offset, int resolution);
void write_slice_csv(const SliceGrid& s, const std::filesystem::path& path);
/// 8-bit grayscale, values mapped symmetrically: 0 -> 128.
void write_slice_pgm(const SliceGrid& s, const std::filesystem::path& path);
/// Marching cubes of T alone at each level.
std::vector<TriMesh> template_isosurfaces(const Model& model, const std::vector<double>& levels,
                                          int resolution = kDefaultResolution);

}  // namespace dif::correspond
