#include "dif/training/training.hpp"

#include "dif/util/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace dif::training {

using diffkit::Matrix;
using diffkit::Tape;
using diffkit::Var;
using losses::SampleSet;

namespace {

/// Name of the first non-finite term, or empty.
std::string nonfinite_term(const losses::LossBreakdown& b) {
  const std::pair<const char*, double> terms[] = {{"sdf_value", b.sdf_value}, {"sdf_normal", b.sdf_normal},
                                                  {"sdf_eikonal", b.sdf_eikonal}, {"sdf_offsurface", b.sdf_offsurface},
                                                  {"normal", b.normal},       {"smooth", b.smooth},
                                                  {"correction", b.correction}, {"reg", b.reg}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) return name;
  return std::isfinite(b.total) ? "" : "total";
}

std::vector<std::size_t> pick(Eigen::Index pool, int count, std::mt19937_64& rng) {
  std::vector<std::size_t> all(static_cast<std::size_t>(pool));
  std::iota(all.begin(), all.end(), 0);
  if (count >= pool) return all;
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(count));
  std::sample(all.begin(), all.end(), std::back_inserter(out), count, rng);
  return out;
}

}  // namespace

TrainingDiverged::TrainingDiverged(std::string term, Checkpoint last_good, int epoch, int iteration)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", iteration " + std::to_string(iteration) +
                         ": non-finite " + term),
      term_(std::move(term)),
      last_good_(std::move(last_good)) {}

SampleSet draw_points(const SampleSet& pool, int surface, int free, std::mt19937_64& rng) {
  SampleSet out;
  const auto si = pick(pool.surface_count(), surface, rng);
  const auto fi = pick(pool.free_count(), free, rng);
  out.surface.resize(3, static_cast<Eigen::Index>(si.size()));
  out.normals.resize(3, static_cast<Eigen::Index>(si.size()));
  for (std::size_t i = 0; i < si.size(); ++i) {
    out.surface.col(static_cast<Eigen::Index>(i)) = pool.surface.col(static_cast<Eigen::Index>(si[i]));
    out.normals.col(static_cast<Eigen::Index>(i)) = pool.normals.col(static_cast<Eigen::Index>(si[i]));
  }
  out.free.resize(3, static_cast<Eigen::Index>(fi.size()));
  out.sdf.resize(static_cast<Eigen::Index>(fi.size()));
  for (std::size_t i = 0; i < fi.size(); ++i) {
    out.free.col(static_cast<Eigen::Index>(i)) = pool.free.col(static_cast<Eigen::Index>(fi[i]));
    out.sdf(static_cast<Eigen::Index>(i)) = pool.sdf(static_cast<Eigen::Index>(fi[i]));
  }
  return out;
}

ShapeStep shape_step(const nets::DifModel<float>& model, const Eigen::VectorXf& alpha, const Eigen::VectorXf* log_sigma,
                     const Eigen::VectorXf* eps, const SampleSet& draw, const TrainConfig& cfg, const StepOptions& opt) {
  if (alpha.size() != model.config.latent_dim) throw nets::DimensionMismatch("shape_step: code length differs from latent_dim");
  const bool variational = log_sigma != nullptr;
  if (variational && (!eps || log_sigma->size() != alpha.size() || eps->size() != alpha.size()))
    throw nets::DimensionMismatch("shape_step: log_sigma and eps must match the code length");

  Tape<float> t;
  auto bt = nets::bind(t, model.templ, opt.model_grad);
  auto bh = nets::bind(t, model.hyper, opt.model_grad);
  const Matrix<float> a = alpha;
  Var<float> av = t.param_ref(a);
  Var<float> code = av, reg;
  Matrix<float> ls, e;
  const losses::LossWeights& w = cfg.weights;
  if (variational) {
    ls = *log_sigma;
    e = *eps;
    Var<float> lv = t.param_ref(ls);
    code = t.add(av, t.mul(t.exp(lv), t.constant_ref(e)));
    reg = losses::kl_term(t, av, lv, static_cast<float>(w.prior_std));
  } else {
    reg = losses::latent_norm_term(t, av);
  }
  auto deform = nets::hyper_forward(bh, code, model.templ.first_omega, model.templ.hidden_omega);
  const auto packed = losses::pack<float>(draw);
  const bool corr = opt.use_correction && model.config.use_correction;
  auto tr = nets::trace_dif(bt, deform, t.dual_input(packed.points), corr);

  losses::Ablation ab = opt.priors ? cfg.ablation : losses::Ablation{true, true, true};
  if (!corr) ab.no_correction = true;
  auto st = losses::shape_terms(t, tr, t.constant_ref(packed.normals), t.constant_ref(packed.target), packed.n_surface,
                                static_cast<float>(w.delta), ab);
  losses::LossWeights ew = w;
  if (ab.no_normal) ew.normal = 0;
  if (ab.no_smooth) ew.smooth = 0;
  if (ab.no_correction) ew.correction = 0;
  const double reg_weight = variational ? w.kl : w.reg;
  Var<float> loss = losses::weighted_total(t, st, reg, static_cast<float>(reg_weight), ew);

  ShapeStep out;
  out.terms = losses::breakdown(st, reg.scalar(), reg_weight, ew);
  if (!nonfinite_term(out.terms).empty()) return out;
  t.backward(t.scale(loss, opt.scale));
  const Eigen::VectorXf g = t.gradient_vector();
  Eigen::Index off = 0;
  if (opt.model_grad) {
    out.model_grad = g.head(model.num_params());
    off = model.num_params();
  }
  out.code_grad = g.segment(off, alpha.size());
  if (variational) out.log_sigma_grad = g.segment(off + alpha.size(), alpha.size());
  return out;
}

Eigen::VectorXf variational_sample(const Eigen::VectorXf& alpha, const Eigen::VectorXf& sigma, std::mt19937_64& rng) {
  if (sigma.size() != alpha.size()) throw std::invalid_argument("variational_sample: sigma and alpha lengths differ");
  if ((sigma.array() < 0).any()) throw std::invalid_argument("variational_sample: sigma must be non-negative");
  std::normal_distribution<float> n(0.0f, 1.0f);
  Eigen::VectorXf out(alpha.size());
  for (Eigen::Index i = 0; i < alpha.size(); ++i) out(i) = alpha(i) + sigma(i) * n(rng);
  return out;
}

Checkpoint train(const std::vector<SampleSet>& dataset, const TrainConfig& cfg, std::vector<std::string> ids,
                 const EpochCallback& on_epoch) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    try {
      dataset[i].validate();
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("train: shape " + std::to_string(i) + ": " + e.what());
    }
  }
  if (ids.empty())
    for (std::size_t i = 0; i < dataset.size(); ++i) ids.push_back("shape_" + std::to_string(i));
  if (ids.size() != dataset.size()) throw std::invalid_argument("train: one id per shape required");

  const std::size_t n = dataset.size();
  const int k = cfg.model.latent_dim;
  const bool variational = cfg.mode == RegMode::kVariational;
  Checkpoint ck;
  ck.config = cfg;
  // The correction ablation drops the branch from the field, not only its prior.
  if (cfg.ablation.no_correction) ck.config.model.use_correction = false;
  ck.shape_ids = ids;
  ck.model = nets::DifModel<float>::init(ck.config.model, cfg.seed);

  std::mt19937_64 code_rng(cfg.seed ^ 0x5eedc0deULL);
  std::normal_distribution<float> init(0.0f, static_cast<float>(cfg.latent_init_std));
  ck.codes.assign(n, Eigen::VectorXf(k));
  for (auto& c : ck.codes)
    for (int i = 0; i < k; ++i) c(i) = init(code_rng);
  std::vector<Eigen::VectorXf> log_sigma;
  if (variational) log_sigma.assign(n, Eigen::VectorXf::Constant(k, static_cast<float>(std::log(cfg.weights.prior_std))));

  const auto layout = ck.model.layout();
  Eigen::VectorXf flat = ck.model.flatten();
  auto model_state = diffkit::AdamState::zeros(flat.size(), cfg.lr);
  std::vector<diffkit::AdamState> code_state(n, diffkit::AdamState::zeros(k, cfg.lr));
  std::vector<diffkit::AdamState> sigma_state(variational ? n : 0, diffkit::AdamState::zeros(k, cfg.lr));

  auto snapshot = [&]() {
    Checkpoint s = ck;
    if (variational) {
      s.sigmas.clear();
      for (const auto& l : log_sigma) s.sigmas.push_back(l.array().exp().matrix());
    }
    return s;
  };

  std::mt19937_64 rng(cfg.seed + 1);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  StepOptions opt;
  int iteration = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      ++iteration;
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b0 + bs)));
      opt.scale = 1.0f / static_cast<float>(batch.size());
      std::vector<SampleSet> draws;
      std::vector<Eigen::VectorXf> eps;
      for (std::size_t s : batch) {
        draws.push_back(draw_points(dataset[s], cfg.surface_points, cfg.free_points, rng));
        if (variational) {
          Eigen::VectorXf e(k);
          for (int i = 0; i < k; ++i) e(i) = normal(rng);
          eps.push_back(std::move(e));
        }
      }
      std::vector<ShapeStep> steps(batch.size());
      util::parallel_for(batch.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
          const std::size_t s = batch[i];
          steps[i] = shape_step(ck.model, ck.codes[s], variational ? &log_sigma[s] : nullptr, variational ? &eps[i] : nullptr,
                                draws[i], cfg, opt);
        }
      });

      Eigen::VectorXf grad = Eigen::VectorXf::Zero(flat.size());
      losses::LossBreakdown mean;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::string bad = nonfinite_term(steps[i].terms);
        if (!bad.empty()) throw TrainingDiverged(bad + " (shape " + ids[batch[i]] + ")", snapshot(), epoch, iteration);
        grad += steps[i].model_grad;
        const auto& tb = steps[i].terms;
        mean.total += tb.total;
        mean.sdf += tb.sdf;
        mean.normal += tb.normal;
        mean.smooth += tb.smooth;
        mean.correction += tb.correction;
        mean.reg += tb.reg;
        mean.sdf_value += tb.sdf_value;
        mean.sdf_normal += tb.sdf_normal;
        mean.sdf_eikonal += tb.sdf_eikonal;
        mean.sdf_offsurface += tb.sdf_offsurface;
      }
      try {
        diffkit::adam_step(model_state, flat, grad, &layout);
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const std::size_t s = batch[i];
          diffkit::adam_step(code_state[s], ck.codes[s], steps[i].code_grad);
          if (variational) diffkit::adam_step(sigma_state[s], log_sigma[s], steps[i].log_sigma_grad);
        }
      } catch (const diffkit::NonFiniteGradient& e) {
        throw TrainingDiverged("gradient of " + e.block(), snapshot(), epoch, iteration);
      }
      ck.model.unflatten(flat);

      const double inv = 1.0 / static_cast<double>(batch.size());
      log.total += mean.total * inv;
      log.sdf += mean.sdf * inv;
      log.normal += mean.normal * inv;
      log.smooth += mean.smooth * inv;
      log.correction += mean.correction * inv;
      log.reg += mean.reg * inv;
      log.sdf_value += mean.sdf_value * inv;
      log.sdf_normal += mean.sdf_normal * inv;
      log.sdf_eikonal += mean.sdf_eikonal * inv;
      log.sdf_offsurface += mean.sdf_offsurface * inv;
      ++batches;
    }
    for (double* v : {&log.total, &log.sdf, &log.normal, &log.smooth, &log.correction, &log.reg, &log.sdf_value, &log.sdf_normal,
                      &log.sdf_eikonal, &log.sdf_offsurface})
      *v /= batches;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ck.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (variational)
    for (const auto& l : log_sigma) ck.sigmas.push_back(l.array().exp().matrix());
  return ck;
}

}  // namespace dif::training
