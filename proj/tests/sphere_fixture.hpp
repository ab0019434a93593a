#pragma once

#include "dif/geometry/sampling.hpp"
#include "dif/training/dataset.hpp"
#include "dif/training/training.hpp"

namespace dif::test {

/// Two spheres trained briefly; enough for a usable field.
inline const training::Checkpoint& sphere_checkpoint() {
  static const training::Checkpoint ckpt = [] {
    std::vector<losses::SampleSet> data;
    for (double r : {0.45, 0.65}) {
      const auto mesh = geometry::icosphere(r, 3);
      data.push_back(training::to_sample_set(geometry::sample_shape(mesh, 1500, 1500, 11, 20)));
    }
    training::TrainConfig cfg;
    cfg.model.latent_dim = 6;
    cfg.model.template_layers = 2;
    cfg.model.deform_width = 16;
    cfg.model.deform_layers = 2;
    cfg.model.hyper_width = 16;
    cfg.model.hyper_layers = 1;
    cfg.model.template_width = 32;
    cfg.epochs = 800;
    cfg.surface_points = 500;
    cfg.free_points = 500;
    cfg.batch_size = 1;
    cfg.lr = 1e-3;
    cfg.seed = 3;
    return training::train(data, cfg, {"small", "large"});
  }();
  return ckpt;
}

}  // namespace dif::test
