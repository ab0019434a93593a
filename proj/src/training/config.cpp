#include "dif/training/training.hpp"

namespace dif::training {

using nlohmann::json;

namespace {

template <typename T>
void take(const json& v, const std::string& key, T& dst) {
  try {
    dst = v.get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

[[noreturn]] void unknown(const std::string& key) { throw std::invalid_argument("unknown config key '" + key + "'"); }

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](long v, const char* name) {
    if (v <= 0) throw std::invalid_argument(std::string("config field '") + name + "' must be positive");
  };
  if (epochs < 0) throw std::invalid_argument("config field 'epochs' must be non-negative");
  positive(batch_size, "batch_size");
  positive(model.latent_dim, "model.latent_dim");
  positive(model.template_width, "model.template_width");
  positive(model.template_layers, "model.template_layers");
  positive(model.deform_width, "model.deform_width");
  positive(model.deform_layers, "model.deform_layers");
  positive(model.hyper_width, "model.hyper_width");
  if (model.hyper_layers < 0) throw std::invalid_argument("config field 'model.hyper_layers' must be non-negative");
  if (surface_points < 0 || free_points < 0 || surface_points + free_points == 0)
    throw std::invalid_argument("config fields 'surface_points'/'free_points' must be non-negative and not both zero");
  if (!(lr > 0)) throw std::invalid_argument("config field 'lr' must be positive");
  if (!(latent_init_std >= 0)) throw std::invalid_argument("config field 'latent_init_std' must be non-negative");
  weights.validate();
}

TrainConfig toy_config() {
  TrainConfig c;
  c.model.latent_dim = 32;
  c.model.template_width = 64;
  c.model.template_layers = 3;
  c.model.deform_width = 64;
  c.model.deform_layers = 2;
  c.model.hyper_width = 64;
  c.model.hyper_layers = 1;
  c.epochs = 300;
  c.surface_points = 2000;
  c.free_points = 2000;
  c.batch_size = 4;
  c.lr = 1e-4;
  c.weights = losses::LossWeights::for_category(losses::Category::kTable);
  return c;
}

json to_json(const nets::ModelConfig& c) {
  return {{"latent_dim", c.latent_dim},         {"template_width", c.template_width}, {"template_layers", c.template_layers},
          {"deform_width", c.deform_width},     {"deform_layers", c.deform_layers},   {"hyper_width", c.hyper_width},
          {"hyper_layers", c.hyper_layers},     {"first_omega", c.first_omega},       {"hidden_omega", c.hidden_omega},
          {"hyper_out_scale", c.hyper_out_scale}, {"use_correction", c.use_correction}};
}

json to_json(const losses::LossWeights& w) {
  return {{"sdf_value", w.sdf_value},   {"sdf_normal", w.sdf_normal}, {"sdf_eikonal", w.sdf_eikonal},
          {"sdf_offsurface", w.sdf_offsurface}, {"normal", w.normal}, {"smooth", w.smooth},
          {"correction", w.correction}, {"reg", w.reg},               {"kl", w.kl},
          {"delta", w.delta},           {"prior_std", w.prior_std}};
}

json to_json(const TrainConfig& c) {
  return {{"model", to_json(c.model)},
          {"epochs", c.epochs},
          {"surface_points", c.surface_points},
          {"free_points", c.free_points},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weights", to_json(c.weights)},
          {"latent_init_std", c.latent_init_std},
          {"mode", c.mode == RegMode::kVariational ? "variational" : "norm"},
          {"ablation",
           {{"no_normal", c.ablation.no_normal}, {"no_smooth", c.ablation.no_smooth}, {"no_correction", c.ablation.no_correction}}},
          {"seed", c.seed}};
}

void apply_json(const json& j, nets::ModelConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k == "latent_dim") take(v, k, c.latent_dim);
    else if (k == "template_width") take(v, k, c.template_width);
    else if (k == "template_layers") take(v, k, c.template_layers);
    else if (k == "deform_width") take(v, k, c.deform_width);
    else if (k == "deform_layers") take(v, k, c.deform_layers);
    else if (k == "hyper_width") take(v, k, c.hyper_width);
    else if (k == "hyper_layers") take(v, k, c.hyper_layers);
    else if (k == "first_omega") take(v, k, c.first_omega);
    else if (k == "hidden_omega") take(v, k, c.hidden_omega);
    else if (k == "hyper_out_scale") take(v, k, c.hyper_out_scale);
    else if (k == "use_correction") take(v, k, c.use_correction);
    else unknown("model." + k);
  }
}

void apply_json(const json& j, losses::LossWeights& w) {
  if (!j.is_object()) throw std::invalid_argument("loss weights must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k == "sdf_value") take(v, k, w.sdf_value);
    else if (k == "sdf_normal") take(v, k, w.sdf_normal);
    else if (k == "sdf_eikonal") take(v, k, w.sdf_eikonal);
    else if (k == "sdf_offsurface") take(v, k, w.sdf_offsurface);
    else if (k == "normal") take(v, k, w.normal);
    else if (k == "smooth") take(v, k, w.smooth);
    else if (k == "correction") take(v, k, w.correction);
    else if (k == "reg") take(v, k, w.reg);
    else if (k == "kl") take(v, k, w.kl);
    else if (k == "delta") take(v, k, w.delta);
    else if (k == "prior_std") take(v, k, w.prior_std);
    else unknown("weights." + k);
  }
}

void apply_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("training config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k == "model") apply_json(v, c.model);
    else if (k == "weights") apply_json(v, c.weights);
    else if (k == "epochs") take(v, k, c.epochs);
    else if (k == "surface_points") take(v, k, c.surface_points);
    else if (k == "free_points") take(v, k, c.free_points);
    else if (k == "batch_size") take(v, k, c.batch_size);
    else if (k == "lr") take(v, k, c.lr);
    else if (k == "latent_init_std") take(v, k, c.latent_init_std);
    else if (k == "seed") take(v, k, c.seed);
    else if (k == "mode") {
      std::string m;
      take(v, k, m);
      if (m == "norm") c.mode = RegMode::kNorm;
      else if (m == "variational") c.mode = RegMode::kVariational;
      else throw std::invalid_argument("config key 'mode' must be \"norm\" or \"variational\"");
    } else if (k == "ablation") {
      if (!v.is_object()) throw std::invalid_argument("config key 'ablation' must be an object");
      for (const auto& [ak, av] : v.items()) {
        if (ak == "no_normal") take(av, ak, c.ablation.no_normal);
        else if (ak == "no_smooth") take(av, ak, c.ablation.no_smooth);
        else if (ak == "no_correction") take(av, ak, c.ablation.no_correction);
        else unknown("ablation." + ak);
      }
    } else {
      unknown(k);
    }
  }
}

}  // namespace dif::training
