#include "instdet/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "instdet/errors.hpp"

namespace instdet {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SceneConfig, width, height, focal, min_objects, max_objects, camera_radius_min,
                                   camera_radius_max, elevation_min_deg, elevation_max_deg, camera_offset_deg,
                                   upright_bias, table_half_extent, max_rejections, composite_depth_min,
                                   composite_depth_max, background_dir, light_intensity_min, light_intensity_max,
                                   light_color_jitter)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AugmentationConfig, object_hsv_prob, hue_shift_deg, saturation_jitter,
                                   value_jitter, brightness_prob, brightness_delta, gaussian_blur_prob,
                                   gaussian_blur_sigma_max, noise_prob, noise_std, hflip_prob, vflip_prob,
                                   affine_prob, max_translate, scale_min, scale_max, global_hue_prob,
                                   motion_blur_prob, motion_blur_max_len)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LossWeights, lambda_seg, lambda_center, focal_gamma, focal_alpha, smooth_l1_beta)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DetectConfig, score_threshold, top_k_per_template, nms_threshold, depth_filter,
                                   depth_filter_before_nms, min_depth, max_depth, template_batch, max_detections)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DatasetSettings, num_scenes, tabletop_ratio, val_fraction, workers, objects,
                                   scene)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TemplateBankSettings, n_inplane, global_index, target_extent)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvaluateSettings, iou_threshold, nms_threshold, interpolation)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AblationSettings, inplane_counts, perturbations_deg, retrain_iterations,
                                   branch_variants, timing_repeats)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ObjectSpec, id, shape, size, radius, height, colors, checker_cell, path)

namespace {

using json = nlohmann::json;

nlohmann::json train_to_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"lr_step_epochs", t.lr_step_epochs},
          {"lr_gamma", t.lr_gamma},
          {"epochs", t.epochs},
          {"iterations_per_epoch", t.iterations_per_epoch},
          {"max_iterations", t.max_iterations},
          {"batch_size", t.batch_size},
          {"tabletop_ratio", t.tabletop_ratio},
          {"perturbation_deg", t.perturbation.max_angle_deg},
          {"augmentation", t.augmentation},
          {"validation_items", t.validation_items}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  j.at("learning_rate").get_to(t.learning_rate);
  j.at("weight_decay").get_to(t.weight_decay);
  j.at("lr_step_epochs").get_to(t.lr_step_epochs);
  j.at("lr_gamma").get_to(t.lr_gamma);
  j.at("epochs").get_to(t.epochs);
  j.at("iterations_per_epoch").get_to(t.iterations_per_epoch);
  j.at("max_iterations").get_to(t.max_iterations);
  j.at("batch_size").get_to(t.batch_size);
  j.at("tabletop_ratio").get_to(t.tabletop_ratio);
  j.at("perturbation_deg").get_to(t.perturbation.max_angle_deg);
  j.at("augmentation").get_to(t.augmentation);
  j.at("validation_items").get_to(t.validation_items);
  return t;
}

// Scalars keep their YAML spelling unless quoted: ints, then floats, then booleans.
json yaml_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& e : n) a.push_back(yaml_to_json(e));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : n) o[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return o;
    }
    case YAML::NodeType::Scalar:
      break;
  }
  const std::string s = n.Scalar();
  if (n.Tag() == "!") return s;
  long long i = 0;
  if (YAML::convert<long long>::decode(n, i)) return i;
  double d = 0.0;
  if (YAML::convert<double>::decode(n, d)) return d;
  if (s == "true" || s == "false") return s == "true";
  return s;
}

// Overlays `over` on `base`; keys absent from base are configuration errors.
void merge_strict(json& base, const json& over, const std::string& where) {
  if (!over.is_object()) throw ConfigError(where + ": expected a mapping");
  for (const auto& [key, value] : over.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (base[key].is_object() && value.is_object())
      merge_strict(base[key], value, path);
    else
      base[key] = value;
  }
}

Eigen::Vector3f color_at(const ObjectSpec& s, std::size_t i) {
  if (i >= s.colors.size() || s.colors[i].size() != 3)
    throw ConfigError("object '" + s.id + "': needs RGB colour #" + std::to_string(i));
  return {static_cast<float>(s.colors[i][0]), static_cast<float>(s.colors[i][1]), static_cast<float>(s.colors[i][2])};
}

ObjectSpec cuboid(std::string id, std::vector<double> size, std::vector<std::vector<double>> colors,
                  double checker = 0.0) {
  ObjectSpec s;
  s.id = std::move(id);
  s.shape = "cuboid";
  s.size = std::move(size);
  s.colors = std::move(colors);
  s.checker_cell = checker;
  return s;
}

ObjectSpec round_shape(std::string id, std::string shape, double radius, double height,
                 std::vector<std::vector<double>> colors) {
  ObjectSpec s;
  s.id = std::move(id);
  s.shape = std::move(shape);
  s.radius = radius;
  s.height = height;
  s.colors = std::move(colors);
  return s;
}

}  // namespace

ObjectModel ObjectSpec::build() const {
  if (shape == "cuboid") {
    if (size.size() != 3) throw ConfigError("object '" + id + "': cuboid size needs 3 values");
    std::array<Eigen::Vector3f, 6> faces;
    for (std::size_t f = 0; f < 6; ++f) faces[f] = color_at(*this, colors.size() == 6 ? f : 0);
    return make_cuboid(id, {size[0], size[1], size[2]}, faces, checker_cell);
  }
  if (shape == "cylinder")
    return make_cylinder(id, radius, height, color_at(*this, 0), color_at(*this, colors.size() > 1 ? 1 : 0), 32,
                         checker_cell);
  if (shape == "sphere") return make_sphere(id, radius, color_at(*this, 0), color_at(*this, colors.size() > 1 ? 1 : 0));
  if (shape == "obj") return load_obj_model(id, path, color_at(*this, 0));
  throw ConfigError("object '" + id + "': unknown shape '" + shape + "'");
}

std::vector<ObjectSpec> default_object_specs() {
  return {
      cuboid("box_red", {0.09, 0.06, 0.04},
             {{0.85, 0.2, 0.2}, {0.7, 0.15, 0.15}, {0.95, 0.85, 0.8}, {0.6, 0.1, 0.1}, {0.9, 0.4, 0.3}, {0.5, 0.1, 0.1}}),
      cuboid("box_blue", {0.05, 0.05, 0.1},
             {{0.2, 0.3, 0.85}, {0.15, 0.2, 0.7}, {0.9, 0.9, 0.95}, {0.1, 0.15, 0.6}, {0.3, 0.5, 0.9}, {0.1, 0.1, 0.5}}),
      round_shape("can_yellow", "cylinder", 0.03, 0.11, {{0.9, 0.8, 0.15}, {0.6, 0.6, 0.6}}),
      round_shape("can_green", "cylinder", 0.045, 0.06, {{0.2, 0.7, 0.3}, {0.9, 0.9, 0.85}}),
      round_shape("ball", "sphere", 0.04, 0.0, {{0.95, 0.5, 0.1}, {0.2, 0.2, 0.2}}),
      cuboid("slab", {0.12, 0.08, 0.02}, {{0.8, 0.8, 0.75}}, 0.02),
      cuboid("tower", {0.04, 0.04, 0.12},
             {{0.6, 0.2, 0.7}, {0.2, 0.6, 0.6}, {0.9, 0.9, 0.3}, {0.5, 0.15, 0.6}, {0.1, 0.5, 0.5}, {0.8, 0.8, 0.2}}),
      round_shape("puck", "cylinder", 0.05, 0.03, {{0.1, 0.1, 0.12}, {0.85, 0.3, 0.5}}),
  };
}

void RunConfig::validate() const {
  network.validate();
  if (threads < 1) throw ConfigError("threads must be >= 1");
  std::set<std::string> ids;
  for (const auto& o : objects)
    if (!ids.insert(o.id).second) throw ConfigError("duplicate object id '" + o.id + "'");
  for (const auto* list : {&train_objects, &test_objects}) {
    if (list->empty()) throw ConfigError("train_objects and test_objects must be non-empty");
    for (const auto& id : *list)
      if (!ids.count(id)) throw ConfigError("object '" + id + "' is not in the catalog");
  }
  for (const auto& a : train_objects)
    for (const auto& b : test_objects)
      if (a == b) throw ConfigError("object '" + a + "' is both a training and a test object");
  if (dataset.num_scenes < 1) throw ConfigError("dataset.num_scenes must be >= 1");
  if (dataset.workers < 1) throw ConfigError("dataset.workers must be >= 1");
  if (!(dataset.tabletop_ratio >= 0.0 && dataset.tabletop_ratio <= 1.0))
    throw ConfigError("dataset.tabletop_ratio must lie in [0, 1]");
  if (!(dataset.val_fraction >= 0.0 && dataset.val_fraction < 1.0))
    throw ConfigError("dataset.val_fraction must lie in [0, 1)");
  if (dataset.objects != "train" && dataset.objects != "test")
    throw ConfigError("dataset.objects must be 'train' or 'test'");
  if (dataset.scene.min_objects < 1 || dataset.scene.max_objects < dataset.scene.min_objects)
    throw ConfigError("dataset.scene object counts must satisfy 1 <= min <= max");
  if (dataset.scene.width != network.input_width || dataset.scene.height != network.input_height)
    throw ConfigError("dataset.scene size must match the network input size");
  if (train.batch_size < 1 || train.epochs < 1 || train.iterations_per_epoch < 1)
    throw ConfigError("train: batch_size, epochs and iterations_per_epoch must be >= 1");
  if (!(train.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!train.augmentation.valid()) throw ConfigError("train.augmentation is invalid");
  if (!train.loss.valid()) throw ConfigError("loss weights are invalid");
  auto standard_inplane = [](int n) { return n == 5 || n == 10 || n == 20; };
  if (!standard_inplane(templates.n_inplane)) throw ConfigError("templates.n_inplane must be 5, 10 or 20");
  if (templates.global_index < 0 || templates.global_index >= 240)
    throw ConfigError("templates.global_index must lie in [0, 240)");
  if (detect.template_batch < 1 || detect.top_k_per_template < 1 || detect.max_detections < 1)
    throw ConfigError("detect: template_batch, top_k_per_template and max_detections must be >= 1");
  interpolation();
  for (int n : ablation.inplane_counts)
    if (!standard_inplane(n)) throw ConfigError("ablation.inplane_counts entries must be 5, 10 or 20");
}

std::vector<ObjectModel> RunConfig::catalog(const std::vector<std::string>& ids) const {
  std::vector<ObjectModel> out;
  for (const auto& id : ids) {
    const ObjectSpec* spec = nullptr;
    for (const auto& o : objects)
      if (o.id == id) spec = &o;
    if (!spec) throw ConfigError("object '" + id + "' is not in the catalog");
    out.push_back(spec->build());
  }
  return out;
}

TemplateSettings RunConfig::template_settings() const {
  TemplateSettings s;
  s.target_extent = templates.target_extent;
  return s;
}

ApInterpolation RunConfig::interpolation() const {
  if (evaluate.interpolation == "all_points") return ApInterpolation::all_points;
  if (evaluate.interpolation == "eleven_point") return ApInterpolation::eleven_point;
  throw ConfigError("evaluate.interpolation must be 'all_points' or 'eleven_point'");
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"output_root", c.output_root},
          {"threads", c.threads},
          {"objects", c.objects},
          {"train_objects", c.train_objects},
          {"test_objects", c.test_objects},
          {"dataset", c.dataset},
          {"network", to_json(c.network)},
          {"train", train_to_json(c.train)},
          {"loss", c.train.loss},
          {"templates", c.templates},
          {"detect", c.detect},
          {"evaluate", c.evaluate},
          {"ablation", c.ablation}};
}

RunConfig run_config_from_yaml(const std::string& text) {
  json over;
  try {
    over = yaml_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed YAML: ") + e.what());
  }
  if (over.is_null()) over = json::object();
  if (!over.is_object()) throw ConfigError("config root must be a mapping");

  RunConfig def;
  def.objects = default_object_specs();
  for (std::size_t i = 0; i < def.objects.size(); ++i)
    (i < 6 ? def.train_objects : def.test_objects).push_back(def.objects[i].id);

  // The network preset is resolved first so the remaining keys override it.
  std::string preset = "tiny";
  if (over.contains("network") && over["network"].contains("preset")) {
    preset = over["network"]["preset"].get<std::string>();
    over["network"].erase("preset");
  }
  if (preset == "full")
    def.network = NetworkConfig::full();
  else if (preset == "mini")
    def.network = NetworkConfig::mini();
  else if (preset != "tiny")
    throw ConfigError("network.preset must be tiny, full or mini");
  def.dataset.scene.width = def.network.input_width;
  def.dataset.scene.height = def.network.input_height;

  json base = to_json(def);
  // Lists are replaced wholesale rather than merged element-wise.
  for (const char* k : {"objects", "train_objects", "test_objects"})
    if (over.contains(k)) {
      base[k] = over[k];
      over.erase(k);
    }
  merge_strict(base, over, "");

  RunConfig c;
  try {
    base.at("seed").get_to(c.seed);
    base.at("output_root").get_to(c.output_root);
    base.at("threads").get_to(c.threads);
    c.objects.clear();
    for (const auto& o : base.at("objects")) {
      json full = ObjectSpec{};
      merge_strict(full, o, "objects[]");
      c.objects.push_back(full.get<ObjectSpec>());
    }
    base.at("train_objects").get_to(c.train_objects);
    base.at("test_objects").get_to(c.test_objects);
    base.at("dataset").get_to(c.dataset);
    c.network = network_config_from_json(base.at("network"));
    c.train = train_from_json(base.at("train"));
    base.at("loss").get_to(c.train.loss);
    base.at("templates").get_to(c.templates);
    base.at("detect").get_to(c.detect);
    base.at("evaluate").get_to(c.evaluate);
    base.at("ablation").get_to(c.ablation);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return run_config_from_yaml(ss.str());
}

std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace instdet
