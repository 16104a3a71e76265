#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "instdet/evalkit.hpp"
#include "instdet/infer.hpp"
#include "instdet/render.hpp"
#include "instdet/simdata.hpp"
#include "instdet/train.hpp"

namespace instdet {

/// Procedural (or OBJ) object description. Shape selects which fields apply.
struct ObjectSpec {
  std::string id;
  std::string shape = "cuboid";  // cuboid | cylinder | sphere | obj
  std::vector<double> size = {0.08, 0.06, 0.04};  // cuboid extents (m)
  double radius = 0.03;
  double height = 0.1;
  std::vector<std::vector<double>> colors;  // RGB in [0, 1]; count depends on shape
  double checker_cell = 0.0;
  std::string path;  // obj only

  ObjectModel build() const;
};

struct DatasetSettings {
  int num_scenes = 20;
  double tabletop_ratio = 0.8;
  double val_fraction = 0.1;
  int workers = 1;
  std::string objects = "train";  // which catalog split populates the scenes
  SceneConfig scene;
};

struct TemplateBankSettings {
  int n_inplane = 10;  // 16 viewpoints each: 5 -> 80, 10 -> 160, 20 -> 320
  int global_index = 0;
  double target_extent = 107.5;
};

struct EvaluateSettings {
  double iou_threshold = 0.5;
  double nms_threshold = 0.5;
  std::string interpolation = "all_points";  // all_points | eleven_point
};

struct AblationSettings {
  std::vector<int> inplane_counts = {5, 10, 20};
  std::vector<double> perturbations_deg = {0, 10, 20, 30, 40, 180};
  long retrain_iterations = 50;
  bool branch_variants = true;
  int timing_repeats = 1;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_root = "runs";
  int threads = 1;
  std::vector<ObjectSpec> objects;
  std::vector<std::string> train_objects;
  std::vector<std::string> test_objects;
  DatasetSettings dataset;
  NetworkConfig network = NetworkConfig::tiny();
  TrainConfig train;
  TemplateBankSettings templates;
  DetectConfig detect;
  EvaluateSettings evaluate;
  AblationSettings ablation;

  /// Throws ConfigError.
  void validate() const;
  std::vector<ObjectModel> catalog(const std::vector<std::string>& ids) const;
  TemplateSettings template_settings() const;
  ApInterpolation interpolation() const;
};

/// Built-in procedural catalog: six training shapes and two held-out ones.
std::vector<ObjectSpec> default_object_specs();

/// Defaults are the desk-scale configuration; a document only lists overrides.
/// Unknown keys are rejected. Throws ConfigError.
RunConfig run_config_from_yaml(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& c);

/// FNV-1a over the canonical JSON of the resolved config, 16 hex digits.
std::string config_hash(const RunConfig& c);

}  // namespace instdet
