#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <opencv2/core.hpp>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "instdet/boxgeom.hpp"
#include "instdet/render.hpp"
#include "instdet/templates.hpp"

namespace instdet {

enum class SceneStyle { tabletop, composite };

std::string to_string(SceneStyle s);
SceneStyle scene_style_from_string(const std::string& s);

struct SceneObject {
  std::string object_id;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // object -> camera
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  std::optional<BBox> box;  // tight box of the visibility mask; empty when fully hidden
  cv::Mat visibility;       // CV_8U {0, 1}, image sized
  Eigen::Vector2d projected_center = Eigen::Vector2d::Zero();

  int visible_pixels() const;
};

struct SceneSample {
  cv::Mat image;  // CV_8UC3, RGB order
  std::vector<SceneObject> objects;
  SceneStyle style = SceneStyle::tabletop;
  Intrinsics intrinsics;
  double camera_distance = 0.0;  // tabletop: camera centre to table centre
};

/// Tight box of a binary mask in continuous pixel coordinates.
std::optional<BBox> mask_box(const cv::Mat& mask);

struct HeatmapGT {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major

  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

/// exp(-d^2 / (2 * variance)) around the centre mapped to the output grid. Cell
/// (row, col) covers the pixel centre ((col + 0.5) * down, (row + 0.5) * down).
HeatmapGT make_center_heatmap(const Eigen::Vector2d& center_px, int out_height, int out_width, double down_factor,
                              double variance = 5.0);

struct SceneConfig {
  int width = 640;
  int height = 480;
  double focal = 540.0;
  int min_objects = 4;
  int max_objects = 13;
  // tabletop
  double camera_radius_min = 0.8;
  double camera_radius_max = 1.4;
  double elevation_min_deg = 25.0;
  double elevation_max_deg = 85.0;
  double camera_offset_deg = 15.0;
  double upright_bias = 0.5;
  double table_half_extent = 0.25;
  int max_rejections = 500;
  // composite
  double composite_depth_min = 0.5;
  double composite_depth_max = 1.2;
  std::string background_dir;  // empty: procedural noise backgrounds
  // lighting randomization
  double light_intensity_min = 0.7;
  double light_intensity_max = 1.2;
  double light_color_jitter = 0.15;
};

/// Procedural smooth colour-noise background (CV_32FC3).
cv::Mat procedural_background(int width, int height, std::mt19937_64& rng);

/// One scene containing every given object. Tabletop: rejection-sampled
/// non-penetrating resting placement and a camera on a half-sphere around the table.
/// Composite: random poses pasted over a background.
SceneSample generate_scene(std::span<const ObjectModel> objects, std::mt19937_64& rng, SceneStyle style,
                           const SceneConfig& cfg, Renderer& renderer);

struct AugmentationConfig {
  double object_hsv_prob = 0.5;
  double hue_shift_deg = 12.0;
  double saturation_jitter = 0.25;
  double value_jitter = 0.25;
  double brightness_prob = 0.5;
  double brightness_delta = 0.15;
  double gaussian_blur_prob = 0.2;
  double gaussian_blur_sigma_max = 1.5;
  double noise_prob = 0.3;
  double noise_std = 0.03;
  double hflip_prob = 0.5;
  double vflip_prob = 0.2;
  double affine_prob = 0.5;
  double max_translate = 0.1;  // fraction of image size
  double scale_min = 0.85;
  double scale_max = 1.15;
  double global_hue_prob = 0.5;
  double motion_blur_prob = 0.2;
  int motion_blur_max_len = 9;

  static AugmentationConfig disabled();
  bool valid() const;
};

struct AugmentTrace {
  bool object_jitter = false;
  bool global_hue = false;
  bool hflip = false;
  bool vflip = false;
  bool affine = false;
  bool brightness = false;
  bool gaussian_blur = false;
  bool noise = false;
  bool motion_blur = false;
};

struct Augmented {
  SceneSample sample;
  std::vector<Template> templates;
  AugmentTrace trace;
};

/// Object colour jitter hits the target's pixels and (independently drawn) each
/// template; the global hue shift is shared by image and templates; geometric
/// transforms keep masks, boxes and centres consistent.
Augmented augment(const SceneSample& sample, int target_index, std::span<const Template> templates,
                  const AugmentationConfig& cfg, std::mt19937_64& rng);

struct DatasetIndex {
  struct Entry {
    SceneStyle style = SceneStyle::tabletop;
    std::vector<int> targets;  // object indices usable as detection targets
  };
  std::vector<Entry> scenes;
};

struct BatchItem {
  int scene = 0;
  int target = 0;  // index into the scene's objects; all others are distractors
  SceneStyle style = SceneStyle::tabletop;
};

/// Each item comes from the tabletop pool with probability tabletop_ratio.
std::vector<BatchItem> sample_batch(const DatasetIndex& index, int batch_size, double tabletop_ratio,
                                    std::mt19937_64& rng);

// On-disk layout: <dir>/image.png, <dir>/mask_<k>.png, <dir>/meta.json.
void write_scene(const SceneSample& s, const std::filesystem::path& dir);
SceneSample read_scene(const std::filesystem::path& dir);

}  // namespace instdet
