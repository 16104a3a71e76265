#pragma once

#include <filesystem>
#include <opencv2/core.hpp>
#include <string>

#include "instdet/render.hpp"
#include "instdet/viewsphere.hpp"

namespace instdet {

inline constexpr int kTemplateCanvas = 124;

/// Template rendering setup. The object is framed so its largest projected
/// length lands on `target_extent`, which must fall in [min_extent, max_extent].
struct TemplateSettings {
  double focal = 540.0;
  int canvas = kTemplateCanvas;
  double target_extent = 107.5;
  double min_extent = 100.0;
  double max_extent = 115.0;
  Lighting lighting{};
};

/// 124x124 RGB (CV_8UC3, RGB order, exactly 0 outside the mask) + binary mask (CV_8U {0,1}).
struct Template {
  cv::Mat rgb;
  cv::Mat mask;
  Pose pose;
  double render_depth = 0.0;
  std::string object_id;

  bool valid() const;
  /// Max of width/height of the mask's tight box, in pixels.
  int mask_extent() const;
};

/// Depth along the optical axis at which the projected extent of the model,
/// seen with `rotation`, equals settings.target_extent.
double frame_distance(const ObjectModel& model, const Eigen::Matrix3d& rotation, const TemplateSettings& settings);

/// Renders the model at the framing distance for pose.rotation (pose.render_depth is
/// replaced), crops to the mask and pads symmetrically to the canvas.
Template render_template(Renderer& renderer, const ObjectModel& model, const Pose& pose,
                         const TemplateSettings& settings = {});

// PNG (RGBA, alpha = mask * 255) plus a JSON sidecar with pose, depth and object id.
void save_template(const Template& t, const std::filesystem::path& png_path);
Template load_template(const std::filesystem::path& png_path);

}  // namespace instdet
