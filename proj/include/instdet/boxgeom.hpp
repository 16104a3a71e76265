#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace instdet {

/// Axis-aligned box in continuous pixel coordinates. The pixel (c, r) covers
/// [c, c+1) x [r, r+1).
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  /// Finite coordinates with strictly positive extent.
  bool valid() const;

  static BBox from_center(double cx, double cy, double w, double h);

  bool operator==(const BBox&) const = default;
};

/// Intersection over union. Throws std::domain_error on degenerate boxes.
double iou(const BBox& a, const BBox& b);

/// Clamp to [0, width] x [0, height]. Used when exporting, never for targets.
BBox clip_to_image(const BBox& box, int width, int height);

struct AnchorSpec {
  int feature_height = 0;
  int feature_width = 0;
  double stride = 16.0;
  std::vector<double> scales;
  std::vector<double> ratios;

  int anchors_per_location() const { return static_cast<int>(scales.size() * ratios.size()); }
};

/// Anchors are ordered row-major over cells, then by scale, then by ratio:
/// index = ((row * W + col) * n_scales + s) * n_ratios + r.
struct AnchorGrid {
  AnchorSpec spec;
  std::vector<BBox> anchors;

  std::size_t size() const { return anchors.size(); }
};

// Default anchor set: 8 scales x 3 ratios.
std::vector<double> default_anchor_scales();
std::vector<double> default_anchor_ratios();

/// Width = s * sqrt(r), height = s / sqrt(r), centred on ((col+0.5)*stride, (row+0.5)*stride).
AnchorGrid generate_anchors(const AnchorSpec& spec);

struct Detection {
  BBox bbox;
  double score = 0.0;
  int template_index = -1;
  std::string object_id;
  std::optional<double> est_depth;
};

/// Greedy suppression. Candidates are visited by descending score (ties keep
/// input order) and dropped when IoU with a kept box exceeds the threshold.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

inline constexpr double kTemplateSize = 124.0;

/// render_depth * template_size / longest side of the predicted box.
double estimate_depth(const BBox& pred, double template_render_depth,
                      double template_size = kTemplateSize);

/// Keeps detections with est_depth inside [min_depth, max_depth], order preserved.
/// Throws ContractError if a detection has no depth.
std::vector<Detection> filter_by_depth(const std::vector<Detection>& dets, double min_depth,
                                       double max_depth);

// Line format: image_id,object_id,x_min,y_min,x_max,y_max,score,est_depth
// with 6-decimal fixed point numbers. Lines starting with '#' are comments.
struct DetectionRecord {
  std::string image_id;
  Detection det;
};

void write_detection_records(std::ostream& os, const std::vector<DetectionRecord>& records);
std::vector<DetectionRecord> read_detection_records(std::istream& is);
std::string format_detection_record(const DetectionRecord& rec);

}  // namespace instdet
