#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "instdet/boxgeom.hpp"

namespace instdet {

struct EvalRecord {
  std::string image_id;
  std::string object_id;
  std::optional<Detection> prediction;
  std::vector<BBox> gt_boxes;
};

/// Percentage of records whose prediction overlaps a ground-truth box with IoU > threshold.
double bbox2d_metric(const std::vector<EvalRecord>& records, double iou_threshold = 0.5);

enum class ApInterpolation { all_points, eleven_point };

struct ScoredBox {
  std::string image_id;
  BBox box;
  double score = 0.0;
};

struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
};

/// Predictions are ranked by score (ties keep input order) and greedily matched
/// to the unmatched ground truth of the same image with the highest IoU >= threshold.
double average_precision(const std::vector<ScoredBox>& preds,
                         const std::map<std::string, std::vector<BBox>>& gts, double iou_threshold = 0.5,
                         ApInterpolation interp = ApInterpolation::all_points, PrCurve* curve = nullptr);

struct MapResult {
  std::map<std::string, double> per_object_ap;  // objects with at least one ground-truth instance
  double map = 0.0;
  std::map<std::string, PrCurve> curves;
};

/// Pools every prediction of an image across objects, applies NMS (IoU > nms_threshold),
/// then computes AP per object. Objects without ground truth only take part in the
/// pooled suppression. Throws std::invalid_argument for ids outside object_set.
MapResult map_protocol(const std::vector<DetectionRecord>& all_preds,
                       const std::map<std::string, std::map<std::string, std::vector<BBox>>>& all_gts,
                       const std::set<std::string>& object_set, double iou_threshold = 0.5,
                       double nms_threshold = 0.5, ApInterpolation interp = ApInterpolation::all_points);

struct ReportRow {
  std::string object_id;
  double value = 0.0;
};

struct Report {
  std::string metric;
  std::vector<ReportRow> rows;
  double mean = 0.0;
};

Report per_object_report(const std::string& metric, const std::vector<ReportRow>& rows);
std::string report_to_text(const Report& r);
std::string report_to_json(const Report& r);
std::string report_to_csv(const Report& r);

}  // namespace instdet
