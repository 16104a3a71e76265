#include "instdet/boxgeom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "instdet/errors.hpp"

namespace instdet {

bool BBox::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min < x_max && y_min < y_max;
}

BBox BBox::from_center(double cx, double cy, double w, double h) {
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

double iou(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid()) throw std::domain_error("iou: degenerate box");
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

BBox clip_to_image(const BBox& box, int width, int height) {
  const double w = width, h = height;
  return {std::clamp(box.x_min, 0.0, w), std::clamp(box.y_min, 0.0, h), std::clamp(box.x_max, 0.0, w),
          std::clamp(box.y_max, 0.0, h)};
}

std::vector<double> default_anchor_scales() { return {30, 60, 90, 120, 150, 180, 210, 240}; }
std::vector<double> default_anchor_ratios() { return {0.5, 1.0, 2.0}; }

AnchorGrid generate_anchors(const AnchorSpec& spec) {
  if (spec.stride <= 0.0 || spec.scales.empty() || spec.ratios.empty() || spec.feature_height <= 0 ||
      spec.feature_width <= 0)
    throw std::invalid_argument("generate_anchors: invalid anchor spec");
  AnchorGrid grid{spec, {}};
  grid.anchors.reserve(static_cast<std::size_t>(spec.feature_height) * spec.feature_width *
                       spec.anchors_per_location());
  for (int row = 0; row < spec.feature_height; ++row) {
    const double cy = (row + 0.5) * spec.stride;
    for (int col = 0; col < spec.feature_width; ++col) {
      const double cx = (col + 0.5) * spec.stride;
      for (double s : spec.scales) {
        for (double r : spec.ratios) {
          const double sr = std::sqrt(r);
          grid.anchors.push_back(BBox::from_center(cx, cy, s * sr, s / sr));
        }
      }
    }
  }
  return grid;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw std::invalid_argument("nms: threshold must lie in (0, 1)");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& cand = dets[idx];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou(k.bbox, cand.bbox) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

double estimate_depth(const BBox& pred, double template_render_depth, double template_size) {
  if (!pred.valid()) throw std::domain_error("estimate_depth: degenerate box");
  if (!(template_render_depth > 0.0)) throw std::domain_error("estimate_depth: render depth must be > 0");
  const double size = std::max(pred.width(), pred.height());
  return template_render_depth * (template_size / size);
}

std::vector<Detection> filter_by_depth(const std::vector<Detection>& dets, double min_depth,
                                       double max_depth) {
  if (!(min_depth < max_depth)) throw std::invalid_argument("filter_by_depth: min must be < max");
  std::vector<Detection> out;
  for (const auto& d : dets) {
    if (!d.est_depth) throw ContractError("filter_by_depth: detection without estimated depth");
    if (*d.est_depth >= min_depth && *d.est_depth <= max_depth) out.push_back(d);
  }
  return out;
}

std::string format_detection_record(const DetectionRecord& rec) {
  const auto& d = rec.det;
  char buf[256];
  const double depth = d.est_depth ? *d.est_depth : std::nan("");
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", d.bbox.x_min, d.bbox.y_min,
                d.bbox.x_max, d.bbox.y_max, d.score, depth);
  return rec.image_id + "," + d.object_id + "," + buf;
}

void write_detection_records(std::ostream& os, const std::vector<DetectionRecord>& records) {
  for (const auto& r : records) os << format_detection_record(r) << '\n';
}

std::vector<DetectionRecord> read_detection_records(std::istream& is) {
  std::vector<DetectionRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 8)
      throw std::runtime_error("detection record line " + std::to_string(line_no) + ": expected 8 fields");
    DetectionRecord rec;
    rec.image_id = fields[0];
    rec.det.object_id = fields[1];
    try {
      rec.det.bbox = {std::stod(fields[2]), std::stod(fields[3]), std::stod(fields[4]),
                      std::stod(fields[5])};
      rec.det.score = std::stod(fields[6]);
      const double depth = std::stod(fields[7]);
      if (std::isfinite(depth)) rec.det.est_depth = depth;
    } catch (const std::logic_error&) {
      throw std::runtime_error("detection record line " + std::to_string(line_no) + ": bad number");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace instdet
