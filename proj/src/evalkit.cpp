#include "instdet/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace instdet {

double bbox2d_metric(const std::vector<EvalRecord>& records, double iou_threshold) {
  if (records.empty()) return 0.0;
  int hits = 0;
  for (const auto& r : records) {
    if (!r.prediction) continue;
    for (const auto& gt : r.gt_boxes) {
      if (iou(r.prediction->bbox, gt) > iou_threshold) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * hits / static_cast<double>(records.size());
}

double average_precision(const std::vector<ScoredBox>& preds, const std::map<std::string, std::vector<BBox>>& gts,
                         double iou_threshold, ApInterpolation interp, PrCurve* curve) {
  std::size_t n_gt = 0;
  for (const auto& [img, boxes] : gts) n_gt += boxes.size();
  if (n_gt == 0) throw std::invalid_argument("average_precision: no ground truth");

  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return preds[a].score > preds[b].score; });

  std::map<std::string, std::vector<bool>> used;
  for (const auto& [img, boxes] : gts) used[img].assign(boxes.size(), false);

  std::vector<double> recall, precision;
  int tp = 0, fp = 0;
  for (auto idx : order) {
    const auto& p = preds[idx];
    bool matched = false;
    auto it = gts.find(p.image_id);
    if (it != gts.end()) {
      double best = -1.0;
      int best_j = -1;
      for (std::size_t j = 0; j < it->second.size(); ++j) {
        if (used[p.image_id][j]) continue;
        const double o = iou(p.box, it->second[j]);
        if (o >= iou_threshold && o > best) {
          best = o;
          best_j = static_cast<int>(j);
        }
      }
      if (best_j >= 0) {
        used[p.image_id][best_j] = true;
        matched = true;
      }
    }
    matched ? ++tp : ++fp;
    recall.push_back(static_cast<double>(tp) / n_gt);
    precision.push_back(static_cast<double>(tp) / (tp + fp));
  }
  if (curve) *curve = {recall, precision};

  // Precision envelope: max precision at any recall >= r.
  std::vector<double> env = precision;
  for (int i = static_cast<int>(env.size()) - 2; i >= 0; --i) env[i] = std::max(env[i], env[i + 1]);

  if (interp == ApInterpolation::eleven_point) {
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < recall.size(); ++i)
        if (recall[i] >= r) p = std::max(p, env[i]);
      ap += p / 11.0;
    }
    return ap;
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * env[i];
    prev_recall = recall[i];
  }
  return ap;
}

MapResult map_protocol(const std::vector<DetectionRecord>& all_preds,
                       const std::map<std::string, std::map<std::string, std::vector<BBox>>>& all_gts,
                       const std::set<std::string>& object_set, double iou_threshold, double nms_threshold,
                       ApInterpolation interp) {
  for (const auto& p : all_preds)
    if (!object_set.count(p.det.object_id))
      throw std::invalid_argument("map_protocol: unknown object id '" + p.det.object_id + "'");
  for (const auto& [obj, per_image] : all_gts)
    if (!object_set.count(obj)) throw std::invalid_argument("map_protocol: unknown object id '" + obj + "'");

  // Pool per image across objects, suppress, then regroup per object.
  std::map<std::string, std::vector<Detection>> per_image;
  for (const auto& p : all_preds) per_image[p.image_id].push_back(p.det);
  std::map<std::string, std::vector<ScoredBox>> per_object;
  for (auto& [img, dets] : per_image)
    for (const auto& d : nms(std::move(dets), nms_threshold)) per_object[d.object_id].push_back({img, d.bbox, d.score});

  MapResult res;
  for (const auto& obj : object_set) {
    auto git = all_gts.find(obj);
    if (git == all_gts.end()) continue;
    std::size_t n = 0;
    for (const auto& [img, boxes] : git->second) n += boxes.size();
    if (n == 0) continue;
    PrCurve curve;
    res.per_object_ap[obj] = average_precision(per_object[obj], git->second, iou_threshold, interp, &curve);
    res.curves[obj] = std::move(curve);
  }
  if (!res.per_object_ap.empty()) {
    double sum = 0.0;
    for (const auto& [obj, ap] : res.per_object_ap) sum += ap;
    res.map = sum / static_cast<double>(res.per_object_ap.size());
  }
  return res;
}

Report per_object_report(const std::string& metric, const std::vector<ReportRow>& rows) {
  Report r{metric, rows, 0.0};
  if (!rows.empty()) {
    double sum = 0.0;
    for (const auto& row : rows) sum += row.value;
    r.mean = sum / static_cast<double>(rows.size());
  }
  return r;
}

std::string report_to_text(const Report& r) {
  std::size_t w = std::max<std::size_t>(9, r.metric.size());
  std::size_t id_w = 4;
  for (const auto& row : r.rows) id_w = std::max(id_w, row.object_id.size());
  std::ostringstream os;
  char buf[64];
  auto line = [&](const std::string& id, const std::string& v) {
    os << id << std::string(id_w - id.size() + 2, ' ') << std::string(w > v.size() ? w - v.size() : 0, ' ') << v
       << '\n';
  };
  line("object", r.metric);
  os << std::string(id_w + 2 + w, '-') << '\n';
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof(buf), "%.2f", row.value);
    line(row.object_id, buf);
  }
  os << std::string(id_w + 2 + w, '-') << '\n';
  std::snprintf(buf, sizeof(buf), "%.2f", r.mean);
  line("mean", buf);
  return os.str();
}

std::string report_to_json(const Report& r) {
  nlohmann::json j;
  j["metric"] = r.metric;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) j["rows"].push_back({{"object_id", row.object_id}, {"value", row.value}});
  j["mean"] = r.mean;
  return j.dump(2);
}

std::string report_to_csv(const Report& r) {
  std::ostringstream os;
  char buf[64];
  os << "object_id," << r.metric << '\n';
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", row.value);
    os << row.object_id << ',' << buf << '\n';
  }
  std::snprintf(buf, sizeof(buf), "%.6f", r.mean);
  os << "mean," << buf << '\n';
  return os.str();
}

}  // namespace instdet
