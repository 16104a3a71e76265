#pragma once

// Brute-force reference implementations used only by tests. They are written
// independently from the library code paths they check.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "instdet/boxgeom.hpp"

namespace oracle {

inline instdet::BBox random_box(std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> pos(0.0, extent), size(1.0, extent / 2.0);
  const double x = pos(rng), y = pos(rng);
  return {x, y, x + size(rng), y + size(rng)};
}

// IoU by rasterising neither box: inclusion-exclusion on clipped extents, written
// in terms of interval overlap lengths.
inline double iou_by_area(const instdet::BBox& a, const instdet::BBox& b) {
  auto overlap = [](double a0, double a1, double b0, double b1) {
    const double lo = a0 > b0 ? a0 : b0;
    const double hi = a1 < b1 ? a1 : b1;
    return hi > lo ? hi - lo : 0.0;
  };
  const double inter = overlap(a.x_min, a.x_max, b.x_min, b.x_max) * overlap(a.y_min, a.y_max, b.y_min, b.y_max);
  const double area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
  const double area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
  return inter / (area_a + area_b - inter);
}

// Exhaustive greedy suppression over the full pairwise IoU matrix. Returns the
// template_index of kept detections in rank order (score desc, input order asc).
inline std::vector<int> greedy_nms_indices(const std::vector<instdet::Detection>& dets, double thr) {
  const std::size_t n = dets.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i][j] = iou_by_area(dets[i].bbox, dets[j].bbox);
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[i] = i;
  // Insertion sort: explicit about the tie rule.
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = i; j > 0 && dets[rank[j]].score > dets[rank[j - 1]].score; --j) std::swap(rank[j], rank[j - 1]);
  std::vector<bool> alive(n, true);
  std::vector<int> out;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = rank[r];
    if (!alive[i]) continue;
    out.push_back(dets[i].template_index);
    for (std::size_t s = r + 1; s < n; ++s)
      if (m[i][rank[s]] > thr) alive[rank[s]] = false;
  }
  return out;
}

// AP by enumerating every score threshold: for each threshold the detections at or
// above it are re-matched from scratch; the resulting (recall, precision) points
// are integrated with the all-points envelope.
struct Pred {
  std::string image;
  instdet::BBox box;
  double score;
};

inline double ap_by_threshold_enumeration(const std::vector<Pred>& preds,
                                          const std::map<std::string, std::vector<instdet::BBox>>& gts, double thr) {
  std::size_t n_gt = 0;
  for (const auto& [k, v] : gts) n_gt += v.size();
  std::set<double, std::greater<>> thresholds;
  for (const auto& p : preds) thresholds.insert(p.score);
  std::vector<std::pair<double, double>> pts;  // (recall, precision)
  for (double t : thresholds) {
    std::vector<Pred> sel;
    for (const auto& p : preds)
      if (p.score >= t) sel.push_back(p);
    std::sort(sel.begin(), sel.end(), [](const Pred& a, const Pred& b) { return a.score > b.score; });
    std::map<std::string, std::vector<bool>> used;
    int tp = 0;
    for (const auto& p : sel) {
      auto it = gts.find(p.image);
      if (it == gts.end()) continue;
      auto& u = used[p.image];
      u.resize(it->second.size(), false);
      int best = -1;
      double best_iou = -1;
      for (std::size_t j = 0; j < it->second.size(); ++j) {
        const double o = iou_by_area(p.box, it->second[j]);
        if (!u[j] && o >= thr && o > best_iou) {
          best_iou = o;
          best = static_cast<int>(j);
        }
      }
      if (best >= 0) {
        u[best] = true;
        ++tp;
      }
    }
    pts.emplace_back(static_cast<double>(tp) / n_gt, static_cast<double>(tp) / sel.size());
  }
  // Integrate: for each distinct recall level r_k reached, precision = max over points with recall >= r_k.
  std::set<double> levels;
  for (const auto& [r, p] : pts) levels.insert(r);
  double ap = 0.0, prev = 0.0;
  for (double r : levels) {
    double best = 0.0;
    for (const auto& [r2, p2] : pts)
      if (r2 >= r) best = std::max(best, p2);
    ap += (r - prev) * best;
    prev = r;
  }
  return ap;
}

}  // namespace oracle
