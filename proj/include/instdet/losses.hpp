#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "instdet/boxgeom.hpp"

namespace instdet {

enum class AnchorLabel : std::int8_t { ignore = -1, negative = 0, positive = 1 };

struct AnchorThresholds {
  double positive = 0.5;  // IoU >= positive
  double negative = 0.4;  // IoU < negative
};

using BoxDelta = std::array<double, 4>;  // (tx, ty, tw, th)

struct AnchorTargets {
  std::vector<AnchorLabel> labels;
  std::vector<BoxDelta> deltas;  // encoded gt for positives, zeros elsewhere
  int num_positive = 0;
};

AnchorTargets assign_anchors(const std::vector<BBox>& anchors, const BBox& gt, const AnchorThresholds& thr = {});

/// All anchors negative; used when the target is not visible.
AnchorTargets all_negative_targets(std::size_t n_anchors);

BoxDelta encode_box(const BBox& anchor, const BBox& gt);
BBox decode_box(const BBox& anchor, const BoxDelta& t);

struct LossWeights {
  double lambda_seg = 20.0;
  double lambda_center = 20.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double smooth_l1_beta = 1.0;

  bool valid() const;
};

struct LossComponents {
  double seg = 0.0;
  double center = 0.0;
  double focal = 0.0;
  double reg = 0.0;
};

/// lambda_seg * seg + lambda_center * center + focal + reg. Throws TrainingError
/// naming the first non-finite or negative component.
double total_loss(const LossComponents& c, const LossWeights& w);

}  // namespace instdet
