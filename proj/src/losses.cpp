#include "instdet/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "instdet/errors.hpp"

namespace instdet {

AnchorTargets assign_anchors(const std::vector<BBox>& anchors, const BBox& gt, const AnchorThresholds& thr) {
  if (anchors.empty()) throw std::invalid_argument("assign_anchors: no anchors");
  if (!gt.valid()) throw std::domain_error("assign_anchors: degenerate ground-truth box");
  AnchorTargets t;
  t.labels.resize(anchors.size(), AnchorLabel::negative);
  t.deltas.resize(anchors.size(), BoxDelta{0, 0, 0, 0});
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const double o = iou(anchors[i], gt);
    if (o >= thr.positive) {
      t.labels[i] = AnchorLabel::positive;
      t.deltas[i] = encode_box(anchors[i], gt);
      ++t.num_positive;
    } else if (o >= thr.negative) {
      t.labels[i] = AnchorLabel::ignore;
    }
  }
  return t;
}

AnchorTargets all_negative_targets(std::size_t n_anchors) {
  AnchorTargets t;
  t.labels.assign(n_anchors, AnchorLabel::negative);
  t.deltas.assign(n_anchors, BoxDelta{0, 0, 0, 0});
  return t;
}

BoxDelta encode_box(const BBox& a, const BBox& g) {
  if (!(a.width() > 0 && a.height() > 0 && g.width() > 0 && g.height() > 0))
    throw std::domain_error("encode_box: non-positive box size");
  return {(g.center_x() - a.center_x()) / a.width(), (g.center_y() - a.center_y()) / a.height(),
          std::log(g.width() / a.width()), std::log(g.height() / a.height())};
}

BBox decode_box(const BBox& a, const BoxDelta& t) {
  if (!(a.width() > 0 && a.height() > 0)) throw std::domain_error("decode_box: non-positive anchor size");
  const double cx = a.center_x() + t[0] * a.width();
  const double cy = a.center_y() + t[1] * a.height();
  return BBox::from_center(cx, cy, a.width() * std::exp(t[2]), a.height() * std::exp(t[3]));
}

bool LossWeights::valid() const {
  return lambda_seg >= 0 && lambda_center >= 0 && focal_gamma >= 0 && focal_alpha >= 0 && focal_alpha <= 1 &&
         smooth_l1_beta > 0;
}

double total_loss(const LossComponents& c, const LossWeights& w) {
  const std::pair<const char*, double> parts[] = {{"seg", c.seg}, {"center", c.center}, {"focal", c.focal}, {"reg", c.reg}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v) || v < 0.0) throw TrainingError(std::string("loss component '") + name + "' is invalid");
  return w.lambda_seg * c.seg + w.lambda_center * c.center + c.focal + c.reg;
}

}  // namespace instdet
