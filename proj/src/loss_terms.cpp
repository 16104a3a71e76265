#include "instdet/loss_terms.hpp"

#include "instdet/errors.hpp"

namespace instdet {

namespace F = torch::nn::functional;

torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& labels, double gamma, double alpha) {
  if (logits.sizes() != labels.sizes()) throw ShapeError("focal_loss: logits and labels differ in shape");
  const auto valid = labels.ge(0).to(logits.dtype());
  const auto y = labels.clamp_min(0).to(logits.dtype());
  const auto p = torch::sigmoid(logits);
  // log(p_t) computed from logits for stability.
  const auto ce = F::binary_cross_entropy_with_logits(logits, y, F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
  const auto p_t = y * p + (1 - y) * (1 - p);
  const auto alpha_t = y * alpha + (1 - y) * (1 - alpha);
  const auto loss = alpha_t * torch::pow(1 - p_t, gamma) * ce * valid;
  const auto n_pos = labels.eq(1).sum().to(logits.dtype()).clamp_min(1.0);
  return loss.sum() / n_pos;
}

torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& mask) {
  if (logits.sizes() != mask.sizes()) throw ShapeError("segmentation_loss: logits and mask differ in shape");
  return F::binary_cross_entropy_with_logits(logits, mask.to(logits.dtype()));
}

torch::Tensor center_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw ShapeError("center_loss: prediction and target differ in shape");
  return (pred - target.to(pred.dtype())).abs().mean();
}

torch::Tensor regression_loss(const torch::Tensor& reg, const torch::Tensor& deltas, const torch::Tensor& labels,
                              double beta) {
  if (reg.sizes() != deltas.sizes()) throw ShapeError("regression_loss: predictions and targets differ in shape");
  const auto pos = labels.eq(1).to(reg.dtype()).unsqueeze(-1);
  const auto l = F::smooth_l1_loss(reg, deltas.to(reg.dtype()),
                                   F::SmoothL1LossFuncOptions().reduction(torch::kNone).beta(beta));
  const auto n_pos = labels.eq(1).sum().to(reg.dtype()).clamp_min(1.0);
  return (l * pos).sum() / n_pos;
}

LossComponents LossTerms::values() const {
  return {seg.item<double>(), center.item<double>(), focal.item<double>(), reg.item<double>()};
}

LossTerms compute_losses(const HeadOutputs& out, const LossTargets& t, const LossWeights& w) {
  LossTerms l;
  l.focal = focal_loss(out.cls, t.labels, w.focal_gamma, w.focal_alpha);
  l.reg = regression_loss(out.reg, t.deltas, t.labels, w.smooth_l1_beta);
  if (out.seg.defined()) {
    l.seg = segmentation_loss(out.seg, t.mask);
    l.center = center_loss(out.center, t.heatmap);
  } else {
    l.seg = torch::zeros({}, out.cls.options());
    l.center = torch::zeros({}, out.cls.options());
  }
  l.total = w.lambda_seg * l.seg + w.lambda_center * l.center + l.focal + l.reg;
  return l;
}

}  // namespace instdet
