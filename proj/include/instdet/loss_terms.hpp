#pragma once

#include <torch/torch.h>

#include "instdet/losses.hpp"
#include "instdet/net.hpp"

namespace instdet {

// Per-batch training targets matching HeadOutputs.
struct LossTargets {
  torch::Tensor labels;   // (N, A) float: 1 positive, 0 negative, -1 ignore
  torch::Tensor deltas;   // (N, A, 4) encoded boxes, zero off the positives
  torch::Tensor mask;     // (N, 1, H, W) {0, 1}
  torch::Tensor heatmap;  // (N, 1, h, w)
};

/// Sum over non-ignored anchors of -alpha_t (1 - p_t)^gamma log(p_t), divided by
/// max(1, number of positives).
torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& labels, double gamma, double alpha);
/// Mean pixelwise binary cross-entropy on logits.
torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& mask);
/// Mean absolute difference between heatmaps.
torch::Tensor center_loss(const torch::Tensor& pred, const torch::Tensor& target);
/// Smooth-L1 summed over the coordinates of positive anchors, divided by max(1, positives).
torch::Tensor regression_loss(const torch::Tensor& reg, const torch::Tensor& deltas, const torch::Tensor& labels,
                              double beta);

struct LossTerms {
  torch::Tensor seg, center, focal, reg, total;

  LossComponents values() const;
};

/// Without auxiliary heads the seg and centre terms are zero.
LossTerms compute_losses(const HeadOutputs& out, const LossTargets& targets, const LossWeights& w);

}  // namespace instdet
