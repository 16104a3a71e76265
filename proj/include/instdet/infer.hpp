#pragma once

#include <torch/torch.h>

#include <opencv2/core.hpp>
#include <optional>
#include <string>
#include <vector>

#include "instdet/boxgeom.hpp"
#include "instdet/net.hpp"
#include "instdet/templates.hpp"

namespace instdet {

struct TemplateBank {
  std::string object_id;
  Template global_template;
  std::vector<Template> local_templates;

  struct Cache {
    torch::Tensor filters;            // undefined when the network has no OAB
    std::vector<Embeddings> chunks;   // one entry per template chunk
    int chunk_size = 0;
  };
  std::optional<Cache> precomputed;

  std::size_t size() const { return local_templates.size(); }
  /// Throws ContractError on an empty bank or mixed object ids.
  void validate() const;
};

/// Global template `global_index` of the 240-pose bank plus the 16-viewpoint local
/// stack with n_inplane in-plane rotations each.
TemplateBank make_template_bank(Renderer& renderer, const ObjectModel& model, int n_inplane, int global_index = 0,
                                const TemplateSettings& settings = {});

/// Caches the tunable filters and every embedding; a second call is a no-op.
void precompute(TemplateBank& bank, InstanceNet& net, int chunk_size = 32);

struct DetectConfig {
  double score_threshold = 0.05;
  int top_k_per_template = 50;
  double nms_threshold = 0.5;
  bool depth_filter = true;
  bool depth_filter_before_nms = true;
  double min_depth = 0.4;
  double max_depth = 2.0;
  int template_batch = 32;
  int max_detections = 100;
};

/// Backbone once per call, then per-template correlation and heads; decoded
/// detections from all templates are pooled, depth-filtered and suppressed.
std::vector<Detection> detect(const cv::Mat& image, const TemplateBank& bank, InstanceNet& net,
                              const DetectConfig& cfg = {});

/// Highest score; ties go to the lowest template_index. Throws ContractError on mixed ids.
std::optional<Detection> select_top_per_object(const std::vector<Detection>& dets);

}  // namespace instdet
