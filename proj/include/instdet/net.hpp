#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "instdet/boxgeom.hpp"
#include "instdet/templates.hpp"

namespace instdet {

/// Architecture of the two-branch correlation network. Feature-map size and
/// stride are derived from the input size and the number of dense blocks.
struct NetworkConfig {
  int input_height = 480;
  int input_width = 640;
  int template_size = kTemplateCanvas;

  // Backbone: 7x7/2 stem, tunable-filter injection, max-pool, dense blocks.
  int stem_channels = 64;  // injection point width
  int growth_rate = 32;
  int bottleneck_width = 4;  // bottleneck = bottleneck_width * growth_rate
  std::vector<int> block_layers = {6, 12, 24};
  int embed_channels = 256;  // C, shared by backbone output and branch embeddings

  // Branch encoders (squeeze/expand style) and correlation.
  int encoder_width = 64;
  int filter_size = 3;  // spatial size of the tunable filters
  int path_channels = 256;

  // Heads.
  int head_channels = 256;
  int head_convs = 4;  // hidden layers before the prediction layer
  int seg_channels = 64;
  double prior_probability = 0.01;
  std::vector<double> anchor_scales = default_anchor_scales();
  std::vector<double> anchor_ratios = default_anchor_ratios();

  std::string norm = "batch";  // "batch" or "none"
  bool use_oab = true;
  bool use_e3 = true;
  bool aux_tasks = true;  // segmentation and centre heads

  int stride() const;
  int feature_height() const;
  int feature_width() const;
  int anchors_per_location() const { return static_cast<int>(anchor_scales.size() * anchor_ratios.size()); }
  AnchorSpec anchor_spec() const;
  /// Throws ConfigError.
  void validate() const;

  static NetworkConfig full();
  static NetworkConfig tiny();
  static NetworkConfig mini();
};

nlohmann::json to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const nlohmann::json& j);

struct Embeddings {
  torch::Tensor e1;  // (N, C, 1, 1)
  torch::Tensor e3;  // (N, C, 3, 3); undefined when use_e3 is off
};

struct HeadOutputs {
  torch::Tensor cls;     // (N, A) logits, A = h * w * k in anchor order
  torch::Tensor reg;     // (N, A, 4)
  torch::Tensor seg;     // (N, 1, H, W) logits; undefined without aux tasks
  torch::Tensor center;  // (N, 1, h, w) in [0, 1]; undefined without aux tasks
};

class InstanceNetImpl : public torch::nn::Module {
 public:
  explicit InstanceNetImpl(NetworkConfig cfg);

  /// (B, 4, S, S) -> (B, stem_channels, f, f).
  torch::Tensor oab_forward(const torch::Tensor& global_templates);
  /// (B, 3, H, W) in [0, 1] -> (B, C, h, w). `filters` may be undefined (no injection).
  torch::Tensor backbone_forward(const torch::Tensor& images, const torch::Tensor& filters);
  /// (T, 4, S, S) -> e1 (T, C, 1, 1), e3 (T, C, 3, 3).
  Embeddings psb_forward(const torch::Tensor& local_templates);
  /// Raw path responses before their convolutions: F * e1, F (depthwise) e3, F - e1.
  std::vector<torch::Tensor> correlation_paths(const torch::Tensor& features, const Embeddings& emb) const;
  /// Pairs features[i] with embedding i. Output (N, paths * path_channels, h, w).
  torch::Tensor correlate(const torch::Tensor& features, const Embeddings& emb);
  HeadOutputs heads_forward(const torch::Tensor& corr, bool with_aux);

  /// Training pass: image i with global template i and local template i.
  HeadOutputs forward(const torch::Tensor& images, const torch::Tensor& global_templates,
                      const torch::Tensor& local_templates);

  const NetworkConfig& config() const { return cfg_; }

 private:
  torch::Tensor apply_filters(const torch::Tensor& f0, const torch::Tensor& filters) const;

  NetworkConfig cfg_;
  torch::nn::Sequential stem_{nullptr}, trunk_{nullptr};
  torch::nn::Sequential oab_encoder_{nullptr}, psb_encoder_{nullptr};
  torch::nn::Conv2d oab_head_{nullptr}, psb_e1_{nullptr}, psb_e3_{nullptr};
  torch::nn::Sequential path_mul_{nullptr}, path_dw_{nullptr}, path_sub_{nullptr};
  torch::nn::Sequential cls_head_{nullptr}, reg_head_{nullptr}, seg_head_{nullptr};
  torch::nn::Conv2d center_head_{nullptr};
};
TORCH_MODULE(InstanceNet);

/// RGB CV_8UC3 -> (1, 3, H, W) float in [0, 1].
torch::Tensor image_to_tensor(const cv::Mat& rgb);
/// Template -> (1, 4, S, S) float: RGB in [0, 1] plus the mask.
torch::Tensor template_to_tensor(const Template& t);
torch::Tensor templates_to_tensor(std::span<const Template> ts);

inline constexpr int kCheckpointVersion = 1;

struct CheckpointInfo {
  NetworkConfig config;
  long iteration = 0;
  int epoch = 0;
  double best_val_loss = 0.0;
};

/// Parameters, configuration and counters; optimizer state when given.
void save_checkpoint(const std::filesystem::path& path, InstanceNet& net, const CheckpointInfo& info,
                     torch::optim::Optimizer* optimizer = nullptr);
/// Rebuilds the network from the stored configuration. Throws std::runtime_error on
/// unreadable files or version mismatch.
InstanceNet load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);
/// Returns false when the checkpoint carries no optimizer state.
bool load_optimizer_state(const std::filesystem::path& path, torch::optim::Optimizer& optimizer);

}  // namespace instdet
