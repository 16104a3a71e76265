#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "instdet/loss_terms.hpp"
#include "instdet/net.hpp"
#include "instdet/simdata.hpp"
#include "instdet/templates.hpp"
#include "instdet/viewsphere.hpp"

namespace instdet {

/// Scenes held in memory with their split.
struct Dataset {
  std::vector<SceneSample> scenes;
  std::vector<int> train_ids;
  std::vector<int> val_ids;
  int min_visible_pixels = 50;

  /// Objects of scene `id` that can serve as detection targets.
  std::vector<int> targets(int id) const;
  /// Index over train_ids; BatchItem::scene indexes into train_ids.
  DatasetIndex train_index() const;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-6;
  std::vector<int> lr_step_epochs = {20, 40};
  double lr_gamma = 0.1;
  int epochs = 50;
  int iterations_per_epoch = 1300;
  long max_iterations = 0;  // > 0 stops early
  int batch_size = 6;
  double tabletop_ratio = 0.8;
  PerturbationSpec perturbation{20.0};
  AugmentationConfig augmentation{};
  LossWeights loss{};
  std::uint64_t seed = 1;
  int validation_items = 0;  // 0: one item per validation scene
};

struct TrainingBatch {
  torch::Tensor images;            // (N, 3, H, W)
  torch::Tensor global_templates;  // (N, 4, S, S)
  torch::Tensor local_templates;   // (N, 4, S, S)
  LossTargets targets;
};

/// Turns (scene, target) pairs into network inputs and loss targets. Global templates
/// are drawn from the 240-pose bank (rendered lazily and cached); local templates are
/// rendered at the target's perturbed pose.
class ExampleBuilder {
 public:
  ExampleBuilder(NetworkConfig net, std::vector<ObjectModel> catalog, TemplateSettings settings = {});

  TrainingBatch build(const std::vector<std::pair<const SceneSample*, int>>& items, const PerturbationSpec& perturb,
                      const AugmentationConfig* augmentation, std::mt19937_64& rng);

  const ObjectModel& model(const std::string& id) const;

 private:
  const Template& global_template(const std::string& id, int pose_index);

  NetworkConfig net_;
  std::vector<ObjectModel> catalog_;
  TemplateSettings settings_;
  RasterRenderer renderer_;
  std::vector<Pose> global_poses_;
  std::vector<BBox> anchors_;
  std::map<std::pair<std::string, int>, Template> global_cache_;
};

struct TrainResult {
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
  double best_val_loss = 0.0;
  long iterations = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

/// AMSGrad with step decay; validates once per epoch, keeps best and last checkpoints
/// and appends one JSON object per line to metrics.jsonl.
class Trainer {
 public:
  Trainer(TrainConfig cfg, NetworkConfig net_cfg, const Dataset& data, std::vector<ObjectModel> catalog);

  /// Throws TrainingError when a loss component becomes non-finite.
  TrainResult run(const std::filesystem::path& run_dir, const std::optional<std::filesystem::path>& resume = {});

  /// Mean total loss over fixed, unaugmented items of the given scenes (eval mode).
  double evaluate_loss(const std::vector<int>& scene_ids);

  InstanceNet& net() { return net_; }
  double learning_rate_at(long iteration) const;

 private:
  TrainConfig cfg_;
  const Dataset& data_;
  InstanceNet net_;
  ExampleBuilder builder_;
  torch::optim::Adam optimizer_;
};

/// splitmix64: derives independent stream seeds from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace instdet
