#include "instdet/train.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "instdet/errors.hpp"
#include "instdet/losses.hpp"

namespace instdet {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<int> Dataset::targets(int id) const {
  std::vector<int> out;
  const auto& s = scenes.at(id);
  for (std::size_t i = 0; i < s.objects.size(); ++i)
    if (s.objects[i].box && s.objects[i].visible_pixels() >= min_visible_pixels) out.push_back(static_cast<int>(i));
  return out;
}

DatasetIndex Dataset::train_index() const {
  DatasetIndex idx;
  for (int id : train_ids) idx.scenes.push_back({scenes.at(id).style, targets(id)});
  return idx;
}

ExampleBuilder::ExampleBuilder(NetworkConfig net, std::vector<ObjectModel> catalog, TemplateSettings settings)
    : net_(std::move(net)),
      catalog_(std::move(catalog)),
      settings_(settings),
      global_poses_(global_template_poses(1.0)),
      anchors_(generate_anchors(net_.anchor_spec()).anchors) {}

const ObjectModel& ExampleBuilder::model(const std::string& id) const {
  for (const auto& m : catalog_)
    if (m.id == id) return m;
  throw ContractError("no object model with id '" + id + "'");
}

const Template& ExampleBuilder::global_template(const std::string& id, int pose_index) {
  const auto key = std::make_pair(id, pose_index);
  auto it = global_cache_.find(key);
  if (it == global_cache_.end())
    it = global_cache_.emplace(key, render_template(renderer_, model(id), global_poses_.at(pose_index), settings_)).first;
  return it->second;
}

TrainingBatch ExampleBuilder::build(const std::vector<std::pair<const SceneSample*, int>>& items,
                                    const PerturbationSpec& perturb, const AugmentationConfig* augmentation,
                                    std::mt19937_64& rng) {
  if (items.empty()) throw ContractError("ExampleBuilder::build: empty batch");
  const int fh = net_.feature_height(), fw = net_.feature_width();
  const auto n_anchors = static_cast<long>(anchors_.size());
  std::vector<torch::Tensor> images, globals, locals, labels, deltas, masks, heatmaps;

  for (const auto& [scene, target] : items) {
    const SceneObject& obj = scene->objects.at(target);
    const int gi = std::uniform_int_distribution<int>(0, static_cast<int>(global_poses_.size()) - 1)(rng);
    const Pose local_pose = perturb_rotation(Pose{obj.rotation, 1.0}, perturb, rng);
    std::vector<Template> tmpls = {global_template(obj.object_id, gi),
                                   render_template(renderer_, model(obj.object_id), local_pose, settings_)};
    const SceneSample* s = scene;
    Augmented aug;
    if (augmentation) {
      aug = augment(*scene, target, tmpls, *augmentation, rng);
      s = &aug.sample;
      tmpls = aug.templates;
    }
    if (s->image.rows != net_.input_height || s->image.cols != net_.input_width)
      throw ShapeError("training scene is " + std::to_string(s->image.cols) + "x" + std::to_string(s->image.rows) +
                       ", network expects " + std::to_string(net_.input_width) + "x" +
                       std::to_string(net_.input_height));
    const SceneObject& o = s->objects[target];

    images.push_back(image_to_tensor(s->image));
    globals.push_back(template_to_tensor(tmpls[0]));
    locals.push_back(template_to_tensor(tmpls[1]));

    const AnchorTargets at = o.box ? assign_anchors(anchors_, *o.box) : all_negative_targets(anchors_.size());
    auto lab = torch::empty({n_anchors}, torch::kFloat32);
    auto del = torch::zeros({n_anchors, 4}, torch::kFloat32);
    auto la = lab.accessor<float, 1>();
    auto da = del.accessor<float, 2>();
    for (long a = 0; a < n_anchors; ++a) {
      la[a] = static_cast<float>(static_cast<int>(at.labels[a]));
      if (at.labels[a] == AnchorLabel::positive)
        for (int c = 0; c < 4; ++c) da[a][c] = static_cast<float>(at.deltas[a][c]);
    }
    labels.push_back(lab);
    deltas.push_back(del);

    cv::Mat vis = o.visibility.isContinuous() ? o.visibility : o.visibility.clone();
    masks.push_back(torch::from_blob(vis.data, {1, vis.rows, vis.cols}, torch::kUInt8).to(torch::kFloat32));
    auto hm = torch::zeros({1, fh, fw}, torch::kFloat64);
    if (o.box) {
      const auto h = make_center_heatmap(o.projected_center, fh, fw, net_.stride());
      std::copy(h.values.begin(), h.values.end(), hm.data_ptr<double>());
    }
    heatmaps.push_back(hm.to(torch::kFloat32));
  }

  TrainingBatch b;
  b.images = torch::cat(images, 0);
  b.global_templates = torch::cat(globals, 0);
  b.local_templates = torch::cat(locals, 0);
  b.targets.labels = torch::stack(labels);
  b.targets.deltas = torch::stack(deltas);
  b.targets.mask = torch::stack(masks);
  b.targets.heatmap = torch::stack(heatmaps);
  return b;
}

namespace {

InstanceNet seeded_net(const NetworkConfig& cfg, std::uint64_t seed) {
  torch::manual_seed(seed);
  return InstanceNet(cfg);
}

void append_json(std::ofstream& os, const nlohmann::json& j) {
  os << j.dump() << '\n';
  os.flush();
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, NetworkConfig net_cfg, const Dataset& data, std::vector<ObjectModel> catalog)
    : cfg_(std::move(cfg)),
      data_(data),
      net_(seeded_net(net_cfg, cfg_.seed)),
      builder_(net_cfg, std::move(catalog)),
      optimizer_(net_->parameters(),
                 torch::optim::AdamOptions(cfg_.learning_rate).weight_decay(cfg_.weight_decay).amsgrad(true)) {
  if (cfg_.batch_size <= 0 || cfg_.epochs <= 0 || cfg_.iterations_per_epoch <= 0)
    throw ConfigError("train: batch size, epochs and iterations per epoch must be positive");
  if (!cfg_.loss.valid()) throw ConfigError("train: invalid loss weights");
  if (!cfg_.augmentation.valid()) throw ConfigError("train: invalid augmentation settings");
  if (data_.train_ids.empty()) throw ConfigError("train: no training scenes");
}

double Trainer::learning_rate_at(long iteration) const {
  const long epoch = iteration / cfg_.iterations_per_epoch;
  double lr = cfg_.learning_rate;
  for (int s : cfg_.lr_step_epochs)
    if (epoch >= s) lr *= cfg_.lr_gamma;
  return lr;
}

double Trainer::evaluate_loss(const std::vector<int>& scene_ids) {
  std::vector<std::pair<const SceneSample*, int>> items;
  for (int id : scene_ids) {
    const auto t = data_.targets(id);
    if (!t.empty()) items.emplace_back(&data_.scenes[id], t.front());
  }
  if (cfg_.validation_items > 0 && static_cast<int>(items.size()) > cfg_.validation_items)
    items.resize(cfg_.validation_items);
  if (items.empty()) throw ConfigError("evaluate_loss: no usable scenes");

  torch::NoGradGuard ng;
  net_->eval();
  std::mt19937_64 rng(derive_seed(cfg_.seed, 0xe7a1ull));
  double sum = 0.0;
  for (std::size_t b = 0; b < items.size(); b += cfg_.batch_size) {
    const std::vector<std::pair<const SceneSample*, int>> chunk(
        items.begin() + b, items.begin() + std::min(items.size(), b + cfg_.batch_size));
    const auto batch = builder_.build(chunk, cfg_.perturbation, nullptr, rng);
    const auto out = net_->forward(batch.images, batch.global_templates, batch.local_templates);
    const auto terms = compute_losses(out, batch.targets, cfg_.loss);
    sum += total_loss(terms.values(), cfg_.loss) * static_cast<double>(chunk.size());
  }
  return sum / static_cast<double>(items.size());
}

TrainResult Trainer::run(const fs::path& run_dir, const std::optional<fs::path>& resume) {
  fs::create_directories(run_dir);
  TrainResult res;
  res.best_checkpoint = run_dir / "best.pt";
  res.last_checkpoint = run_dir / "last.pt";
  long start = 0;
  double best = std::numeric_limits<double>::infinity();
  if (resume) {
    CheckpointInfo info;
    auto loaded = load_checkpoint(*resume, &info);
    {
      torch::NoGradGuard ng;
      auto dst = net_->named_parameters();
      for (const auto& p : loaded->named_parameters()) dst[p.key()].copy_(p.value());
      auto dst_b = net_->named_buffers();
      for (const auto& p : loaded->named_buffers()) dst_b[p.key()].copy_(p.value());
    }
    if (!load_optimizer_state(*resume, optimizer_))
      throw std::runtime_error("checkpoint " + resume->string() + " has no optimizer state");
    start = info.iteration;
    best = info.best_val_loss;
  }

  std::ofstream metrics(run_dir / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot open " + (run_dir / "metrics.jsonl").string());

  const auto& val_ids = data_.val_ids.empty() ? data_.train_ids : data_.val_ids;
  long total = static_cast<long>(cfg_.epochs) * cfg_.iterations_per_epoch;
  if (cfg_.max_iterations > 0) total = std::min(total, cfg_.max_iterations);
  const DatasetIndex index = data_.train_index();
  res.initial_eval_loss = evaluate_loss(data_.train_ids);

  for (long it = start; it < total; ++it) {
    const int epoch = static_cast<int>(it / cfg_.iterations_per_epoch);
    const double lr = learning_rate_at(it);
    for (auto& g : optimizer_.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);

    std::mt19937_64 rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(it)));
    std::vector<std::pair<const SceneSample*, int>> items;
    for (const auto& bi : sample_batch(index, cfg_.batch_size, cfg_.tabletop_ratio, rng))
      items.emplace_back(&data_.scenes[data_.train_ids[bi.scene]], bi.target);
    const auto batch = builder_.build(items, cfg_.perturbation, &cfg_.augmentation, rng);

    net_->train();
    optimizer_.zero_grad();
    const auto out = net_->forward(batch.images, batch.global_templates, batch.local_templates);
    const auto terms = compute_losses(out, batch.targets, cfg_.loss);
    const LossComponents v = terms.values();
    double total_value = 0.0;
    try {
      total_value = total_loss(v, cfg_.loss);
    } catch (const TrainingError& e) {
      append_json(metrics, {{"type", "abort"}, {"iteration", it}, {"error", e.what()}});
      throw TrainingError(std::string(e.what()) + " at iteration " + std::to_string(it));
    }
    terms.total.backward();
    optimizer_.step();
    append_json(metrics, {{"type", "train"},
                          {"iteration", it},
                          {"epoch", epoch},
                          {"lr", lr},
                          {"seg", v.seg},
                          {"center", v.center},
                          {"fl", v.focal},
                          {"reg", v.reg},
                          {"total", total_value}});

    if ((it + 1) % cfg_.iterations_per_epoch == 0 || it + 1 == total) {
      const double val = evaluate_loss(val_ids);
      append_json(metrics, {{"type", "val"}, {"epoch", epoch}, {"iteration", it + 1}, {"val_loss", val}});
      CheckpointInfo info{net_->config(), it + 1, epoch, std::min(best, val)};
      if (val < best) {
        best = val;
        save_checkpoint(res.best_checkpoint, net_, info);
      }
      save_checkpoint(res.last_checkpoint, net_, info, &optimizer_);
    }
  }
  res.iterations = total;
  res.best_val_loss = best;
  res.final_eval_loss = evaluate_loss(data_.train_ids);
  return res;
}

}  // namespace instdet
