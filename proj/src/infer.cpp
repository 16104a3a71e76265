#include "instdet/infer.hpp"

#include <algorithm>
#include <cmath>

#include "instdet/errors.hpp"
#include "instdet/losses.hpp"

namespace instdet {

namespace {

// Keeps exp() of size deltas bounded.
const double kMaxLogScale = std::log(1000.0 / 16.0);

Embeddings chunk_embeddings(InstanceNet& net, const TemplateBank& bank, std::size_t begin, std::size_t end) {
  const std::span<const Template> chunk(bank.local_templates.data() + begin, end - begin);
  return net->psb_forward(templates_to_tensor(chunk));
}

torch::Tensor bank_filters(InstanceNet& net, const TemplateBank& bank) {
  if (!net->config().use_oab) return {};
  return net->oab_forward(template_to_tensor(bank.global_template));
}

}  // namespace

void TemplateBank::validate() const {
  if (local_templates.empty()) throw ContractError("template bank '" + object_id + "' is empty");
  if (global_template.object_id != object_id) throw ContractError("template bank: global template of another object");
  for (const auto& t : local_templates)
    if (t.object_id != object_id) throw ContractError("template bank: mixed object ids");
}

TemplateBank make_template_bank(Renderer& renderer, const ObjectModel& model, int n_inplane, int global_index,
                                const TemplateSettings& settings) {
  const auto globals = global_template_poses(1.0);
  if (global_index < 0 || global_index >= static_cast<int>(globals.size()))
    throw std::out_of_range("make_template_bank: global template index out of range");
  TemplateBank bank;
  bank.object_id = model.id;
  bank.global_template = render_template(renderer, model, globals[global_index], settings);
  for (const auto& p : local_template_poses_test(n_inplane, 1.0))
    bank.local_templates.push_back(render_template(renderer, model, p, settings));
  return bank;
}

void precompute(TemplateBank& bank, InstanceNet& net, int chunk_size) {
  if (bank.precomputed) return;
  bank.validate();
  if (chunk_size <= 0) throw std::invalid_argument("precompute: chunk size must be positive");
  torch::NoGradGuard ng;
  net->eval();
  TemplateBank::Cache cache;
  cache.chunk_size = chunk_size;
  cache.filters = bank_filters(net, bank);
  for (std::size_t b = 0; b < bank.size(); b += chunk_size)
    cache.chunks.push_back(chunk_embeddings(net, bank, b, std::min(bank.size(), b + chunk_size)));
  bank.precomputed = std::move(cache);
}

std::vector<Detection> detect(const cv::Mat& image, const TemplateBank& bank, InstanceNet& net,
                              const DetectConfig& cfg) {
  bank.validate();
  const auto& nc = net->config();
  if (image.rows != nc.input_height || image.cols != nc.input_width)
    throw ShapeError("detect: image is " + std::to_string(image.cols) + "x" + std::to_string(image.rows) +
                     ", network expects " + std::to_string(nc.input_width) + "x" + std::to_string(nc.input_height));
  torch::NoGradGuard ng;
  net->eval();

  const int chunk = bank.precomputed ? bank.precomputed->chunk_size : cfg.template_batch;
  if (chunk <= 0) throw std::invalid_argument("detect: template batch must be positive");
  const auto filters = bank.precomputed ? bank.precomputed->filters : bank_filters(net, bank);
  const auto features = net->backbone_forward(image_to_tensor(image), filters);
  const auto anchors = generate_anchors(nc.anchor_spec()).anchors;

  std::vector<Detection> pooled;
  for (std::size_t b = 0, c = 0; b < bank.size(); b += chunk, ++c) {
    const std::size_t e = std::min(bank.size(), b + chunk);
    const Embeddings emb = bank.precomputed ? bank.precomputed->chunks[c] : chunk_embeddings(net, bank, b, e);
    const auto n = static_cast<long>(e - b);
    const auto corr = net->correlate(features.expand({n, -1, -1, -1}), emb);
    const auto out = net->heads_forward(corr, false);
    const auto scores = torch::sigmoid(out.cls).to(torch::kFloat64).contiguous();
    const auto reg = out.reg.to(torch::kFloat64).contiguous();
    const auto k = std::min<long>(cfg.top_k_per_template, scores.size(1));
    // Best k anchors of each template, highest score first.
    const auto [top_s, top_i] = torch::topk(scores, k, 1, true, true);
    const auto ts = top_s.accessor<double, 2>();
    const auto ti = top_i.accessor<int64_t, 2>();
    const auto rg = reg.accessor<double, 3>();
    for (long t = 0; t < n; ++t) {
      const Template& tmpl = bank.local_templates[b + t];
      for (long j = 0; j < k; ++j) {
        const double s = ts[t][j];
        if (s < cfg.score_threshold) break;
        const auto a = ti[t][j];
        const BoxDelta d{rg[t][a][0], rg[t][a][1], std::min(rg[t][a][2], kMaxLogScale),
                         std::min(rg[t][a][3], kMaxLogScale)};
        const BBox box = clip_to_image(decode_box(anchors[a], d), image.cols, image.rows);
        if (!box.valid()) continue;
        Detection det{box, s, static_cast<int>(b + t), bank.object_id, estimate_depth(box, tmpl.render_depth)};
        pooled.push_back(std::move(det));
      }
    }
  }

  std::vector<Detection> kept;
  if (cfg.depth_filter && cfg.depth_filter_before_nms) {
    kept = nms(filter_by_depth(pooled, cfg.min_depth, cfg.max_depth), cfg.nms_threshold);
  } else {
    kept = nms(std::move(pooled), cfg.nms_threshold);
    if (cfg.depth_filter) kept = filter_by_depth(kept, cfg.min_depth, cfg.max_depth);
  }
  if (cfg.max_detections > 0 && static_cast<int>(kept.size()) > cfg.max_detections) kept.resize(cfg.max_detections);
  return kept;
}

std::optional<Detection> select_top_per_object(const std::vector<Detection>& dets) {
  if (dets.empty()) return std::nullopt;
  const Detection* best = &dets.front();
  for (const auto& d : dets) {
    if (d.object_id != dets.front().object_id) throw ContractError("select_top_per_object: mixed object ids");
    if (d.score > best->score || (d.score == best->score && d.template_index < best->template_index)) best = &d;
  }
  return *best;
}

}  // namespace instdet
