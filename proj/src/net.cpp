#include "instdet/net.hpp"

#include <cmath>
#include <fstream>

#include "instdet/errors.hpp"

namespace instdet {

namespace nn = torch::nn;

namespace {

int conv_out(int size, int kernel, int stride, int pad) { return (size + 2 * pad - kernel) / stride + 1; }

nn::Conv2d conv(int in, int out, int k, int stride = 1, bool bias = true, int groups = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2).bias(bias).groups(groups));
}

nn::AnyModule norm_layer(const std::string& norm, int channels) {
  if (norm == "batch") return nn::AnyModule(nn::BatchNorm2d(channels));
  return nn::AnyModule(nn::Identity());
}

class DenseLayerImpl : public nn::Module {
 public:
  DenseLayerImpl(int in, int growth, int bottleneck, const std::string& norm) {
    body_ = register_module("body", nn::Sequential());
    body_->push_back(norm_layer(norm, in));
    body_->push_back(nn::ReLU());
    body_->push_back(conv(in, bottleneck, 1, 1, norm != "batch"));
    body_->push_back(norm_layer(norm, bottleneck));
    body_->push_back(nn::ReLU());
    body_->push_back(conv(bottleneck, growth, 3, 1, true));
  }
  torch::Tensor forward(const torch::Tensor& x) { return torch::cat({x, body_->forward(x)}, 1); }

 private:
  nn::Sequential body_{nullptr};
};
TORCH_MODULE(DenseLayer);

class FireImpl : public nn::Module {
 public:
  FireImpl(int in, int squeeze, int expand) {
    squeeze_ = register_module("squeeze", conv(in, squeeze, 1));
    expand1_ = register_module("expand1", conv(squeeze, expand, 1));
    expand3_ = register_module("expand3", conv(squeeze, expand, 3));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    const auto s = torch::relu(squeeze_->forward(x));
    return torch::cat({torch::relu(expand1_->forward(s)), torch::relu(expand3_->forward(s))}, 1);
  }

 private:
  nn::Conv2d squeeze_{nullptr}, expand1_{nullptr}, expand3_{nullptr};
};
TORCH_MODULE(Fire);

nn::MaxPool2d encoder_pool() { return nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).ceil_mode(true)); }

// Squeeze/expand encoder for 4-channel templates; output has 4 * width channels.
nn::Sequential make_encoder(int width) {
  const int s = std::max(2, width / 4);
  nn::Sequential e;
  e->push_back(conv(4, width, 3, 2));
  e->push_back(nn::ReLU());
  e->push_back(encoder_pool());
  e->push_back(Fire(width, s, width / 2));
  e->push_back(Fire(width, s, width / 2));
  e->push_back(encoder_pool());
  e->push_back(Fire(width, 2 * s, width));
  e->push_back(Fire(2 * width, 2 * s, width));
  e->push_back(encoder_pool());
  e->push_back(Fire(2 * width, 3 * s, 2 * width));
  return e;
}

nn::Sequential make_head(int in, int hidden, int depth, int out) {
  nn::Sequential h;
  for (int i = 0; i < depth; ++i) {
    h->push_back(conv(i == 0 ? in : hidden, hidden, 3));
    h->push_back(nn::ReLU());
  }
  h->push_back(conv(depth == 0 ? in : hidden, out, 3));
  return h;
}

nn::Sequential path_conv(int in, int out) {
  nn::Sequential p;
  p->push_back(conv(in, out, 3));
  p->push_back(nn::ReLU());
  return p;
}

void check_4d(const torch::Tensor& t, const char* what, int channels, int h, int w) {
  if (!t.defined() || t.dim() != 4 || t.size(1) != channels || t.size(2) != h || t.size(3) != w)
    throw ShapeError(std::string(what) + ": expected (N, " + std::to_string(channels) + ", " + std::to_string(h) +
                     ", " + std::to_string(w) + "), got " +
                     (t.defined() ? c10::str(t.sizes()) : std::string("undefined")));
}

// ImageNet statistics.
torch::Tensor normalize(const torch::Tensor& x) {
  const auto opts = x.options();
  const auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
  const auto std = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
  return (x - mean) / std;
}

// Depthwise correlation of each map with its own kernel bank, spatial size preserved.
torch::Tensor depthwise_correlate(const torch::Tensor& maps, const torch::Tensor& kernels) {
  const auto n = maps.size(0), c = maps.size(1);
  const auto k = kernels.size(2);
  auto x = maps.reshape({1, n * c, maps.size(2), maps.size(3)});
  auto w = kernels.reshape({n * c, 1, k, kernels.size(3)});
  auto y = torch::conv2d(x, w, {}, 1, k / 2, 1, n * c);
  return y.view({n, c, maps.size(2), maps.size(3)});
}

}  // namespace

int NetworkConfig::stride() const { return 4 << (static_cast<int>(block_layers.size()) - 1); }

int NetworkConfig::feature_height() const {
  int h = conv_out(conv_out(input_height, 7, 2, 3), 3, 2, 1);
  for (std::size_t i = 1; i < block_layers.size(); ++i) h /= 2;
  return h;
}

int NetworkConfig::feature_width() const {
  int w = conv_out(conv_out(input_width, 7, 2, 3), 3, 2, 1);
  for (std::size_t i = 1; i < block_layers.size(); ++i) w /= 2;
  return w;
}

AnchorSpec NetworkConfig::anchor_spec() const {
  return {feature_height(), feature_width(), static_cast<double>(stride()), anchor_scales, anchor_ratios};
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("network: " + m); };
  if (input_height < 16 || input_width < 16) fail("input resolution too small");
  if (template_size < 16) fail("template_size too small");
  if (stem_channels <= 0 || growth_rate <= 0 || bottleneck_width <= 0 || embed_channels <= 0 || encoder_width < 2 ||
      path_channels <= 0 || head_channels <= 0 || seg_channels <= 0)
    fail("channel counts must be positive");
  if (block_layers.empty() || block_layers.size() > 5) fail("block_layers must have 1 to 5 entries");
  for (int n : block_layers)
    if (n <= 0) fail("every dense block needs at least one layer");
  if (filter_size <= 0 || filter_size % 2 == 0) fail("filter_size must be odd");
  if (head_convs < 0) fail("head_convs must be >= 0");
  if (anchor_scales.empty() || anchor_ratios.empty()) fail("anchor scales and ratios must be non-empty");
  if (!(prior_probability > 0.0 && prior_probability < 1.0)) fail("prior_probability must lie in (0, 1)");
  if (norm != "batch" && norm != "none") fail("norm must be 'batch' or 'none'");
  if (feature_height() < 1 || feature_width() < 1) fail("input too small for the backbone stride");
}

NetworkConfig NetworkConfig::full() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::tiny() {
  NetworkConfig c;
  c.input_height = 240;
  c.input_width = 320;
  c.stem_channels = 16;
  c.growth_rate = 8;
  c.bottleneck_width = 2;
  c.block_layers = {2, 2, 2};
  c.embed_channels = 32;
  c.encoder_width = 16;
  c.path_channels = 32;
  c.head_channels = 32;
  c.seg_channels = 16;
  c.norm = "none";
  return c;
}

NetworkConfig NetworkConfig::mini() {
  NetworkConfig c;
  c.input_height = 64;
  c.input_width = 64;
  c.stem_channels = 8;
  c.growth_rate = 4;
  c.bottleneck_width = 1;
  c.block_layers = {1, 1, 1};
  c.embed_channels = 8;
  c.encoder_width = 8;
  c.path_channels = 8;
  c.head_channels = 8;
  c.head_convs = 2;
  c.seg_channels = 4;
  c.anchor_scales = {30.0, 60.0};
  c.norm = "none";
  return c;
}

nlohmann::json to_json(const NetworkConfig& c) {
  return {{"input_height", c.input_height},
          {"input_width", c.input_width},
          {"template_size", c.template_size},
          {"stem_channels", c.stem_channels},
          {"growth_rate", c.growth_rate},
          {"bottleneck_width", c.bottleneck_width},
          {"block_layers", c.block_layers},
          {"embed_channels", c.embed_channels},
          {"encoder_width", c.encoder_width},
          {"filter_size", c.filter_size},
          {"path_channels", c.path_channels},
          {"head_channels", c.head_channels},
          {"head_convs", c.head_convs},
          {"seg_channels", c.seg_channels},
          {"prior_probability", c.prior_probability},
          {"anchor_scales", c.anchor_scales},
          {"anchor_ratios", c.anchor_ratios},
          {"norm", c.norm},
          {"use_oab", c.use_oab},
          {"use_e3", c.use_e3},
          {"aux_tasks", c.aux_tasks}};
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("input_height", c.input_height);
  get("input_width", c.input_width);
  get("template_size", c.template_size);
  get("stem_channels", c.stem_channels);
  get("growth_rate", c.growth_rate);
  get("bottleneck_width", c.bottleneck_width);
  get("block_layers", c.block_layers);
  get("embed_channels", c.embed_channels);
  get("encoder_width", c.encoder_width);
  get("filter_size", c.filter_size);
  get("path_channels", c.path_channels);
  get("head_channels", c.head_channels);
  get("head_convs", c.head_convs);
  get("seg_channels", c.seg_channels);
  get("prior_probability", c.prior_probability);
  get("anchor_scales", c.anchor_scales);
  get("anchor_ratios", c.anchor_ratios);
  get("norm", c.norm);
  get("use_oab", c.use_oab);
  get("use_e3", c.use_e3);
  get("aux_tasks", c.aux_tasks);
  return c;
}

InstanceNetImpl::InstanceNetImpl(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const bool bn = cfg_.norm == "batch";

  stem_ = register_module("stem", nn::Sequential());
  stem_->push_back(nn::Conv2d(nn::Conv2dOptions(3, cfg_.stem_channels, 7).stride(2).padding(3).bias(!bn)));
  stem_->push_back(norm_layer(cfg_.norm, cfg_.stem_channels));
  stem_->push_back(nn::ReLU());

  trunk_ = register_module("trunk", nn::Sequential());
  trunk_->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
  int ch = cfg_.stem_channels;
  for (std::size_t b = 0; b < cfg_.block_layers.size(); ++b) {
    for (int l = 0; l < cfg_.block_layers[b]; ++l) {
      trunk_->push_back(DenseLayer(ch, cfg_.growth_rate, cfg_.bottleneck_width * cfg_.growth_rate, cfg_.norm));
      ch += cfg_.growth_rate;
    }
    trunk_->push_back(norm_layer(cfg_.norm, ch));
    trunk_->push_back(nn::ReLU());
    if (b + 1 < cfg_.block_layers.size()) {
      const int out = std::max(1, ch / 2);
      trunk_->push_back(conv(ch, out, 1, 1, !bn));
      trunk_->push_back(nn::AvgPool2d(nn::AvgPool2dOptions(2).stride(2)));
      ch = out;
    }
  }
  trunk_->push_back(conv(ch, cfg_.embed_channels, 1));

  const int enc_out = 4 * cfg_.encoder_width;
  if (cfg_.use_oab) {
    oab_encoder_ = register_module("oab_encoder", make_encoder(cfg_.encoder_width));
    oab_head_ = register_module("oab_head", conv(enc_out, cfg_.stem_channels, 1));
  }
  psb_encoder_ = register_module("psb_encoder", make_encoder(cfg_.encoder_width));
  psb_e1_ = register_module("psb_e1", conv(enc_out, cfg_.embed_channels, 1));
  if (cfg_.use_e3) psb_e3_ = register_module("psb_e3", conv(enc_out, cfg_.embed_channels, 1));

  path_mul_ = register_module("path_mul", path_conv(cfg_.embed_channels, cfg_.path_channels));
  if (cfg_.use_e3) path_dw_ = register_module("path_dw", path_conv(cfg_.embed_channels, cfg_.path_channels));
  path_sub_ = register_module("path_sub", path_conv(cfg_.embed_channels, cfg_.path_channels));
  const int corr_ch = (cfg_.use_e3 ? 3 : 2) * cfg_.path_channels;

  const int k = cfg_.anchors_per_location();
  cls_head_ = register_module("cls_head", make_head(corr_ch, cfg_.head_channels, cfg_.head_convs, k));
  reg_head_ = register_module("reg_head", make_head(corr_ch, cfg_.head_channels, cfg_.head_convs, 4 * k));

  if (cfg_.aux_tasks) {
    const int ups = static_cast<int>(std::lround(std::log2(cfg_.stride())));
    seg_head_ = register_module("seg_head", nn::Sequential());
    int in = corr_ch;
    for (int i = 0; i < 4; ++i) {
      seg_head_->push_back(conv(in, cfg_.seg_channels, 3));
      seg_head_->push_back(nn::ReLU());
      in = cfg_.seg_channels;
      if (i < ups)
        seg_head_->push_back(
            nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kBilinear).align_corners(false)));
    }
    for (int i = 4; i < ups; ++i)
      seg_head_->push_back(
          nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kBilinear).align_corners(false)));
    seg_head_->push_back(conv(in, 1, 3));
    center_head_ = register_module("center_head", conv(corr_ch, 1, 1));
  }

  // He init with zero bias. The default scaling shrinks the signal several-fold per layer, which
  // leaves the unnormalized template encoders nearly blind to their input.
  torch::NoGradGuard ng;
  for (auto& m : modules(false))
    if (auto* c = m->as<nn::Conv2d>()) {
      nn::init::kaiming_uniform_(c->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (c->bias.defined()) nn::init::zeros_(c->bias);
    }
  auto& cls_out = *cls_head_->children().back()->as<nn::Conv2d>();
  nn::init::normal_(cls_out.weight, 0.0, 0.01);
  nn::init::constant_(cls_out.bias, -std::log((1.0 - cfg_.prior_probability) / cfg_.prior_probability));
  auto& reg_out = *reg_head_->children().back()->as<nn::Conv2d>();
  nn::init::normal_(reg_out.weight, 0.0, 0.01);
  nn::init::zeros_(reg_out.bias);
}

torch::Tensor InstanceNetImpl::oab_forward(const torch::Tensor& global_templates) {
  if (!cfg_.use_oab) throw ContractError("oab_forward: object attention branch is disabled");
  check_4d(global_templates, "oab_forward", 4, cfg_.template_size, cfg_.template_size);
  const auto x = oab_encoder_->forward(global_templates);
  return torch::adaptive_avg_pool2d(oab_head_->forward(x), {cfg_.filter_size, cfg_.filter_size});
}

torch::Tensor InstanceNetImpl::apply_filters(const torch::Tensor& f0, const torch::Tensor& filters) const {
  check_4d(filters, "tunable filters", cfg_.stem_channels, cfg_.filter_size, cfg_.filter_size);
  auto bank = filters;
  if (bank.size(0) != f0.size(0)) {
    if (bank.size(0) != 1) throw ShapeError("tunable filters: batch does not match the images");
    bank = bank.expand({f0.size(0), -1, -1, -1});
  }
  return f0 + depthwise_correlate(f0, bank);
}

torch::Tensor InstanceNetImpl::backbone_forward(const torch::Tensor& images, const torch::Tensor& filters) {
  check_4d(images, "backbone_forward", 3, cfg_.input_height, cfg_.input_width);
  auto f0 = stem_->forward(normalize(images));
  if (filters.defined()) f0 = apply_filters(f0, filters);
  return trunk_->forward(f0);
}

Embeddings InstanceNetImpl::psb_forward(const torch::Tensor& local_templates) {
  check_4d(local_templates, "psb_forward", 4, cfg_.template_size, cfg_.template_size);
  const auto x = psb_encoder_->forward(local_templates);
  Embeddings e;
  e.e1 = torch::adaptive_avg_pool2d(psb_e1_->forward(x), {1, 1});
  if (cfg_.use_e3) e.e3 = torch::adaptive_avg_pool2d(psb_e3_->forward(x), {3, 3});
  return e;
}

std::vector<torch::Tensor> InstanceNetImpl::correlation_paths(const torch::Tensor& features,
                                                              const Embeddings& emb) const {
  const int c = cfg_.embed_channels;
  check_4d(features, "correlate features", c, cfg_.feature_height(), cfg_.feature_width());
  check_4d(emb.e1, "correlate e1", c, 1, 1);
  if (emb.e1.size(0) != features.size(0)) throw ShapeError("correlate: feature and embedding batches differ");
  std::vector<torch::Tensor> out;
  out.push_back(features * emb.e1);
  if (cfg_.use_e3) {
    check_4d(emb.e3, "correlate e3", c, 3, 3);
    if (emb.e3.size(0) != features.size(0)) throw ShapeError("correlate: feature and embedding batches differ");
    out.push_back(depthwise_correlate(features, emb.e3));
  }
  out.push_back(features - emb.e1);
  return out;
}

torch::Tensor InstanceNetImpl::correlate(const torch::Tensor& features, const Embeddings& emb) {
  const auto raw = correlation_paths(features, emb);
  std::vector<torch::Tensor> parts;
  parts.push_back(path_mul_->forward(raw[0]));
  if (cfg_.use_e3) parts.push_back(path_dw_->forward(raw[1]));
  parts.push_back(path_sub_->forward(raw.back()));
  return torch::cat(parts, 1);
}

HeadOutputs InstanceNetImpl::heads_forward(const torch::Tensor& corr, bool with_aux) {
  const auto n = corr.size(0);
  HeadOutputs o;
  // (N, k, h, w) -> (N, h, w, k): row-major cells, then anchors, as in the anchor grid.
  o.cls = cls_head_->forward(corr).permute({0, 2, 3, 1}).reshape({n, -1});
  o.reg = reg_head_->forward(corr).permute({0, 2, 3, 1}).reshape({n, -1, 4});
  if (with_aux && cfg_.aux_tasks) {
    auto seg = seg_head_->forward(corr);
    if (seg.size(2) != cfg_.input_height || seg.size(3) != cfg_.input_width)
      seg = torch::nn::functional::interpolate(
          seg, torch::nn::functional::InterpolateFuncOptions()
                   .size(std::vector<int64_t>{cfg_.input_height, cfg_.input_width})
                   .mode(torch::kBilinear)
                   .align_corners(false));
    o.seg = seg;
    o.center = torch::sigmoid(center_head_->forward(corr));
  }
  return o;
}

HeadOutputs InstanceNetImpl::forward(const torch::Tensor& images, const torch::Tensor& global_templates,
                                     const torch::Tensor& local_templates) {
  const auto filters = cfg_.use_oab ? oab_forward(global_templates) : torch::Tensor();
  const auto features = backbone_forward(images, filters);
  const auto emb = psb_forward(local_templates);
  return heads_forward(correlate(features, emb), true);
}

torch::Tensor image_to_tensor(const cv::Mat& rgb) {
  if (rgb.empty() || rgb.type() != CV_8UC3) throw ShapeError("image_to_tensor: expected CV_8UC3");
  cv::Mat c = rgb.isContinuous() ? rgb : rgb.clone();
  auto t = torch::from_blob(c.data, {c.rows, c.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).unsqueeze(0).to(torch::kFloat32).div_(255.0);
}

torch::Tensor template_to_tensor(const Template& t) {
  if (!t.valid()) throw ShapeError("template_to_tensor: invalid template");
  auto rgb = image_to_tensor(t.rgb);
  cv::Mat m = t.mask.isContinuous() ? t.mask : t.mask.clone();
  auto mask = torch::from_blob(m.data, {1, 1, m.rows, m.cols}, torch::kUInt8).to(torch::kFloat32);
  return torch::cat({rgb, mask}, 1);
}

torch::Tensor templates_to_tensor(std::span<const Template> ts) {
  if (ts.empty()) throw ContractError("templates_to_tensor: no templates");
  std::vector<torch::Tensor> parts;
  parts.reserve(ts.size());
  for (const auto& t : ts) parts.push_back(template_to_tensor(t));
  return torch::cat(parts, 0);
}

void save_checkpoint(const std::filesystem::path& path, InstanceNet& net, const CheckpointInfo& info,
                     torch::optim::Optimizer* optimizer) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  net->save(archive);
  archive.write("format_version", c10::IValue(static_cast<int64_t>(kCheckpointVersion)));
  archive.write("config_json", c10::IValue(to_json(info.config).dump()));
  archive.write("iteration", c10::IValue(static_cast<int64_t>(info.iteration)));
  archive.write("epoch", c10::IValue(static_cast<int64_t>(info.epoch)));
  archive.write("best_val_loss", c10::IValue(info.best_val_loss));
  if (optimizer) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    archive.write("optimizer", opt);
  }
  const auto tmp = path.string() + ".tmp";
  archive.save_to(tmp);
  std::filesystem::rename(tmp, path);
}

namespace {

torch::serialize::InputArchive open_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue v;
  if (!archive.try_read("format_version", v) || v.toInt() != kCheckpointVersion)
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported format version");
  return archive;
}

}  // namespace

InstanceNet load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  auto archive = open_checkpoint(path);
  c10::IValue v;
  archive.read("config_json", v);
  CheckpointInfo ci;
  ci.config = network_config_from_json(nlohmann::json::parse(v.toStringRef()));
  archive.read("iteration", v);
  ci.iteration = v.toInt();
  archive.read("epoch", v);
  ci.epoch = static_cast<int>(v.toInt());
  archive.read("best_val_loss", v);
  ci.best_val_loss = v.toDouble();
  InstanceNet net(ci.config);
  net->load(archive);
  if (info) *info = ci;
  return net;
}

bool load_optimizer_state(const std::filesystem::path& path, torch::optim::Optimizer& optimizer) {
  auto archive = open_checkpoint(path);
  torch::serialize::InputArchive opt;
  if (!archive.try_read("optimizer", opt)) return false;
  optimizer.load(opt);
  return true;
}

}  // namespace instdet
