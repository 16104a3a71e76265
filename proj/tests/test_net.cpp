#include <filesystem>

#include "nn_doctest.hpp"
#include "instdet/errors.hpp"
#include "instdet/net.hpp"

using namespace instdet;

namespace {

torch::Tensor random_templates(int n, int size = 124) {
  auto t = torch::rand({n, 4, size, size});
  t.index_put_({torch::indexing::Slice(), 3}, (t.index({torch::indexing::Slice(), 3}) > 0.5).to(torch::kFloat32));
  return t;
}

bool all_finite(const torch::Tensor& t) { return torch::isfinite(t).all().item<bool>(); }

}  // namespace

TEST_CASE("derived feature sizes") {
  const auto full = NetworkConfig::full();
  CHECK(full.stride() == 16);
  CHECK(full.feature_height() == 30);
  CHECK(full.feature_width() == 40);
  CHECK(full.anchors_per_location() == 24);
  const auto tiny = NetworkConfig::tiny();
  CHECK(tiny.feature_height() == 15);
  CHECK(tiny.feature_width() == 20);
  auto bad = tiny;
  bad.norm = "layer";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  const auto back = network_config_from_json(to_json(tiny));
  CHECK(to_json(back) == to_json(tiny));
}

TEST_CASE("full-size backbone output is 30x40 for 480x640") {
  torch::manual_seed(0);
  auto cfg = NetworkConfig::full();
  InstanceNet net(cfg);
  net->eval();
  torch::NoGradGuard ng;
  const auto f = net->oab_forward(random_templates(1));
  CHECK(f.sizes() == torch::IntArrayRef({1, 64, 3, 3}));
  const auto feat = net->backbone_forward(torch::rand({1, 3, 480, 640}), f);
  CHECK(feat.sizes() == torch::IntArrayRef({1, 256, 30, 40}));
  CHECK(all_finite(feat));
}

TEST_CASE("branch and head shapes on the tiny network") {
  torch::manual_seed(1);
  const auto cfg = NetworkConfig::tiny();
  InstanceNet net(cfg);
  net->eval();
  torch::NoGradGuard ng;
  const int c = cfg.embed_channels;

  const auto filters = net->oab_forward(random_templates(3));
  CHECK(filters.sizes() == torch::IntArrayRef({3, cfg.stem_channels, 3, 3}));
  CHECK((filters[0] - filters[1]).norm().item<double>() > 0.0);

  const auto emb = net->psb_forward(random_templates(160));
  CHECK(emb.e1.sizes() == torch::IntArrayRef({160, c, 1, 1}));
  CHECK(emb.e3.sizes() == torch::IntArrayRef({160, c, 3, 3}));

  const auto img = torch::rand({2, 3, 240, 320});
  const auto feat = net->backbone_forward(img, filters.slice(0, 0, 2));
  CHECK(feat.sizes() == torch::IntArrayRef({2, c, 15, 20}));

  const Embeddings two{emb.e1.slice(0, 0, 2), emb.e3.slice(0, 0, 2)};
  const auto corr = net->correlate(feat, two);
  CHECK(corr.sizes() == torch::IntArrayRef({2, 3 * cfg.path_channels, 15, 20}));

  const auto out = net->heads_forward(corr, true);
  CHECK(out.cls.sizes() == torch::IntArrayRef({2, 15 * 20 * 24}));
  CHECK(out.reg.sizes() == torch::IntArrayRef({2, 15 * 20 * 24, 4}));
  CHECK(out.seg.sizes() == torch::IntArrayRef({2, 1, 240, 320}));
  CHECK(out.center.sizes() == torch::IntArrayRef({2, 1, 15, 20}));
  CHECK(all_finite(out.cls));
  CHECK(all_finite(out.reg));
  CHECK(all_finite(out.seg));
  CHECK(out.center.min().item<double>() >= 0.0);
  CHECK(out.center.max().item<double>() <= 1.0);
  // Prior initialisation of the classification bias.
  CHECK(torch::sigmoid(out.cls).mean().item<double>() == doctest::Approx(0.01).epsilon(0.5));

  const auto no_aux = net->heads_forward(corr, false);
  CHECK(!no_aux.seg.defined());
}

TEST_CASE("untrained template encoders respond to their input") {
  torch::manual_seed(4);
  InstanceNet net(NetworkConfig::tiny());
  net->eval();
  torch::NoGradGuard ng;
  // A red square on black against a blue frame-filling silhouette.
  auto t = torch::zeros({2, 4, 124, 124});
  using torch::indexing::Slice;
  t.index_put_({0, torch::tensor({0, 3}), Slice(40, 84), Slice(40, 84)}, 1.0);
  t.index_put_({1, torch::tensor({2, 3})}, 1.0);
  auto rel = [](const torch::Tensor& a, const torch::Tensor& b) {
    return ((a - b).norm() / (0.5 * (a.norm() + b.norm()))).item<double>();
  };
  const auto emb = net->psb_forward(t);
  CHECK(rel(emb.e1[0], emb.e1[1]) > 0.05);
  CHECK(rel(emb.e3[0], emb.e3[1]) > 0.05);
  const auto f = net->oab_forward(t);
  CHECK(rel(f[0], f[1]) > 0.05);
}

TEST_CASE("zero filters leave the backbone unchanged") {
  torch::manual_seed(2);
  const auto cfg = NetworkConfig::tiny();
  InstanceNet net(cfg);
  net->eval();
  torch::NoGradGuard ng;
  const auto img = torch::rand({1, 3, 240, 320});
  const auto plain = net->backbone_forward(img, {});
  const auto zero = net->backbone_forward(img, torch::zeros({1, cfg.stem_channels, 3, 3}));
  CHECK(torch::equal(plain, zero));
  const auto tuned = net->backbone_forward(img, net->oab_forward(random_templates(1)));
  CHECK(!torch::equal(plain, tuned));
}

TEST_CASE("zero embeddings silence the correlation paths") {
  torch::manual_seed(3);
  const auto cfg = NetworkConfig::tiny();
  InstanceNet net(cfg);
  const auto feat = torch::randn({1, cfg.embed_channels, 15, 20});
  const Embeddings zero{torch::zeros({1, cfg.embed_channels, 1, 1}), torch::zeros({1, cfg.embed_channels, 3, 3})};
  const auto paths = net->correlation_paths(feat, zero);
  REQUIRE(paths.size() == 3);
  CHECK(paths[0].abs().max().item<double>() == 0.0);
  CHECK(paths[1].abs().max().item<double>() == 0.0);
  CHECK(torch::equal(paths[2], feat));
  CHECK(paths[1].sizes() == feat.sizes());
}

TEST_CASE("shape errors") {
  const auto cfg = NetworkConfig::tiny();
  InstanceNet net(cfg);
  CHECK_THROWS_AS(net->oab_forward(torch::rand({1, 3, 124, 124})), ShapeError);
  CHECK_THROWS_AS(net->psb_forward(torch::rand({1, 4, 100, 100})), ShapeError);
  CHECK_THROWS_AS(net->backbone_forward(torch::rand({1, 3, 200, 320}), {}), ShapeError);
  const Embeddings bad{torch::zeros({1, cfg.embed_channels + 1, 1, 1}), torch::zeros({1, cfg.embed_channels, 3, 3})};
  CHECK_THROWS_AS(net->correlate(torch::zeros({1, cfg.embed_channels, 15, 20}), bad), ShapeError);
}

TEST_CASE("eval-mode determinism") {
  torch::manual_seed(4);
  InstanceNet net(NetworkConfig::tiny());
  net->eval();
  torch::NoGradGuard ng;
  const auto img = torch::rand({1, 3, 240, 320});
  const auto g = random_templates(1), l = random_templates(1);
  const auto a = net->forward(img, g, l), b = net->forward(img, g, l);
  CHECK(torch::equal(a.cls, b.cls));
  CHECK(torch::equal(a.reg, b.reg));
  CHECK(torch::equal(a.seg, b.seg));
}

TEST_CASE("ablation switches") {
  auto cfg = NetworkConfig::tiny();
  cfg.use_oab = false;
  cfg.use_e3 = false;
  cfg.aux_tasks = false;
  InstanceNet net(cfg);
  torch::NoGradGuard ng;
  CHECK_THROWS_AS(net->oab_forward(random_templates(1)), ContractError);
  const auto out = net->forward(torch::rand({1, 3, 240, 320}), random_templates(1), random_templates(1));
  CHECK(out.cls.size(1) == 15 * 20 * 24);
  CHECK(!out.seg.defined());
  CHECK(net->correlate(torch::zeros({1, cfg.embed_channels, 15, 20}), net->psb_forward(random_templates(1))).size(1) ==
        2 * cfg.path_channels);
}

TEST_CASE("checkpoint round trip") {
  torch::manual_seed(5);
  auto cfg = NetworkConfig::mini();
  InstanceNet net(cfg);
  const auto path = std::filesystem::temp_directory_path() / "instdet_net_ckpt.pt";
  save_checkpoint(path, net, {cfg, 42, 3, 0.5});
  CheckpointInfo info;
  auto back = load_checkpoint(path, &info);
  CHECK(info.iteration == 42);
  CHECK(info.epoch == 3);
  CHECK(info.best_val_loss == 0.5);
  CHECK(to_json(info.config) == to_json(cfg));
  torch::NoGradGuard ng;
  net->eval();
  back->eval();
  const auto img = torch::rand({1, 3, 64, 64});
  const auto g = random_templates(1);
  CHECK(torch::equal(net->forward(img, g, g).cls, back->forward(img, g, g).cls));
  CHECK_THROWS(load_checkpoint("/nonexistent/ckpt.pt"));
}

TEST_CASE("template tensors") {
  Template t;
  t.rgb = cv::Mat(124, 124, CV_8UC3, cv::Scalar(255, 0, 0));
  t.mask = cv::Mat::ones(124, 124, CV_8U);
  t.render_depth = 1.0;
  const auto x = template_to_tensor(t);
  CHECK(x.sizes() == torch::IntArrayRef({1, 4, 124, 124}));
  CHECK(x[0][0][5][5].item<float>() == 1.0f);
  CHECK(x[0][1][5][5].item<float>() == 0.0f);
  CHECK(x[0][3][5][5].item<float>() == 1.0f);
}
