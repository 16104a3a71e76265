#include <filesystem>
#include <fstream>
#include <sstream>

#include "nn_doctest.hpp"
#include "instdet/app.hpp"
#include "instdet/errors.hpp"

using namespace instdet;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("instdet_app_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig small_config() {
  auto cfg = run_config_from_yaml(R"(
seed: 7
dataset: {num_scenes: 4, workers: 1, scene: {min_objects: 2, max_objects: 3}}
templates: {n_inplane: 5}
)");
  return cfg;
}

}  // namespace

TEST_CASE("run config defaults, overrides and errors") {
  const auto def = run_config_from_yaml("");
  CHECK(def.network.input_width == 320);
  CHECK(def.train.learning_rate == 1e-4);
  CHECK(def.train.lr_step_epochs == std::vector<int>{20, 40});
  CHECK(def.train.batch_size == 6);
  CHECK(def.train.epochs == 50);
  CHECK(def.train.iterations_per_epoch == 1300);
  CHECK(def.train.loss.lambda_seg == 20.0);
  CHECK(def.train_objects.size() == 6);
  CHECK(def.test_objects.size() == 2);

  const auto cfg = run_config_from_yaml(R"(
seed: 11
network: {preset: full, use_e3: false}
dataset: {scene: {width: 640, height: 480}}
train: {learning_rate: 2.5e-4, lr_step_epochs: [3]}
loss: {lambda_seg: 5}
detect: {depth_filter: false}
)");
  CHECK(cfg.seed == 11);
  CHECK(cfg.network.embed_channels == 256);
  CHECK(!cfg.network.use_e3);
  CHECK(cfg.train.learning_rate == 2.5e-4);
  CHECK(cfg.train.lr_step_epochs == std::vector<int>{3});
  CHECK(cfg.train.loss.lambda_seg == 5.0);
  CHECK(!cfg.detect.depth_filter);

  CHECK_THROWS_AS(run_config_from_yaml("bogus: 1"), ConfigError);
  CHECK_THROWS_AS(run_config_from_yaml("train: {learning_rte: 1}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_yaml("network: {preset: huge}"), ConfigError);
  CHECK(run_config_from_yaml("network: {preset: full}").dataset.scene.width == 640);
  CHECK_THROWS_AS(run_config_from_yaml("network: {preset: full}\ndataset: {scene: {width: 320}}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_yaml("templates: {n_inplane: 7}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_yaml("test_objects: [box_red]"), ConfigError);
  CHECK_THROWS_AS(run_config_from_yaml("train: {batch_size: x}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_yaml("a: [unclosed"), ConfigError);
  CHECK_THROWS_AS(run_config_from_yaml("objects: [{id: q, shape: torus, colors: [[1,0,0]]}]\n"
                                       "train_objects: [q]\ntest_objects: [q2]"),
                  ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent.yaml"), ConfigError);
}

TEST_CASE("config hash is stable and sensitive") {
  const auto a = small_config(), b = small_config();
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  auto c = a;
  c.seed = 8;
  CHECK(config_hash(c) != config_hash(a));
  auto d = a;
  d.detect.nms_threshold = 0.45;
  CHECK(config_hash(d) != config_hash(a));
}

TEST_CASE("shipped configs load") {
  const fs::path root = INSTDET_SOURCE_DIR;
  const auto tiny = load_run_config(root / "configs/tiny.yaml");
  CHECK(tiny.network.feature_height() == 15);
  const auto full = load_run_config(root / "configs/full.yaml");
  CHECK(full.network.feature_width() == 40);
  CHECK(full.train.learning_rate == 1e-4);
  CHECK(full.train.iterations_per_epoch == 1300);
  CHECK(full.templates.n_inplane * 16 == 160);
}

TEST_CASE("scene style split over 1000 scenes") {
  int tabletop = 0;
  for (int i = 0; i < 1000; ++i) tabletop += scene_style_for(3, i, 0.8) == SceneStyle::tabletop;
  CHECK(std::abs(tabletop - 800) <= 40);
  CHECK(scene_style_for(3, 5, 0.8) == scene_style_for(3, 5, 0.8));
}

TEST_CASE("scene object picking") {
  SceneConfig sc;
  sc.min_objects = 2;
  sc.max_objects = 4;
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto idx = pick_scene_objects(6, sc, rng);
    CHECK(idx.size() >= 2);
    CHECK(idx.size() <= 4);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
  }
  CHECK(pick_scene_objects(1, sc, rng) == std::vector<int>{0});
}

TEST_CASE("make-dataset is reproducible and independent of the worker count") {
  auto cfg = small_config();
  const auto a = scratch("ds_a"), b = scratch("ds_b");
  cmd_make_dataset(cfg, a);
  cfg.dataset.workers = 3;
  cmd_make_dataset(cfg, b);
  CHECK(fs::exists(a / "scenes/00003/image.png"));
  CHECK(!fs::exists(a / "scenes/00004"));
  // The worker count is part of the config, so only the scene contents are compared.
  for (int i = 0; i < 4; ++i) {
    const auto rel = fs::path("scenes") / ("0000" + std::to_string(i));
    CHECK(slurp(a / rel / "meta.json") == slurp(b / rel / "meta.json"));
    CHECK(slurp(a / rel / "image.png") == slurp(b / rel / "image.png"));
  }
  const auto ds = load_dataset(a);
  CHECK(ds.data.scenes.size() == 4);
  CHECK(ds.image_ids.front() == "00000");
  CHECK(ds.data.train_ids.size() + ds.data.val_ids.size() == 4);
  CHECK(ds.config_hash == config_hash(small_config()));
  CHECK_THROWS(load_dataset(scratch("missing")));
}

TEST_CASE("render-templates writes the global and local banks") {
  auto cfg = small_config();
  cfg.templates.n_inplane = 10;
  const auto dir = scratch("tpl");
  CHECK(cmd_render_templates(cfg, "box_red", dir) == 240 + 160);
  int g = 0, l = 0;
  for (const auto& e : fs::directory_iterator(dir / "global")) g += e.path().extension() == ".png";
  for (const auto& e : fs::directory_iterator(dir / "local")) l += e.path().extension() == ".png";
  CHECK(g == 240);
  CHECK(l == 160);
  CHECK(load_template(dir / "local/007.png").valid());
  CHECK_THROWS_AS(cmd_render_templates(cfg, "nope", dir), ConfigError);
}

TEST_CASE("evaluating ground truth as predictions scores 100") {
  auto cfg = small_config();
  cfg.dataset.objects = "test";
  cfg.dataset.scene.min_objects = 2;
  const auto dir = scratch("eval_ds");
  cmd_make_dataset(cfg, dir);
  const auto ds = load_dataset(dir);
  std::vector<DetectionRecord> gt;
  for (std::size_t i = 0; i < ds.data.scenes.size(); ++i)
    for (const auto& o : ds.data.scenes[i].objects)
      if (o.box) gt.push_back({ds.image_ids[i], {*o.box, 0.9, 0, o.object_id, 1.0}});

  // Through the record format, as detect would write it.
  const auto preds = scratch("eval_preds.csv");
  {
    std::ofstream os(preds);
    log_config(cfg, os);
    write_detection_records(os, gt);
  }
  const auto out = scratch("eval_report");
  const auto r = cmd_evaluate(cfg, {dir, preds, out, {}});
  CHECK(r.bbox2d.mean == doctest::Approx(100.0));
  CHECK(r.map.map == doctest::Approx(1.0));
  CHECK(fs::exists(out / "bbox2d.txt"));
  CHECK(fs::exists(out / "map.json"));
  CHECK(slurp(out / "bbox2d.txt").rfind("# config_hash=" + config_hash(cfg), 0) == 0);

  std::ifstream is(preds);
  const auto back = read_detection_records(is);
  REQUIRE(back.size() == gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i)
    CHECK(format_detection_record(back[i]) == format_detection_record(gt[i]));
}

TEST_CASE("detect writes provenance and ablate runs the template sweep") {
  auto cfg = small_config();
  cfg.dataset.objects = "test";
  cfg.dataset.num_scenes = 2;
  cfg.network = NetworkConfig::tiny();
  cfg.detect.score_threshold = 0.0;
  cfg.ablation.inplane_counts = {5, 10, 20};
  cfg.ablation.retrain_iterations = 0;
  const auto data = scratch("det_ds");
  cmd_make_dataset(cfg, data);
  torch::manual_seed(0);
  InstanceNet net(cfg.network);
  const auto ckpt = scratch("det.pt");
  save_checkpoint(ckpt, net, {cfg.network, 0, 0, 0.0});

  DetectOptions opt{ckpt, data, scratch("det_out") / "preds.csv", {"tower"}, scratch("det_ann")};
  const auto recs = cmd_detect(cfg, opt);
  CHECK(!recs.empty());
  const auto text = slurp(opt.output);
  CHECK(text.rfind("# config_hash=" + config_hash(cfg), 0) == 0);
  CHECK(fs::exists(*opt.annotate_dir / "00000.png"));
  const auto second = scratch("det_out2.csv");
  cmd_detect(cfg, {ckpt, data, second, {"tower"}, {}});
  CHECK(slurp(second) == text);

  const auto rows = cmd_ablate(cfg, {ckpt, {}, data, scratch("ablate")});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].setting == "80");
  CHECK(rows[2].setting == "320");
  for (const auto& r : rows) CHECK(r.runtime_ms.has_value());
  CHECK(ablation_table(rows).find("runtime_ms") != std::string::npos);
  CHECK_THROWS(cmd_ablate(cfg, {scratch("none.pt"), {}, data, scratch("ablate2")}));
}
