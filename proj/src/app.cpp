#include "instdet/app.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <limits>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "instdet/errors.hpp"
#include "instdet/infer.hpp"

namespace instdet {

namespace {

using json = nlohmann::json;

std::string scene_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", i);
  return buf;
}

json box_json(const std::optional<BBox>& b) {
  if (!b) return nullptr;
  return {b->x_min, b->y_min, b->x_max, b->y_max};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + p.string());
}

const std::vector<std::string>& or_test_objects(const std::vector<std::string>& ids, const RunConfig& cfg) {
  return ids.empty() ? cfg.test_objects : ids;
}

InstanceNet load_net(const fs::path& checkpoint, const RunConfig& cfg) {
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint.string());
  CheckpointInfo info;
  auto net = load_checkpoint(checkpoint, &info);
  if (info.config.input_width != cfg.network.input_width || info.config.input_height != cfg.network.input_height)
    throw ConfigError("checkpoint input size differs from the config's network input size");
  net->eval();
  return net;
}

std::vector<TemplateBank> build_banks(const RunConfig& cfg, const std::vector<std::string>& ids, InstanceNet& net,
                                      int n_inplane) {
  RasterRenderer renderer;
  std::vector<TemplateBank> banks;
  for (const auto& model : cfg.catalog(ids)) {
    banks.push_back(
        make_template_bank(renderer, model, n_inplane, cfg.templates.global_index, cfg.template_settings()));
    precompute(banks.back(), net, cfg.detect.template_batch);
  }
  return banks;
}

std::vector<DetectionRecord> detect_all(const LoadedDataset& ds, const std::vector<TemplateBank>& banks,
                                        InstanceNet& net, const DetectConfig& dc, double* seconds = nullptr) {
  std::vector<DetectionRecord> out;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < ds.data.scenes.size(); ++i)
    for (const auto& bank : banks)
      for (auto& d : detect(ds.data.scenes[i].image, bank, net, dc)) out.push_back({ds.image_ids[i], std::move(d)});
  if (seconds) *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace

fs::path make_run_dir(const RunConfig& cfg, const fs::path& root) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const fs::path dir = root / (std::string(stamp) + "_" + config_hash(cfg));
  fs::create_directories(dir);
  write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
  return dir;
}

void log_config(const RunConfig& cfg, std::ostream& os) {
  os << "# config_hash=" << config_hash(cfg) << " seed=" << cfg.seed << "\n# config " << to_json(cfg).dump() << "\n";
}

SceneStyle scene_style_for(std::uint64_t seed, int index, double tabletop_ratio) {
  std::mt19937_64 rng(derive_seed(seed, 0x5c3e0000ull + static_cast<std::uint64_t>(index)));
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < tabletop_ratio ? SceneStyle::tabletop
                                                                               : SceneStyle::composite;
}

std::vector<int> pick_scene_objects(int catalog_size, const SceneConfig& cfg, std::mt19937_64& rng) {
  if (catalog_size < 1) throw ConfigError("scene generation needs at least one object");
  const int hi = std::min(cfg.max_objects, catalog_size);
  const int lo = std::min(cfg.min_objects, hi);
  const int n = std::uniform_int_distribution<int>(lo, hi)(rng);
  std::vector<int> idx(catalog_size);
  for (int i = 0; i < catalog_size; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void cmd_make_dataset(const RunConfig& cfg, const fs::path& out_dir) {
  const auto& ids = cfg.dataset.objects == "test" ? cfg.test_objects : cfg.train_objects;
  const auto models = cfg.catalog(ids);
  const int n = cfg.dataset.num_scenes;
  fs::create_directories(out_dir / "scenes");

  std::vector<json> entries(n);  // manifest rows; scenes themselves go straight to disk
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    RasterRenderer renderer;
    for (int i = next++; i < n; i = next++) {
      try {
        std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        std::vector<ObjectModel> chosen;
        for (int k : pick_scene_objects(static_cast<int>(models.size()), cfg.dataset.scene, rng))
          chosen.push_back(models[k]);
        auto s = generate_scene(chosen, rng, scene_style_for(cfg.seed, i, cfg.dataset.tabletop_ratio),
                                cfg.dataset.scene, renderer);
        write_scene(s, out_dir / "scenes" / scene_name(i));
        json objs = json::array();
        for (const auto& o : s.objects)
          objs.push_back({{"id", o.object_id}, {"box", box_json(o.box)}, {"visible_pixels", o.visible_pixels()}});
        entries[i] = {{"dir", "scenes/" + scene_name(i)}, {"style", to_string(s.style)}, {"objects", objs}};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::min(cfg.dataset.workers, n); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  // The last val_fraction of the scenes forms the validation split.
  const int n_val = n > 1 ? static_cast<int>(std::lround(cfg.dataset.val_fraction * n)) : 0;
  json manifest = {{"config_hash", config_hash(cfg)},
                   {"seed", cfg.seed},
                   {"num_scenes", n},
                   {"objects", ids},
                   {"train_ids", json::array()},
                   {"val_ids", json::array()},
                   {"scenes", json::array()}};
  for (int i = 0; i < n; ++i) {
    (i < n - n_val ? manifest["train_ids"] : manifest["val_ids"]).push_back(i);
    manifest["scenes"].push_back(std::move(entries[i]));
  }
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

LoadedDataset load_dataset(const fs::path& dir, int min_visible_pixels) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("dataset manifest not found: " + (dir / "manifest.json").string());
  json m;
  try {
    m = json::parse(is);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  LoadedDataset ds;
  ds.config_hash = m.value("config_hash", "");
  ds.data.min_visible_pixels = min_visible_pixels;
  for (const auto& s : m.at("scenes")) {
    const std::string rel = s.at("dir").get<std::string>();
    ds.data.scenes.push_back(read_scene(dir / rel));
    ds.image_ids.push_back(fs::path(rel).filename().string());
  }
  m.at("train_ids").get_to(ds.data.train_ids);
  m.at("val_ids").get_to(ds.data.val_ids);
  return ds;
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& run_dir,
                      const std::optional<fs::path>& resume) {
  torch::set_num_threads(cfg.threads);
  const auto ds = load_dataset(dataset_dir);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  // Small datasets can lack one style in the training split; sample only from what exists.
  bool any_table = false, any_composite = false;
  for (const auto& e : ds.data.train_index().scenes) {
    if (e.targets.empty()) continue;
    (e.style == SceneStyle::tabletop ? any_table : any_composite) = true;
  }
  const double ratio = any_table && any_composite ? tc.tabletop_ratio : any_table ? 1.0 : 0.0;
  if (ratio != tc.tabletop_ratio) {
    std::clog << "warning: training split has only " << (any_table ? "tabletop" : "composite")
              << " scenes, sampling ratio set to " << ratio << "\n";
    tc.tabletop_ratio = ratio;
  }
  Trainer trainer(tc, cfg.network, ds.data, cfg.catalog(cfg.train_objects));
  return trainer.run(run_dir, resume);
}

std::vector<DetectionRecord> cmd_detect(const RunConfig& cfg, const DetectOptions& opt) {
  torch::set_num_threads(cfg.threads);
  torch::NoGradGuard ng;
  auto net = load_net(opt.checkpoint, cfg);
  const auto ds = load_dataset(opt.dataset);
  auto banks = build_banks(cfg, or_test_objects(opt.objects, cfg), net, cfg.templates.n_inplane);
  const auto records = detect_all(ds, banks, net, cfg.detect);

  if (!opt.output.parent_path().empty()) fs::create_directories(opt.output.parent_path());
  std::ofstream os(opt.output, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + opt.output.string());
  log_config(cfg, os);
  write_detection_records(os, records);
  if (!os) throw std::runtime_error("write failed for " + opt.output.string());

  if (opt.annotate_dir) {
    fs::create_directories(*opt.annotate_dir);
    for (std::size_t i = 0; i < ds.data.scenes.size(); ++i) {
      cv::Mat canvas;
      cv::cvtColor(ds.data.scenes[i].image, canvas, cv::COLOR_RGB2BGR);
      for (const auto& bank : banks) {
        std::vector<Detection> mine;
        for (const auto& r : records)
          if (r.image_id == ds.image_ids[i] && r.det.object_id == bank.object_id) mine.push_back(r.det);
        if (const auto top = select_top_per_object(mine)) {
          const cv::Point a(static_cast<int>(top->bbox.x_min), static_cast<int>(top->bbox.y_min));
          const cv::Point b(static_cast<int>(top->bbox.x_max), static_cast<int>(top->bbox.y_max));
          cv::rectangle(canvas, a, b, cv::Scalar(0, 255, 0), 2);
          std::ostringstream label;
          label << bank.object_id << " " << std::fixed << std::setprecision(2) << top->score;
          cv::putText(canvas, label.str(), a + cv::Point(2, 12), cv::FONT_HERSHEY_SIMPLEX, 0.4,
                      cv::Scalar(0, 255, 0), 1);
        }
      }
      const auto p = *opt.annotate_dir / (ds.image_ids[i] + ".png");
      if (!cv::imwrite(p.string(), canvas)) throw std::runtime_error("cannot write " + p.string());
    }
  }
  return records;
}

EvaluateResult evaluate_records(const RunConfig& cfg, const LoadedDataset& ds, const std::vector<DetectionRecord>& preds,
                                const std::vector<std::string>& objects) {
  const std::set<std::string> object_set(objects.begin(), objects.end());
  std::map<std::string, std::map<std::string, std::vector<BBox>>> gts;
  std::map<std::string, std::map<std::string, std::vector<Detection>>> by_image;  // object -> image -> dets
  for (const auto& p : preds) {
    if (!object_set.count(p.det.object_id))
      throw ConfigError("prediction for object '" + p.det.object_id + "' outside the evaluated set");
    by_image[p.det.object_id][p.image_id].push_back(p.det);
  }

  std::map<std::string, std::vector<EvalRecord>> records;
  for (std::size_t i = 0; i < ds.data.scenes.size(); ++i)
    for (const auto& o : ds.data.scenes[i].objects) {
      if (!object_set.count(o.object_id) || !o.box) continue;
      gts[o.object_id][ds.image_ids[i]].push_back(*o.box);
      EvalRecord r{ds.image_ids[i], o.object_id, {}, {*o.box}};
      r.prediction = select_top_per_object(by_image[o.object_id][ds.image_ids[i]]);
      records[o.object_id].push_back(std::move(r));
    }

  std::vector<ReportRow> rows;
  for (const auto& id : objects)
    if (records.count(id)) rows.push_back({id, bbox2d_metric(records[id], cfg.evaluate.iou_threshold)});
  EvaluateResult res;
  res.bbox2d = per_object_report("bbox2d", rows);
  res.map = map_protocol(preds, gts, object_set, cfg.evaluate.iou_threshold, cfg.evaluate.nms_threshold,
                         cfg.interpolation());
  return res;
}

EvaluateResult cmd_evaluate(const RunConfig& cfg, const EvaluateOptions& opt) {
  const auto ds = load_dataset(opt.dataset);
  std::ifstream is(opt.predictions);
  if (!is) throw std::runtime_error("cannot read predictions " + opt.predictions.string());
  const auto preds = read_detection_records(is);
  const auto& objects = or_test_objects(opt.objects, cfg);
  auto res = evaluate_records(cfg, ds, preds, objects);

  fs::create_directories(opt.out_dir);
  const std::string header = "# config_hash=" + config_hash(cfg) + "\n";
  write_text(opt.out_dir / "bbox2d.txt", header + report_to_text(res.bbox2d));
  write_text(opt.out_dir / "bbox2d.csv", report_to_csv(res.bbox2d));
  write_text(opt.out_dir / "bbox2d.json", report_to_json(res.bbox2d));
  std::vector<ReportRow> ap_rows;
  for (const auto& [id, ap] : res.map.per_object_ap) ap_rows.push_back({id, ap * 100.0});
  const auto map_report = per_object_report("AP", ap_rows);
  write_text(opt.out_dir / "map.txt", header + report_to_text(map_report));
  write_text(opt.out_dir / "map.csv", report_to_csv(map_report));
  write_text(opt.out_dir / "map.json", report_to_json(map_report));
  for (const auto& [id, curve] : res.map.curves) {
    std::ostringstream csv;
    csv << "recall,precision\n" << std::setprecision(9);
    for (std::size_t k = 0; k < curve.recall.size(); ++k) csv << curve.recall[k] << "," << curve.precision[k] << "\n";
    write_text(opt.out_dir / ("pr_" + id + ".csv"), csv.str());
  }
  write_text(opt.out_dir / "summary.json",
             json{{"config_hash", config_hash(cfg)}, {"bbox2d_mean", res.bbox2d.mean}, {"map", res.map.map * 100.0}}
                     .dump(2) +
                 "\n");
  return res;
}

int cmd_render_templates(const RunConfig& cfg, const std::string& object_id, const fs::path& out_dir) {
  const auto model = cfg.catalog({object_id}).front();
  const auto settings = cfg.template_settings();
  RasterRenderer renderer;
  fs::create_directories(out_dir / "global");
  fs::create_directories(out_dir / "local");
  int count = 0;
  char name[32];
  const auto globals = global_template_poses(1.0);
  for (std::size_t i = 0; i < globals.size(); ++i, ++count) {
    std::snprintf(name, sizeof name, "%03zu.png", i);
    save_template(render_template(renderer, model, globals[i], settings), out_dir / "global" / name);
  }
  const auto locals = local_template_poses_test(cfg.templates.n_inplane);
  for (std::size_t i = 0; i < locals.size(); ++i, ++count) {
    std::snprintf(name, sizeof name, "%03zu.png", i);
    save_template(render_template(renderer, model, locals[i], settings), out_dir / "local" / name);
  }
  std::ofstream provenance(out_dir / "provenance.txt");
  log_config(cfg, provenance);
  return count;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const AblateOptions& opt) {
  torch::set_num_threads(cfg.threads);
  auto net = load_net(opt.checkpoint, cfg);
  const auto eval_ds = load_dataset(opt.eval_dataset);
  const auto& objects = cfg.test_objects;
  std::vector<AblationRow> rows;

  auto bbox2d_of = [&](InstanceNet& model, int n_inplane, double* seconds) {
    torch::NoGradGuard ng;
    model->eval();
    auto banks = build_banks(cfg, objects, model, n_inplane);
    double best = std::numeric_limits<double>::infinity();
    std::vector<DetectionRecord> recs;
    for (int r = 0; r < std::max(1, cfg.ablation.timing_repeats); ++r) {
      double s = 0.0;
      recs = detect_all(eval_ds, banks, model, cfg.detect, &s);
      best = std::min(best, s);
    }
    if (seconds) *seconds = best;
    return evaluate_records(cfg, eval_ds, recs, objects).bbox2d.mean;
  };

  // Template count at inference time, same trained model.
  for (int n : cfg.ablation.inplane_counts) {
    double s = 0.0;
    AblationRow row{"templates", std::to_string(16 * n), bbox2d_of(net, n, &s), 0.0, {}};
    row.runtime_ms = 1000.0 * s / static_cast<double>(eval_ds.data.scenes.size() * objects.size());
    rows.push_back(row);
  }

  // Retraining sweeps share the budget and seed; only the varied knob differs.
  const bool retrain = cfg.ablation.retrain_iterations > 0 && !opt.train_dataset.empty();
  std::optional<LoadedDataset> train_ds;
  if (retrain) train_ds = load_dataset(opt.train_dataset);
  auto retrained = [&](TrainConfig tc, const NetworkConfig& nc, const std::string& tag) {
    tc.seed = cfg.seed;
    tc.max_iterations = cfg.ablation.retrain_iterations;
    Trainer trainer(tc, nc, train_ds->data, cfg.catalog(cfg.train_objects));
    trainer.run(opt.out_dir / "retrain" / tag);
    return bbox2d_of(trainer.net(), cfg.templates.n_inplane, nullptr);
  };
  if (retrain) {
    for (double deg : cfg.ablation.perturbations_deg) {
      TrainConfig tc = cfg.train;
      tc.perturbation.max_angle_deg = deg;
      std::ostringstream label;
      label << (deg == 0.0 ? "" : "±") << deg << "°";
      rows.push_back({"perturbation", label.str(), retrained(tc, cfg.network, "perturb_" + std::to_string(int(deg))),
                      0.0, {}});
    }
    if (cfg.ablation.branch_variants) {
      const std::vector<std::pair<std::string, NetworkConfig>> variants = [&] {
        NetworkConfig full = cfg.network, no_oab = full, no_e3 = full, no_aux = full;
        no_oab.use_oab = false;
        no_e3.use_e3 = false;
        no_aux.aux_tasks = false;
        return std::vector<std::pair<std::string, NetworkConfig>>{
            {"full", full}, {"no OAB", no_oab}, {"no e3", no_e3}, {"no aux", no_aux}};
      }();
      for (const auto& [name, nc] : variants) {
        std::string tag = name;
        std::replace(tag.begin(), tag.end(), ' ', '_');
        rows.push_back({"branches", name, retrained(cfg.train, nc, tag), 0.0, {}});
      }
    }
  }

  // Deltas against the reference row of each sweep: 160 templates, ±20°, full model.
  const std::map<std::string, std::string> reference = {
      {"templates", "160"}, {"perturbation", "±20°"}, {"branches", "full"}};
  for (auto& r : rows) {
    double ref = r.metric;
    for (const auto& o : rows)
      if (o.sweep == r.sweep && o.setting == reference.at(r.sweep)) ref = o.metric;
    r.delta = r.metric - ref;
  }

  fs::create_directories(opt.out_dir);
  write_text(opt.out_dir / "ablation.txt", "# config_hash=" + config_hash(cfg) + "\n" + ablation_table(rows));
  json j = json::array();
  for (const auto& r : rows) {
    json row = {{"sweep", r.sweep}, {"setting", r.setting}, {"bbox2d", r.metric}, {"delta", r.delta}};
    if (r.runtime_ms) row["runtime_ms"] = *r.runtime_ms;
    j.push_back(row);
  }
  write_text(opt.out_dir / "ablation.json", j.dump(2) + "\n");
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  std::string sweep;
  for (const auto& r : rows) {
    if (r.sweep != sweep) {
      sweep = r.sweep;
      os << "\n[" << sweep << "]\n"
         << std::left << std::setw(12) << "setting" << std::right << std::setw(10) << "bbox2d" << std::setw(10)
         << "delta";
      if (r.runtime_ms) os << std::setw(14) << "runtime_ms";
      os << "\n";
    }
    os << std::left << std::setw(12) << r.setting << std::right << std::setw(10) << r.metric << std::setw(10)
       << std::showpos << r.delta << std::noshowpos;
    if (r.runtime_ms) os << std::setw(14) << *r.runtime_ms;
    os << "\n";
  }
  return os.str();
}

}  // namespace instdet
