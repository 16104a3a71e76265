// Command-line front end. Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <CLI11.hpp>
#include <iostream>

#include "instdet/app.hpp"
#include "instdet/errors.hpp"

using namespace instdet;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;

  RunConfig load() const {
    RunConfig cfg = load_run_config(config);
    if (seed) cfg.seed = *seed;
    log_config(cfg, std::clog);
    return cfg;
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "YAML run configuration")->required();
  sub->add_option("--seed", c.seed, "override the configured seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Template-based detection of object instances unseen during training"};
  app.require_subcommand(1);

  Common mk_c;
  std::string mk_out, mk_objects;
  std::optional<int> mk_n;
  auto* mk = app.add_subcommand("make-dataset", "Generate a synthetic scene dataset");
  add_common(mk, mk_c);
  mk->add_option("-o,--out", mk_out, "dataset directory")->required();
  mk->add_option("-n,--num-scenes", mk_n, "override dataset.num_scenes");
  mk->add_option("--objects", mk_objects, "catalog split to place in scenes")->check(CLI::IsMember({"train", "test"}));

  Common tr_c;
  std::string tr_data, tr_run, tr_resume;
  std::optional<long> tr_iters;
  auto* tr = app.add_subcommand("train", "Train the network on a generated dataset");
  add_common(tr, tr_c);
  tr->add_option("-d,--dataset", tr_data, "dataset directory")->required();
  tr->add_option("--run-dir", tr_run, "output directory (default: <output_root>/<time>_<hash>)");
  tr->add_option("--resume", tr_resume, "checkpoint with optimizer state to continue from");
  tr->add_option("--max-iterations", tr_iters, "stop after this many iterations");

  Common de_c;
  DetectOptions de_o;
  std::string de_annotate;
  auto* de = app.add_subcommand("detect", "Detect the test objects in every dataset image");
  add_common(de, de_c);
  de->add_option("-m,--checkpoint", de_o.checkpoint, "trained checkpoint")->required();
  de->add_option("-d,--dataset", de_o.dataset, "dataset directory")->required();
  de->add_option("-o,--out", de_o.output, "prediction file")->required();
  de->add_option("--objects", de_o.objects, "object ids (default: test_objects)");
  de->add_option("--annotate", de_annotate, "directory for images with the top boxes drawn");

  Common ev_c;
  EvaluateOptions ev_o;
  auto* ev = app.add_subcommand("evaluate", "Score a prediction file against dataset ground truth");
  add_common(ev, ev_c);
  ev->add_option("-d,--dataset", ev_o.dataset, "dataset directory")->required();
  ev->add_option("-p,--predictions", ev_o.predictions, "prediction file")->required();
  ev->add_option("-o,--out", ev_o.out_dir, "report directory")->required();
  ev->add_option("--objects", ev_o.objects, "object ids (default: test_objects)");

  Common rt_c;
  std::string rt_object, rt_out;
  auto* rt = app.add_subcommand("render-templates", "Render the global and local template banks of an object");
  add_common(rt, rt_c);
  rt->add_option("--object", rt_object, "catalog object id")->required();
  rt->add_option("-o,--out", rt_out, "output directory")->required();

  Common ab_c;
  AblateOptions ab_o;
  auto* ab = app.add_subcommand("ablate", "Template-count, perturbation and branch sweeps");
  add_common(ab, ab_c);
  ab->add_option("-m,--checkpoint", ab_o.checkpoint, "trained checkpoint")->required();
  ab->add_option("--eval-dataset", ab_o.eval_dataset, "dataset of test objects")->required();
  ab->add_option("--train-dataset", ab_o.train_dataset, "dataset for the retraining sweeps");
  ab->add_option("-o,--out", ab_o.out_dir, "report directory (default: a new run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*mk) {
      auto cfg = mk_c.load();
      if (mk_n) cfg.dataset.num_scenes = *mk_n;
      if (!mk_objects.empty()) cfg.dataset.objects = mk_objects;
      cfg.validate();
      cmd_make_dataset(cfg, mk_out);
      std::cout << "wrote " << cfg.dataset.num_scenes << " scenes to " << mk_out << "\n";
    } else if (*tr) {
      auto cfg = tr_c.load();
      if (tr_iters) cfg.train.max_iterations = *tr_iters;
      const fs::path run = tr_run.empty() ? make_run_dir(cfg, cfg.output_root) : fs::path(tr_run);
      std::optional<fs::path> resume;
      if (!tr_resume.empty()) resume = tr_resume;
      const auto r = cmd_train(cfg, tr_data, run, resume);
      std::cout << "iterations " << r.iterations << ", loss " << r.initial_eval_loss << " -> " << r.final_eval_loss
                << ", best validation " << r.best_val_loss << "\nbest checkpoint " << r.best_checkpoint.string()
                << "\n";
    } else if (*de) {
      const auto cfg = de_c.load();
      if (!de_annotate.empty()) de_o.annotate_dir = de_annotate;
      const auto recs = cmd_detect(cfg, de_o);
      std::cout << "wrote " << recs.size() << " detections to " << de_o.output.string() << "\n";
    } else if (*ev) {
      const auto cfg = ev_c.load();
      const auto r = cmd_evaluate(cfg, ev_o);
      std::cout << report_to_text(r.bbox2d) << "mAP " << r.map.map * 100.0 << "\n";
    } else if (*rt) {
      const auto cfg = rt_c.load();
      std::cout << "wrote " << cmd_render_templates(cfg, rt_object, rt_out) << " templates to " << rt_out << "\n";
    } else if (*ab) {
      const auto cfg = ab_c.load();
      if (ab_o.out_dir.empty()) ab_o.out_dir = make_run_dir(cfg, cfg.output_root);
      std::cout << ablation_table(cmd_ablate(cfg, ab_o));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
