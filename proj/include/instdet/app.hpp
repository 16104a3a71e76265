#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "instdet/config.hpp"
#include "instdet/evalkit.hpp"
#include "instdet/train.hpp"

namespace instdet {

namespace fs = std::filesystem;

/// <root>/<YYYYmmdd-HHMMSS>_<config hash>, created, with the resolved config written inside.
fs::path make_run_dir(const RunConfig& cfg, const fs::path& root);

/// Writes the resolved config and seed as one JSON line prefixed with `# `.
void log_config(const RunConfig& cfg, std::ostream& os);

/// Style of scene `index`, drawn from its own derived stream.
SceneStyle scene_style_for(std::uint64_t seed, int index, double tabletop_ratio);

/// Distinct catalog indices for one scene: a uniform count in [min_objects, max_objects]
/// (capped at the catalog size) sampled without replacement, in ascending order.
std::vector<int> pick_scene_objects(int catalog_size, const SceneConfig& cfg, std::mt19937_64& rng);

struct LoadedDataset {
  Dataset data;
  std::vector<std::string> image_ids;  // scene directory names
  std::string config_hash;
};

// Layout: <dir>/manifest.json and <dir>/scenes/<NNNNN>/ per scene. Scene i is generated
// from derive_seed(seed, i), so the output does not depend on the worker count.
void cmd_make_dataset(const RunConfig& cfg, const fs::path& out_dir);
LoadedDataset load_dataset(const fs::path& dir, int min_visible_pixels = 50);

TrainResult cmd_train(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& run_dir,
                      const std::optional<fs::path>& resume = {});

struct DetectOptions {
  fs::path checkpoint;
  fs::path dataset;
  fs::path output;                        // prediction file
  std::vector<std::string> objects;       // empty: the config's test objects
  std::optional<fs::path> annotate_dir;   // PNGs with the top box per object drawn
};

/// Runs every object's bank on every dataset image and writes all surviving detections.
std::vector<DetectionRecord> cmd_detect(const RunConfig& cfg, const DetectOptions& opt);

struct EvaluateOptions {
  fs::path dataset;
  fs::path predictions;
  fs::path out_dir;
  std::vector<std::string> objects;  // empty: the config's test objects
};

struct EvaluateResult {
  Report bbox2d;
  MapResult map;
};

/// bbox2d over the top prediction per (image, present object); mAP over pooled predictions.
EvaluateResult evaluate_records(const RunConfig& cfg, const LoadedDataset& ds, const std::vector<DetectionRecord>& preds,
                                const std::vector<std::string>& objects);
EvaluateResult cmd_evaluate(const RunConfig& cfg, const EvaluateOptions& opt);

/// 240 global templates and 16 * n_inplane local ones as PNG + JSON pairs. Returns the PNG count.
int cmd_render_templates(const RunConfig& cfg, const std::string& object_id, const fs::path& out_dir);

struct AblateOptions {
  fs::path checkpoint;
  fs::path train_dataset;  // used for the retraining sweeps
  fs::path eval_dataset;
  fs::path out_dir;
};

struct AblationRow {
  std::string sweep;    // templates | perturbation | branches
  std::string setting;  // e.g. "160", "±20°", "no OAB"
  double metric = 0.0;  // bbox2d, percent
  double delta = 0.0;   // against the sweep's reference row
  std::optional<double> runtime_ms;  // per image, template sweep only
};

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const AblateOptions& opt);
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace instdet
