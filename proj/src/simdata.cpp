#include "instdet/simdata.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "instdet/errors.hpp"
#include "instdet/viewsphere.hpp"

namespace fs = std::filesystem;

namespace instdet {

namespace {

constexpr double kPi = std::numbers::pi;

double deg2rad(double d) { return d * kPi / 180.0; }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool bernoulli(std::mt19937_64& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

// One of the six axis-aligned "face down" orientations followed by a yaw.
Eigen::Matrix3d resting_rotation(std::mt19937_64& rng, bool upright) {
  Eigen::Matrix3d base = Eigen::Matrix3d::Identity();
  if (!upright) {
    const int face = std::uniform_int_distribution<int>(0, 5)(rng);
    switch (face) {
      case 1: base = Eigen::AngleAxisd(kPi, Eigen::Vector3d::UnitX()).toRotationMatrix(); break;
      case 2: base = Eigen::AngleAxisd(kPi / 2, Eigen::Vector3d::UnitX()).toRotationMatrix(); break;
      case 3: base = Eigen::AngleAxisd(-kPi / 2, Eigen::Vector3d::UnitX()).toRotationMatrix(); break;
      case 4: base = Eigen::AngleAxisd(kPi / 2, Eigen::Vector3d::UnitY()).toRotationMatrix(); break;
      case 5: base = Eigen::AngleAxisd(-kPi / 2, Eigen::Vector3d::UnitY()).toRotationMatrix(); break;
      default: break;
    }
  }
  const double yaw = uniform(rng, 0.0, 2.0 * kPi);
  return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix() * base;
}

Lighting random_lighting(std::mt19937_64& rng, const SceneConfig& cfg) {
  Lighting l;
  // Mostly from above the camera, towards the viewer.
  l.direction = Eigen::Vector3d(uniform(rng, -0.6, 0.6), uniform(rng, -1.0, -0.3), uniform(rng, -1.0, -0.3)).normalized();
  const double intensity = uniform(rng, cfg.light_intensity_min, cfg.light_intensity_max);
  for (int c = 0; c < 3; ++c)
    l.tint[c] = static_cast<float>(intensity * (1.0 + uniform(rng, -cfg.light_color_jitter, cfg.light_color_jitter)));
  return l;
}

cv::Mat load_background(const SceneConfig& cfg, std::mt19937_64& rng) {
  if (cfg.background_dir.empty()) return procedural_background(cfg.width, cfg.height, rng);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(cfg.background_dir)) {
    const auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  if (files.empty()) throw GenerationError("no background images in " + cfg.background_dir);
  std::sort(files.begin(), files.end());
  const auto& pick = files[std::uniform_int_distribution<std::size_t>(0, files.size() - 1)(rng)];
  cv::Mat bgr = cv::imread(pick.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw GenerationError("cannot read background " + pick.string());
  cv::Mat rgb, resized, f;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::resize(rgb, resized, cv::Size(cfg.width, cfg.height), 0, 0, cv::INTER_AREA);
  resized.convertTo(f, CV_32FC3, 1.0 / 255.0);
  return f;
}

cv::Mat to_u8(const cv::Mat& rgb_f) {
  cv::Mat out;
  rgb_f.convertTo(out, CV_8UC3, 255.0);
  return out;
}

cv::Mat to_f32(const cv::Mat& rgb_u8) {
  cv::Mat out;
  rgb_u8.convertTo(out, CV_32FC3, 1.0 / 255.0);
  return out;
}

void fill_labels(SceneSample& s, const RenderOutput& out) {
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    auto& o = s.objects[i];
    o.visibility = out.mask_of(static_cast<int>(i));
    o.box = mask_box(o.visibility);
    o.projected_center = s.intrinsics.project(o.translation);
  }
}

}  // namespace

std::string to_string(SceneStyle s) { return s == SceneStyle::tabletop ? "tabletop" : "composite"; }

SceneStyle scene_style_from_string(const std::string& s) {
  if (s == "tabletop") return SceneStyle::tabletop;
  if (s == "composite") return SceneStyle::composite;
  throw std::invalid_argument("unknown scene style '" + s + "'");
}

int SceneObject::visible_pixels() const { return visibility.empty() ? 0 : cv::countNonZero(visibility); }

std::optional<BBox> mask_box(const cv::Mat& mask) {
  std::vector<cv::Point> pts;
  cv::findNonZero(mask, pts);
  if (pts.empty()) return std::nullopt;
  const cv::Rect r = cv::boundingRect(pts);
  return BBox{static_cast<double>(r.x), static_cast<double>(r.y), static_cast<double>(r.x + r.width),
              static_cast<double>(r.y + r.height)};
}

HeatmapGT make_center_heatmap(const Eigen::Vector2d& center_px, int out_height, int out_width, double down_factor,
                              double variance) {
  if (out_height <= 0 || out_width <= 0) throw std::invalid_argument("make_center_heatmap: empty output shape");
  if (!(down_factor > 0.0) || !(variance > 0.0)) throw std::invalid_argument("make_center_heatmap: bad scale");
  HeatmapGT hm{out_height, out_width, std::vector<double>(static_cast<std::size_t>(out_height) * out_width, 0.0)};
  const double cx = center_px.x() / down_factor - 0.5;
  const double cy = center_px.y() / down_factor - 0.5;
  if (!std::isfinite(cx) || !std::isfinite(cy)) return hm;
  for (int r = 0; r < out_height; ++r)
    for (int c = 0; c < out_width; ++c) {
      const double d2 = (c - cx) * (c - cx) + (r - cy) * (r - cy);
      hm.values[static_cast<std::size_t>(r) * out_width + c] = std::exp(-d2 / (2.0 * variance));
    }
  return hm;
}

cv::Mat procedural_background(int width, int height, std::mt19937_64& rng) {
  // Sum of a few octaves of smooth random colour fields.
  cv::Mat acc(height, width, CV_32FC3, cv::Scalar::all(0));
  float weight_sum = 0.0f;
  for (int octave = 0; octave < 3; ++octave) {
    const int cells = 3 << (octave * 2);
    cv::Mat coarse(std::max(2, cells * height / std::max(width, height)), std::max(2, cells * width / std::max(width, height)),
                   CV_32FC3);
    for (int y = 0; y < coarse.rows; ++y)
      for (int x = 0; x < coarse.cols; ++x)
        coarse.at<cv::Vec3f>(y, x) = cv::Vec3f(static_cast<float>(uniform(rng, 0, 1)),
                                               static_cast<float>(uniform(rng, 0, 1)),
                                               static_cast<float>(uniform(rng, 0, 1)));
    cv::Mat up;
    cv::resize(coarse, up, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    const float w = 1.0f / static_cast<float>(1 << octave);
    acc += up * w;
    weight_sum += w;
  }
  acc /= weight_sum;
  return acc;
}

SceneSample generate_scene(std::span<const ObjectModel> objects, std::mt19937_64& rng, SceneStyle style,
                           const SceneConfig& cfg, Renderer& renderer) {
  if (objects.empty()) throw std::invalid_argument("generate_scene: need at least one object");
  SceneSample s;
  s.style = style;
  s.intrinsics = Intrinsics::centered(cfg.focal, cfg.width, cfg.height);

  std::vector<RenderItem> items;
  ObjectModel table;

  if (style == SceneStyle::tabletop) {
    const bool upright = bernoulli(rng, cfg.upright_bias);
    struct Placed {
      Eigen::Matrix3d r;
      Eigen::Vector3d t;
      double radius;
    };
    std::vector<Placed> placed;
    int rejections = 0;
    for (const auto& model : objects) {
      for (;;) {
        const Eigen::Matrix3d r = resting_rotation(rng, upright);
        double min_z = 1e300, radius = 0.0;
        for (const auto& v : model.mesh.vertices) {
          const Eigen::Vector3d p = r * v;
          min_z = std::min(min_z, p.z());
          radius = std::max(radius, p.head<2>().norm());
        }
        const Eigen::Vector3d t(uniform(rng, -cfg.table_half_extent, cfg.table_half_extent),
                                uniform(rng, -cfg.table_half_extent, cfg.table_half_extent), -min_z);
        const bool clash = std::any_of(placed.begin(), placed.end(), [&](const Placed& p) {
          return (p.t.head<2>() - t.head<2>()).norm() < p.radius + radius;
        });
        if (!clash) {
          placed.push_back({r, t, radius});
          break;
        }
        if (++rejections > cfg.max_rejections)
          throw GenerationError("generate_scene: placement failed after " + std::to_string(cfg.max_rejections) +
                                " rejections");
      }
    }

    const double radius = uniform(rng, cfg.camera_radius_min, cfg.camera_radius_max);
    const double el = deg2rad(uniform(rng, cfg.elevation_min_deg, cfg.elevation_max_deg));
    const double az = uniform(rng, 0.0, 2.0 * kPi);
    const Eigen::Vector3d cam_pos = radius * Eigen::Vector3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                                                             std::sin(el));
    const double off = deg2rad(cfg.camera_offset_deg);
    const Eigen::Matrix3d offset = (Eigen::AngleAxisd(uniform(rng, -off, off), Eigen::Vector3d::UnitX()) *
                                    Eigen::AngleAxisd(uniform(rng, -off, off), Eigen::Vector3d::UnitY()) *
                                    Eigen::AngleAxisd(uniform(rng, -off, off), Eigen::Vector3d::UnitZ()))
                                       .toRotationMatrix();
    const Eigen::Matrix3d world_to_cam = offset * look_at_rotation(cam_pos.normalized());
    const Eigen::Vector3d cam_t = -world_to_cam * cam_pos;
    s.camera_distance = cam_pos.norm();

    for (std::size_t i = 0; i < objects.size(); ++i) {
      SceneObject o;
      o.object_id = objects[i].id;
      o.rotation = world_to_cam * placed[i].r;
      o.translation = world_to_cam * placed[i].t + cam_t;
      s.objects.push_back(std::move(o));
    }

    const Eigen::Vector3f top(static_cast<float>(uniform(rng, 0.2, 0.9)), static_cast<float>(uniform(rng, 0.2, 0.9)),
                              static_cast<float>(uniform(rng, 0.2, 0.9)));
    const double side = 2.0 * cfg.table_half_extent + 0.6;
    table = make_cuboid("__table__", {side, side, 0.04}, {top, top, top, top, top, top}, uniform(rng, 0.05, 0.2));
    items.push_back({&table, world_to_cam, world_to_cam * Eigen::Vector3d(0, 0, -0.02) + cam_t, -2});
  } else {
    for (const auto& model : objects) {
      SceneObject o;
      o.object_id = model.id;
      o.rotation = random_rotation(rng);
      const double z = uniform(rng, cfg.composite_depth_min, cfg.composite_depth_max);
      const double u = uniform(rng, 0.1 * cfg.width, 0.9 * cfg.width);
      const double v = uniform(rng, 0.1 * cfg.height, 0.9 * cfg.height);
      o.translation = {(u - s.intrinsics.cx) / s.intrinsics.fx * z, (v - s.intrinsics.cy) / s.intrinsics.fy * z, z};
      s.objects.push_back(std::move(o));
    }
  }

  for (std::size_t i = 0; i < objects.size(); ++i)
    items.push_back({&objects[i], s.objects[i].rotation, s.objects[i].translation, static_cast<int>(i)});

  const Lighting lighting = random_lighting(rng, cfg);
  const cv::Mat background = load_background(cfg, rng);
  const RenderOutput out = renderer.render(items, s.intrinsics, lighting, background);
  s.image = to_u8(out.rgb);
  fill_labels(s, out);
  return s;
}

AugmentationConfig AugmentationConfig::disabled() {
  AugmentationConfig c;
  c.object_hsv_prob = c.brightness_prob = c.gaussian_blur_prob = c.noise_prob = 0.0;
  c.hflip_prob = c.vflip_prob = c.affine_prob = c.global_hue_prob = c.motion_blur_prob = 0.0;
  return c;
}

bool AugmentationConfig::valid() const {
  for (double p : {object_hsv_prob, brightness_prob, gaussian_blur_prob, noise_prob, hflip_prob, vflip_prob,
                   affine_prob, global_hue_prob, motion_blur_prob})
    if (!(p >= 0.0 && p <= 1.0)) return false;
  return scale_min > 0.0 && scale_min <= scale_max && motion_blur_max_len >= 1;
}

namespace {

struct HsvJitter {
  double hue = 0.0;
  double sat = 1.0;
  double val = 1.0;
};

HsvJitter draw_jitter(const AugmentationConfig& cfg, std::mt19937_64& rng) {
  return {uniform(rng, -cfg.hue_shift_deg, cfg.hue_shift_deg),
          1.0 + uniform(rng, -cfg.saturation_jitter, cfg.saturation_jitter),
          1.0 + uniform(rng, -cfg.value_jitter, cfg.value_jitter)};
}

// Applies the jitter to an RGB float image where mask != 0 (everywhere if mask is empty).
void apply_hsv(cv::Mat& rgb_f, const cv::Mat& mask, const HsvJitter& j) {
  cv::Mat hsv;
  cv::cvtColor(rgb_f, hsv, cv::COLOR_RGB2HSV);
  for (int y = 0; y < hsv.rows; ++y)
    for (int x = 0; x < hsv.cols; ++x) {
      if (!mask.empty() && !mask.at<uchar>(y, x)) continue;
      auto& p = hsv.at<cv::Vec3f>(y, x);
      p[0] = static_cast<float>(std::fmod(p[0] + j.hue + 360.0, 360.0));
      p[1] = static_cast<float>(std::clamp(p[1] * j.sat, 0.0, 1.0));
      p[2] = static_cast<float>(std::clamp(p[2] * j.val, 0.0, 1.0));
    }
  cv::Mat back;
  cv::cvtColor(hsv, back, cv::COLOR_HSV2RGB);
  if (mask.empty()) {
    rgb_f = back;
  } else {
    back.copyTo(rgb_f, mask);
  }
}

void apply_to_template(Template& t, const HsvJitter& j) {
  cv::Mat f = to_f32(t.rgb);
  apply_hsv(f, t.mask, j);
  cv::Mat u8 = to_u8(f);
  t.rgb = cv::Mat(u8.size(), CV_8UC3, cv::Scalar::all(0));
  u8.copyTo(t.rgb, t.mask);
}

}  // namespace

Augmented augment(const SceneSample& sample, int target_index, std::span<const Template> templates,
                  const AugmentationConfig& cfg, std::mt19937_64& rng) {
  if (target_index < 0 || target_index >= static_cast<int>(sample.objects.size()))
    throw std::out_of_range("augment: target index out of range");
  if (!cfg.valid()) throw std::invalid_argument("augment: invalid augmentation config");

  Augmented out;
  out.sample = sample;
  out.sample.image = sample.image.clone();
  for (auto& o : out.sample.objects) o.visibility = o.visibility.clone();
  for (const auto& t : templates) {
    Template c = t;
    c.rgb = t.rgb.clone();
    c.mask = t.mask.clone();
    out.templates.push_back(std::move(c));
  }
  auto& trace = out.trace;
  SceneSample& s = out.sample;
  const int W = s.image.cols, H = s.image.rows;

  // Every decision is drawn up front so the random stream does not depend on image content.
  trace.object_jitter = bernoulli(rng, cfg.object_hsv_prob);
  const HsvJitter obj_jitter = draw_jitter(cfg, rng);
  std::vector<HsvJitter> tmpl_jitter;
  for (std::size_t i = 0; i < templates.size(); ++i) tmpl_jitter.push_back(draw_jitter(cfg, rng));
  trace.global_hue = bernoulli(rng, cfg.global_hue_prob);
  const HsvJitter global{uniform(rng, 0.0, 360.0), 1.0, 1.0};
  trace.hflip = bernoulli(rng, cfg.hflip_prob);
  trace.vflip = bernoulli(rng, cfg.vflip_prob);
  trace.affine = bernoulli(rng, cfg.affine_prob);
  const double scale = uniform(rng, cfg.scale_min, cfg.scale_max);
  const double tx = uniform(rng, -cfg.max_translate, cfg.max_translate) * W;
  const double ty = uniform(rng, -cfg.max_translate, cfg.max_translate) * H;
  trace.brightness = bernoulli(rng, cfg.brightness_prob);
  const double brightness = uniform(rng, -cfg.brightness_delta, cfg.brightness_delta);
  trace.gaussian_blur = bernoulli(rng, cfg.gaussian_blur_prob);
  const double sigma = uniform(rng, 0.3, std::max(0.3, cfg.gaussian_blur_sigma_max));
  trace.noise = bernoulli(rng, cfg.noise_prob);
  const std::uint64_t noise_seed = rng();
  trace.motion_blur = bernoulli(rng, cfg.motion_blur_prob);
  const int blur_len = std::uniform_int_distribution<int>(std::min(3, cfg.motion_blur_max_len), cfg.motion_blur_max_len)(rng);
  const double blur_angle = uniform(rng, 0.0, 180.0);

  const bool photometric = trace.object_jitter || trace.global_hue || trace.brightness || trace.gaussian_blur ||
                           trace.noise || trace.motion_blur || trace.affine;
  cv::Mat img = photometric ? to_f32(s.image) : cv::Mat();

  if (trace.object_jitter) {
    apply_hsv(img, s.objects[target_index].visibility, obj_jitter);
    for (std::size_t i = 0; i < out.templates.size(); ++i) apply_to_template(out.templates[i], tmpl_jitter[i]);
  }
  if (trace.global_hue) {
    apply_hsv(img, cv::Mat(), global);
    for (auto& t : out.templates) apply_to_template(t, global);
  }

  auto flip = [&](int code) {
    if (!img.empty()) cv::flip(img, img, code);
    else cv::flip(s.image, s.image, code);
    for (auto& o : s.objects) {
      cv::flip(o.visibility, o.visibility, code);
      if (code > 0 || code < 0) o.projected_center.x() = W - o.projected_center.x();
      if (code == 0 || code < 0) o.projected_center.y() = H - o.projected_center.y();
    }
  };
  if (trace.hflip) flip(1);
  if (trace.vflip) flip(0);
  if (trace.affine) {
    const double cx = 0.5 * W, cy = 0.5 * H;
    cv::Mat m = (cv::Mat_<double>(2, 3) << scale, 0, (1 - scale) * cx + tx, 0, scale, (1 - scale) * cy + ty);
    cv::warpAffine(img, img, m, img.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar::all(0));
    for (auto& o : s.objects) {
      cv::warpAffine(o.visibility, o.visibility, m, o.visibility.size(), cv::INTER_NEAREST, cv::BORDER_CONSTANT,
                     cv::Scalar(0));
      o.projected_center = {scale * (o.projected_center.x() - cx) + cx + tx,
                            scale * (o.projected_center.y() - cy) + cy + ty};
    }
  }
  if (trace.hflip || trace.vflip || trace.affine)
    for (auto& o : s.objects) o.box = mask_box(o.visibility);

  if (trace.brightness) img += cv::Scalar::all(brightness);
  if (trace.gaussian_blur) cv::GaussianBlur(img, img, cv::Size(0, 0), sigma);
  if (trace.noise) {
    cv::Mat noise(img.size(), CV_32FC3);
    cv::RNG cvrng(noise_seed);
    cvrng.fill(noise, cv::RNG::NORMAL, cv::Scalar::all(0), cv::Scalar::all(cfg.noise_std));
    img += noise;
  }
  if (trace.motion_blur) {
    const int k = blur_len | 1;
    cv::Mat kernel(k, k, CV_32F, cv::Scalar(0));
    const double a = deg2rad(blur_angle);
    const double c = (k - 1) / 2.0;
    for (int i = 0; i < k; ++i) {
      const double t = i - c;
      const int x = static_cast<int>(std::lround(c + t * std::cos(a)));
      const int y = static_cast<int>(std::lround(c + t * std::sin(a)));
      kernel.at<float>(y, x) = 1.0f;
    }
    kernel /= cv::sum(kernel)[0];
    cv::filter2D(img, img, -1, kernel, cv::Point(-1, -1), 0, cv::BORDER_REFLECT);
  }
  if (!img.empty()) {
    cv::Mat clipped = cv::min(cv::max(img, 0.0), 1.0);
    s.image = to_u8(clipped);
  }
  return out;
}

std::vector<BatchItem> sample_batch(const DatasetIndex& index, int batch_size, double tabletop_ratio,
                                    std::mt19937_64& rng) {
  if (batch_size <= 0) throw std::invalid_argument("sample_batch: batch size must be positive");
  if (!(tabletop_ratio >= 0.0 && tabletop_ratio <= 1.0))
    throw std::invalid_argument("sample_batch: ratio must lie in [0, 1]");
  std::vector<int> tabletop, composite;
  for (std::size_t i = 0; i < index.scenes.size(); ++i) {
    const auto& e = index.scenes[i];
    if (e.targets.empty()) continue;
    (e.style == SceneStyle::tabletop ? tabletop : composite).push_back(static_cast<int>(i));
  }
  if (tabletop.empty() && composite.empty()) throw std::invalid_argument("sample_batch: empty dataset");
  if (tabletop_ratio > 0.0 && tabletop.empty())
    throw std::invalid_argument("sample_batch: tabletop ratio > 0 but no tabletop scenes");
  if (tabletop_ratio < 1.0 && composite.empty())
    throw std::invalid_argument("sample_batch: composite ratio > 0 but no composite scenes");

  std::vector<BatchItem> batch;
  for (int b = 0; b < batch_size; ++b) {
    const bool table = bernoulli(rng, tabletop_ratio);
    const auto& pool = table ? tabletop : composite;
    const int scene = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    const auto& targets = index.scenes[scene].targets;
    const int target = targets[std::uniform_int_distribution<std::size_t>(0, targets.size() - 1)(rng)];
    batch.push_back({scene, target, table ? SceneStyle::tabletop : SceneStyle::composite});
  }
  return batch;
}

void write_scene(const SceneSample& s, const fs::path& dir) {
  fs::create_directories(dir);
  cv::Mat bgr;
  cv::cvtColor(s.image, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite((dir / "image.png").string(), bgr)) throw std::runtime_error("cannot write " + (dir / "image.png").string());
  nlohmann::json meta;
  meta["style"] = to_string(s.style);
  meta["intrinsics"] = {{"fx", s.intrinsics.fx}, {"fy", s.intrinsics.fy}, {"cx", s.intrinsics.cx},
                        {"cy", s.intrinsics.cy}, {"width", s.intrinsics.width}, {"height", s.intrinsics.height}};
  meta["camera_distance"] = s.camera_distance;
  meta["objects"] = nlohmann::json::array();
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%02zu.png", i);
    cv::Mat m = o.visibility * 255;
    if (!cv::imwrite((dir / name).string(), m)) throw std::runtime_error("cannot write " + (dir / name).string());
    nlohmann::json jo;
    jo["object_id"] = o.object_id;
    std::vector<double> r;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) r.push_back(o.rotation(a, b));
    jo["rotation"] = r;
    jo["translation"] = {o.translation.x(), o.translation.y(), o.translation.z()};
    jo["box"] = o.box ? nlohmann::json{o.box->x_min, o.box->y_min, o.box->x_max, o.box->y_max} : nlohmann::json();
    jo["projected_center"] = {o.projected_center.x(), o.projected_center.y()};
    jo["mask"] = name;
    jo["visible_pixels"] = o.visible_pixels();
    meta["objects"].push_back(jo);
  }
  std::ofstream os(dir / "meta.json");
  if (!os) throw std::runtime_error("cannot write " + (dir / "meta.json").string());
  os << meta.dump(2) << '\n';
}

SceneSample read_scene(const fs::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) throw std::runtime_error("missing " + (dir / "meta.json").string());
  const auto meta = nlohmann::json::parse(is);
  SceneSample s;
  s.style = scene_style_from_string(meta.at("style").get<std::string>());
  const auto& k = meta.at("intrinsics");
  s.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                  k.at("cy").get<double>(), k.at("width").get<int>(), k.at("height").get<int>()};
  s.camera_distance = meta.at("camera_distance").get<double>();
  cv::Mat bgr = cv::imread((dir / "image.png").string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read " + (dir / "image.png").string());
  cv::cvtColor(bgr, s.image, cv::COLOR_BGR2RGB);
  for (const auto& jo : meta.at("objects")) {
    SceneObject o;
    o.object_id = jo.at("object_id").get<std::string>();
    const auto r = jo.at("rotation").get<std::vector<double>>();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) o.rotation(a, b) = r.at(a * 3 + b);
    const auto t = jo.at("translation").get<std::vector<double>>();
    o.translation = {t.at(0), t.at(1), t.at(2)};
    if (!jo.at("box").is_null()) {
      const auto b = jo.at("box").get<std::vector<double>>();
      o.box = BBox{b.at(0), b.at(1), b.at(2), b.at(3)};
    }
    const auto c = jo.at("projected_center").get<std::vector<double>>();
    o.projected_center = {c.at(0), c.at(1)};
    o.visibility = cv::imread((dir / jo.at("mask").get<std::string>()).string(), cv::IMREAD_GRAYSCALE);
    if (o.visibility.empty()) throw std::runtime_error("cannot read mask in " + dir.string());
    o.visibility /= 255;
    s.objects.push_back(std::move(o));
  }
  return s;
}

}  // namespace instdet
