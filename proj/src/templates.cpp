#include "instdet/templates.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "instdet/errors.hpp"

namespace instdet {

namespace {

double projected_extent(const ObjectModel& model, const Eigen::Matrix3d& rotation, double depth, double focal) {
  double u_lo = 1e300, u_hi = -1e300, v_lo = 1e300, v_hi = -1e300;
  for (const auto& v : model.mesh.vertices) {
    const Eigen::Vector3d p = rotation * v + Eigen::Vector3d(0, 0, depth);
    if (p.z() <= 0.0) throw std::domain_error("frame_distance: model crosses the camera plane");
    const double u = focal * p.x() / p.z(), w = focal * p.y() / p.z();
    u_lo = std::min(u_lo, u);
    u_hi = std::max(u_hi, u);
    v_lo = std::min(v_lo, w);
    v_hi = std::max(v_hi, w);
  }
  return std::max(u_hi - u_lo, v_hi - v_lo);
}

cv::Rect mask_bounds(const cv::Mat& mask) {
  std::vector<cv::Point> pts;
  cv::findNonZero(mask, pts);
  if (pts.empty()) return {};
  return cv::boundingRect(pts);
}

}  // namespace

bool Template::valid() const {
  if (rgb.empty() || mask.empty() || rgb.type() != CV_8UC3 || mask.type() != CV_8U) return false;
  if (rgb.size() != mask.size()) return false;
  for (int y = 0; y < mask.rows; ++y) {
    for (int x = 0; x < mask.cols; ++x) {
      const auto m = mask.at<uchar>(y, x);
      if (m > 1) return false;
      if (m == 0 && rgb.at<cv::Vec3b>(y, x) != cv::Vec3b(0, 0, 0)) return false;
    }
  }
  return true;
}

int Template::mask_extent() const {
  const cv::Rect r = mask_bounds(mask);
  return std::max(r.width, r.height);
}

double frame_distance(const ObjectModel& model, const Eigen::Matrix3d& rotation, const TemplateSettings& s) {
  if (!model.valid()) throw std::domain_error("frame_distance: invalid model '" + model.id + "'");
  double depth = s.focal * model.physical_diameter / s.target_extent;
  // The bounding sphere keeps the camera outside the model for every iterate.
  const double min_depth = 0.5 * model.physical_diameter * 1.01;
  for (int it = 0; it < 50; ++it) {
    const double extent = projected_extent(model, rotation, depth, s.focal);
    if (!(extent > 0.0)) throw std::domain_error("frame_distance: model has zero projected extent");
    const double next = std::max(min_depth, depth * extent / s.target_extent);
    if (std::abs(next - depth) < 1e-12 * depth) return next;
    depth = next;
  }
  return depth;
}

Template render_template(Renderer& renderer, const ObjectModel& model, const Pose& pose, const TemplateSettings& s) {
  const int work = 2 * s.canvas;
  const Intrinsics K = Intrinsics::centered(s.focal, work, work);
  double depth = frame_distance(model, pose.rotation, s);

  cv::Rect box;
  RenderOutput out;
  for (int attempt = 0;; ++attempt) {
    out = renderer.render_single(model, pose.rotation, {0, 0, depth}, K, s.lighting);
    box = mask_bounds(out.mask_of(0));
    const int extent = std::max(box.width, box.height);
    if (extent >= s.min_extent && extent <= s.max_extent && box.width <= s.canvas && box.height <= s.canvas)
      break;
    if (extent == 0 || attempt == 3)
      throw RenderError("render_template: cannot frame '" + model.id + "' (extent " + std::to_string(extent) + ")");
    depth *= extent / s.target_extent;
  }

  Template t;
  t.object_id = model.id;
  t.render_depth = depth;
  t.pose = {pose.rotation, depth};
  t.rgb = cv::Mat(s.canvas, s.canvas, CV_8UC3, cv::Scalar::all(0));
  t.mask = cv::Mat(s.canvas, s.canvas, CV_8U, cv::Scalar(0));
  const int ox = (s.canvas - box.width) / 2, oy = (s.canvas - box.height) / 2;
  const cv::Mat mask = out.mask_of(0);
  for (int y = 0; y < box.height; ++y) {
    for (int x = 0; x < box.width; ++x) {
      if (!mask.at<uchar>(box.y + y, box.x + x)) continue;
      const cv::Vec3f c = out.rgb.at<cv::Vec3f>(box.y + y, box.x + x);
      t.mask.at<uchar>(oy + y, ox + x) = 1;
      t.rgb.at<cv::Vec3b>(oy + y, ox + x) = cv::Vec3b(cv::saturate_cast<uchar>(std::lround(c[0] * 255.0f)),
                                                      cv::saturate_cast<uchar>(std::lround(c[1] * 255.0f)),
                                                      cv::saturate_cast<uchar>(std::lround(c[2] * 255.0f)));
    }
  }
  return t;
}

void save_template(const Template& t, const std::filesystem::path& png_path) {
  std::vector<cv::Mat> ch;
  cv::split(t.rgb, ch);
  cv::Mat alpha = t.mask * 255;
  cv::Mat bgra;
  cv::merge(std::vector<cv::Mat>{ch[2], ch[1], ch[0], alpha}, bgra);
  if (!cv::imwrite(png_path.string(), bgra)) throw std::runtime_error("cannot write " + png_path.string());

  nlohmann::json meta;
  std::vector<double> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(t.pose.rotation(i, j));
  meta["rotation"] = r;
  meta["render_depth"] = t.render_depth;
  meta["object_id"] = t.object_id;
  std::ofstream os(std::filesystem::path(png_path).replace_extension(".json"));
  if (!os) throw std::runtime_error("cannot write sidecar for " + png_path.string());
  os << meta.dump(2) << '\n';
}

Template load_template(const std::filesystem::path& png_path) {
  cv::Mat bgra = cv::imread(png_path.string(), cv::IMREAD_UNCHANGED);
  if (bgra.empty() || bgra.channels() != 4) throw std::runtime_error("cannot read RGBA template " + png_path.string());
  std::vector<cv::Mat> ch;
  cv::split(bgra, ch);
  Template t;
  cv::merge(std::vector<cv::Mat>{ch[2], ch[1], ch[0]}, t.rgb);
  t.mask = ch[3] / 255;

  std::ifstream is(std::filesystem::path(png_path).replace_extension(".json"));
  if (!is) throw std::runtime_error("missing sidecar for " + png_path.string());
  const auto meta = nlohmann::json::parse(is);
  const auto r = meta.at("rotation").get<std::vector<double>>();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t.pose.rotation(i, j) = r.at(i * 3 + j);
  t.render_depth = meta.at("render_depth").get<double>();
  t.pose.render_depth = t.render_depth;
  t.object_id = meta.at("object_id").get<std::string>();
  return t;
}

}  // namespace instdet
