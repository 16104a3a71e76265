#pragma once

#include <Eigen/Core>
#include <array>
#include <opencv2/core.hpp>
#include <span>
#include <string>
#include <vector>

namespace instdet {

/// Pinhole camera. Pixel centres sit at integer + 0.5.
struct Intrinsics {
  double fx = 540.0;
  double fy = 540.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  static Intrinsics centered(double focal, int width, int height) {
    return {focal, focal, 0.5 * width, 0.5 * height, width, height};
  }
  Eigen::Vector2d project(const Eigen::Vector3d& p_cam) const {
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }
};

struct Mesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;  // counter-clockwise seen from outside
  std::vector<Eigen::Vector3f> face_colors;  // linear RGB in [0, 1], one per face
};

/// Triangle mesh centred on its bounding-box centre. `checker_cell` > 0 modulates
/// face colours with a 3D checkerboard of that cell size (metres).
struct ObjectModel {
  std::string id;
  Mesh mesh;
  double physical_diameter = 0.0;
  double checker_cell = 0.0;

  bool valid() const;
};

ObjectModel make_cuboid(const std::string& id, const Eigen::Vector3d& size,
                        const std::array<Eigen::Vector3f, 6>& face_colors, double checker_cell = 0.0);
ObjectModel make_cylinder(const std::string& id, double radius, double height, const Eigen::Vector3f& side,
                          const Eigen::Vector3f& caps, int segments = 32, double checker_cell = 0.0);
ObjectModel make_sphere(const std::string& id, double radius, const Eigen::Vector3f& color_a,
                        const Eigen::Vector3f& color_b, int stacks = 16, int slices = 32);

/// Wavefront OBJ subset (v / f lines, polygons fan-triangulated), single colour.
ObjectModel load_obj_model(const std::string& id, const std::string& path, const Eigen::Vector3f& color);

/// Recentre on the bounding-box centre and recompute the bounding-sphere diameter.
void finalize_model(ObjectModel& model);

struct RenderItem {
  const ObjectModel* model = nullptr;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // object -> camera
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int instance_id = 0;  // written to the instance buffer; background is -1
};

/// Flat Lambert shading: colour * tint * clamp(n . l, min_shade, max_shade).
struct Lighting {
  Eigen::Vector3d direction = Eigen::Vector3d(0.0, -1.0, -0.6).normalized();  // camera frame, towards light
  Eigen::Vector3f tint = Eigen::Vector3f::Ones();
  double min_shade = 0.3;
  double max_shade = 1.0;
};

struct RenderOutput {
  cv::Mat rgb;       // CV_32FC3, RGB order, [0, 1]
  cv::Mat depth;     // CV_64F, camera z, 0 where empty
  cv::Mat instance;  // CV_32S, -1 where empty

  cv::Mat mask_of(int instance_id) const;  // CV_8U {0, 1}
};

class Renderer {
 public:
  virtual ~Renderer() = default;

  /// `background` (CV_32FC3, same size) fills uncovered pixels; black if empty.
  virtual RenderOutput render(std::span<const RenderItem> items, const Intrinsics& intrinsics,
                              const Lighting& lighting, const cv::Mat& background) = 0;

  RenderOutput render_single(const ObjectModel& model, const Eigen::Matrix3d& rotation,
                             const Eigen::Vector3d& translation, const Intrinsics& intrinsics,
                             const Lighting& lighting);
};

/// Reference CPU rasterizer: near-plane clipping, z-buffer, per-face flat shading,
/// perspective-correct depth via ray/plane intersection at pixel centres.
class RasterRenderer final : public Renderer {
 public:
  explicit RasterRenderer(double near_plane = 0.01) : near_(near_plane) {}

  RenderOutput render(std::span<const RenderItem> items, const Intrinsics& intrinsics,
                      const Lighting& lighting, const cv::Mat& background) override;

 private:
  double near_;
};

}  // namespace instdet
