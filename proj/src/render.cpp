#include "instdet/render.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "instdet/errors.hpp"

namespace instdet {

bool ObjectModel::valid() const {
  return !mesh.vertices.empty() && !mesh.faces.empty() && mesh.face_colors.size() == mesh.faces.size() &&
         physical_diameter > 0.0 && std::isfinite(physical_diameter);
}

void finalize_model(ObjectModel& model) {
  auto& verts = model.mesh.vertices;
  if (verts.empty()) throw std::domain_error("model '" + model.id + "' has no vertices");
  Eigen::Vector3d lo = verts.front(), hi = verts.front();
  for (const auto& v : verts) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Eigen::Vector3d center = 0.5 * (lo + hi);
  double radius = 0.0;
  for (auto& v : verts) {
    v -= center;
    radius = std::max(radius, v.norm());
  }
  model.physical_diameter = 2.0 * radius;
}

ObjectModel make_cuboid(const std::string& id, const Eigen::Vector3d& size,
                        const std::array<Eigen::Vector3f, 6>& face_colors, double checker_cell) {
  ObjectModel m;
  m.id = id;
  m.checker_cell = checker_cell;
  const Eigen::Vector3d h = 0.5 * size;
  for (int i = 0; i < 8; ++i)
    m.mesh.vertices.emplace_back((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? h.z() : -h.z());
  // Quads per face (+x, -x, +y, -y, +z, -z), counter-clockwise from outside.
  const std::array<std::array<int, 4>, 6> quads = {{{1, 3, 7, 5}, {0, 4, 6, 2}, {2, 6, 7, 3},
                                                    {0, 1, 5, 4}, {4, 5, 7, 6}, {0, 2, 3, 1}}};
  for (int f = 0; f < 6; ++f) {
    const auto& q = quads[f];
    m.mesh.faces.push_back({q[0], q[1], q[2]});
    m.mesh.faces.push_back({q[0], q[2], q[3]});
    m.mesh.face_colors.push_back(face_colors[f]);
    m.mesh.face_colors.push_back(face_colors[f]);
  }
  finalize_model(m);
  return m;
}

ObjectModel make_cylinder(const std::string& id, double radius, double height, const Eigen::Vector3f& side,
                          const Eigen::Vector3f& caps, int segments, double checker_cell) {
  ObjectModel m;
  m.id = id;
  m.checker_cell = checker_cell;
  auto& v = m.mesh.vertices;
  const double hz = 0.5 * height;
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * std::numbers::pi * i / segments;
    v.emplace_back(radius * std::cos(a), radius * std::sin(a), -hz);
    v.emplace_back(radius * std::cos(a), radius * std::sin(a), hz);
  }
  const int bottom = static_cast<int>(v.size());
  v.emplace_back(0.0, 0.0, -hz);
  const int top = static_cast<int>(v.size());
  v.emplace_back(0.0, 0.0, hz);
  for (int i = 0; i < segments; ++i) {
    const int j = (i + 1) % segments;
    const int b0 = 2 * i, t0 = 2 * i + 1, b1 = 2 * j, t1 = 2 * j + 1;
    m.mesh.faces.push_back({b0, b1, t1});
    m.mesh.faces.push_back({b0, t1, t0});
    m.mesh.face_colors.push_back(side);
    m.mesh.face_colors.push_back(side);
    m.mesh.faces.push_back({top, t0, t1});
    m.mesh.face_colors.push_back(caps);
    m.mesh.faces.push_back({bottom, b1, b0});
    m.mesh.face_colors.push_back(caps);
  }
  finalize_model(m);
  return m;
}

ObjectModel make_sphere(const std::string& id, double radius, const Eigen::Vector3f& color_a,
                        const Eigen::Vector3f& color_b, int stacks, int slices) {
  ObjectModel m;
  m.id = id;
  auto& v = m.mesh.vertices;
  v.emplace_back(0.0, 0.0, radius);
  for (int s = 1; s < stacks; ++s) {
    const double theta = std::numbers::pi * s / stacks;
    for (int k = 0; k < slices; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / slices;
      v.emplace_back(radius * std::sin(theta) * std::cos(phi), radius * std::sin(theta) * std::sin(phi),
                     radius * std::cos(theta));
    }
  }
  v.emplace_back(0.0, 0.0, -radius);
  const int south = static_cast<int>(v.size()) - 1;
  auto ring = [&](int s, int k) { return 1 + (s - 1) * slices + (k % slices); };
  // Alternating colour bands every two stacks give the sphere a visible texture.
  auto color = [&](int s) { return ((s / 2) % 2 == 0) ? color_a : color_b; };
  for (int k = 0; k < slices; ++k) {
    m.mesh.faces.push_back({0, ring(1, k), ring(1, k + 1)});
    m.mesh.face_colors.push_back(color(0));
  }
  for (int s = 1; s < stacks - 1; ++s) {
    for (int k = 0; k < slices; ++k) {
      m.mesh.faces.push_back({ring(s, k), ring(s + 1, k), ring(s + 1, k + 1)});
      m.mesh.faces.push_back({ring(s, k), ring(s + 1, k + 1), ring(s, k + 1)});
      m.mesh.face_colors.push_back(color(s));
      m.mesh.face_colors.push_back(color(s));
    }
  }
  for (int k = 0; k < slices; ++k) {
    m.mesh.faces.push_back({south, ring(stacks - 1, k + 1), ring(stacks - 1, k)});
    m.mesh.face_colors.push_back(color(stacks - 1));
  }
  finalize_model(m);
  return m;
}

ObjectModel load_obj_model(const std::string& id, const std::string& path, const Eigen::Vector3f& color) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open OBJ file: " + path);
  ObjectModel m;
  m.id = id;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      ls >> x >> y >> z;
      m.mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        int i = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(i < 0 ? static_cast<int>(m.mesh.vertices.size()) + i : i - 1);
      }
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        m.mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
        m.mesh.face_colors.push_back(color);
      }
    }
  }
  if (m.mesh.faces.empty()) throw std::runtime_error("OBJ file has no faces: " + path);
  finalize_model(m);
  return m;
}

cv::Mat RenderOutput::mask_of(int instance_id) const {
  cv::Mat mask = (instance == instance_id);
  mask /= 255;
  return mask;
}

RenderOutput Renderer::render_single(const ObjectModel& model, const Eigen::Matrix3d& rotation,
                                     const Eigen::Vector3d& translation, const Intrinsics& intrinsics,
                                     const Lighting& lighting) {
  const RenderItem item{&model, rotation, translation, 0};
  return render(std::span<const RenderItem>(&item, 1), intrinsics, lighting, cv::Mat());
}

namespace {

// Sutherland-Hodgman against z >= near.
std::vector<Eigen::Vector3d> clip_near(const std::array<Eigen::Vector3d, 3>& tri, double near) {
  std::vector<Eigen::Vector3d> out;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d& a = tri[i];
    const Eigen::Vector3d& b = tri[(i + 1) % 3];
    const bool a_in = a.z() >= near, b_in = b.z() >= near;
    if (a_in) out.push_back(a);
    if (a_in != b_in) {
      const double t = (near - a.z()) / (b.z() - a.z());
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

float checker(const Eigen::Vector3d& p_obj, double cell) {
  if (cell <= 0.0) return 1.0f;
  const long s = static_cast<long>(std::floor(p_obj.x() / cell)) + static_cast<long>(std::floor(p_obj.y() / cell)) +
                 static_cast<long>(std::floor(p_obj.z() / cell));
  return (s & 1) ? 0.55f : 1.0f;
}

}  // namespace

RenderOutput RasterRenderer::render(std::span<const RenderItem> items, const Intrinsics& K,
                                    const Lighting& lighting, const cv::Mat& background) {
  if (K.width <= 0 || K.height <= 0) throw RenderError("render: empty viewport");
  RenderOutput out;
  if (!background.empty()) {
    if (background.rows != K.height || background.cols != K.width || background.type() != CV_32FC3)
      throw RenderError("render: background must be CV_32FC3 of the viewport size");
    out.rgb = background.clone();
  } else {
    out.rgb = cv::Mat(K.height, K.width, CV_32FC3, cv::Scalar::all(0));
  }
  out.depth = cv::Mat(K.height, K.width, CV_64F, cv::Scalar(0));
  out.instance = cv::Mat(K.height, K.width, CV_32S, cv::Scalar(-1));
  cv::Mat zbuf(K.height, K.width, CV_64F, cv::Scalar(std::numeric_limits<double>::infinity()));

  const Eigen::Vector3d light = lighting.direction.normalized();

  for (const auto& item : items) {
    if (item.model == nullptr || !item.model->valid())
      throw RenderError("render: item without a valid model");
    const Mesh& mesh = item.model->mesh;
    std::vector<Eigen::Vector3d> cam(mesh.vertices.size());
    for (std::size_t i = 0; i < cam.size(); ++i) cam[i] = item.rotation * mesh.vertices[i] + item.translation;

    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      const auto& face = mesh.faces[f];
      const std::array<Eigen::Vector3d, 3> tri = {cam[face[0]], cam[face[1]], cam[face[2]]};
      Eigen::Vector3d n = (tri[1] - tri[0]).cross(tri[2] - tri[0]);
      if (n.norm() < 1e-15) continue;
      n.normalize();
      if (n.dot(tri[0]) >= 0.0) continue;  // back-facing

      const double shade = std::clamp(n.dot(light), lighting.min_shade, lighting.max_shade);
      const Eigen::Vector3f base = mesh.face_colors[f].cwiseProduct(lighting.tint) * static_cast<float>(shade);
      const double plane_d = n.dot(tri[0]);

      const auto poly = clip_near(tri, near_);
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        const Eigen::Vector2d p0 = K.project(poly[0]), p1 = K.project(poly[k]), p2 = K.project(poly[k + 1]);
        const double area = (p1 - p0).x() * (p2 - p0).y() - (p1 - p0).y() * (p2 - p0).x();
        if (std::abs(area) < 1e-12) continue;
        const double sign = area > 0 ? 1.0 : -1.0;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({p0.x(), p1.x(), p2.x()}))));
        const int x1 = std::min(K.width - 1, static_cast<int>(std::ceil(std::max({p0.x(), p1.x(), p2.x()}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({p0.y(), p1.y(), p2.y()}))));
        const int y1 = std::min(K.height - 1, static_cast<int>(std::ceil(std::max({p0.y(), p1.y(), p2.y()}))));
        auto edge = [](const Eigen::Vector2d& a, const Eigen::Vector2d& b, double px, double py) {
          return (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
        };
        for (int y = y0; y <= y1; ++y) {
          const double py = y + 0.5;
          auto* zrow = zbuf.ptr<double>(y);
          for (int x = x0; x <= x1; ++x) {
            const double px = x + 0.5;
            if (sign * edge(p0, p1, px, py) < 0 || sign * edge(p1, p2, px, py) < 0 ||
                sign * edge(p2, p0, px, py) < 0)
              continue;
            const Eigen::Vector3d ray((px - K.cx) / K.fx, (py - K.cy) / K.fy, 1.0);
            const double denom = n.dot(ray);
            if (std::abs(denom) < 1e-15) continue;
            const double z = plane_d / denom;
            if (!(z >= near_) || z >= zrow[x]) continue;
            zrow[x] = z;
            const Eigen::Vector3d p_obj = item.rotation.transpose() * (z * ray - item.translation);
            const Eigen::Vector3f c = base * checker(p_obj, item.model->checker_cell);
            out.rgb.at<cv::Vec3f>(y, x) = cv::Vec3f(std::clamp(c.x(), 0.0f, 1.0f), std::clamp(c.y(), 0.0f, 1.0f),
                                                    std::clamp(c.z(), 0.0f, 1.0f));
            out.depth.at<double>(y, x) = z;
            out.instance.at<int>(y, x) = item.instance_id;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace instdet
