#include "instdet/viewsphere.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace instdet {

namespace {

constexpr double kPi = std::numbers::pi;

double deg2rad(double d) { return d * kPi / 180.0; }

}  // namespace

bool Pose::valid(double tol) const {
  if (!(render_depth > 0.0)) return false;
  const Eigen::Matrix3d should_be_identity = rotation.transpose() * rotation;
  if ((should_be_identity - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

std::vector<Eigen::Vector3d> icosphere_vertices(int levels) {
  const double phi = std::numbers::phi;
  std::vector<Eigen::Vector3d> verts = {
      {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi}, {0, 1, phi},
      {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
      {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (auto& v : verts) v.normalize();

  // Put vertex 5 = (0, 1, phi) on the +z pole; its antipode (vertex 6) lands on -z.
  const Eigen::Quaterniond align = Eigen::Quaterniond::FromTwoVectors(verts[5], Eigen::Vector3d::UnitZ());
  for (auto& v : verts) v = align * v;

  for (int level = 0; level < levels; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back((verts[a] + verts[b]).normalized());
      const int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  return verts;
}

std::vector<Eigen::Vector3d> global_viewpoints() {
  std::vector<Eigen::Vector3d> out;
  for (const auto& v : icosphere_vertices(1)) {
    if (std::abs(std::abs(v.z()) - 1.0) < 1e-9) continue;
    out.push_back(v);
  }
  return out;
}

std::vector<Eigen::Vector3d> local_viewpoints_test() {
  const auto verts = icosphere_vertices(1);
  const std::array<double, 4> elevations = {10.0, 30.0, 50.0, 70.0};
  const std::array<double, 4> azimuths = {0.0, 90.0, 180.0, 270.0};
  std::vector<bool> used(verts.size(), false);
  std::vector<Eigen::Vector3d> out;
  for (double el : elevations) {
    for (double az : azimuths) {
      const Eigen::Vector3d target(std::cos(deg2rad(el)) * std::cos(deg2rad(az)),
                                   std::cos(deg2rad(el)) * std::sin(deg2rad(az)), std::sin(deg2rad(el)));
      int best = -1;
      double best_dot = -2.0;
      for (std::size_t i = 0; i < verts.size(); ++i) {
        if (used[i] || verts[i].z() < -1e-12) continue;
        const double d = verts[i].dot(target);
        if (d > best_dot) {
          best_dot = d;
          best = static_cast<int>(i);
        }
      }
      used[best] = true;
      out.push_back(verts[best]);
    }
  }
  return out;
}

Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& view_dir) {
  const Eigen::Vector3d forward = -view_dir.normalized();  // camera +z, towards the object
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  if (std::abs(forward.dot(up)) > 0.999) up = Eigen::Vector3d::UnitY();
  // Image y points down, so camera +y follows -up projected on the image plane.
  const Eigen::Vector3d down = (-up - (-up).dot(forward) * forward).normalized();
  const Eigen::Vector3d right = down.cross(forward);
  Eigen::Matrix3d r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  return r;
}

Eigen::Matrix3d inplane_rotation(double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

std::vector<Pose> global_template_poses(double depth) {
  if (!(depth > 0.0)) throw std::invalid_argument("global_template_poses: depth must be > 0");
  std::vector<Pose> poses;
  for (const auto& v : global_viewpoints()) {
    const Eigen::Matrix3d base = look_at_rotation(v);
    for (int k = 0; k < 6; ++k) poses.push_back({inplane_rotation(deg2rad(60.0 * k)) * base, depth});
  }
  return poses;
}

std::vector<Pose> local_template_poses_test(int n_inplane, double depth) {
  if (n_inplane != 5 && n_inplane != 10 && n_inplane != 20)
    throw std::invalid_argument("local_template_poses_test: n_inplane must be 5, 10 or 20");
  if (!(depth > 0.0)) throw std::invalid_argument("local_template_poses_test: depth must be > 0");
  std::vector<Pose> poses;
  for (const auto& v : local_viewpoints_test()) {
    const Eigen::Matrix3d base = look_at_rotation(v);
    for (int k = 0; k < n_inplane; ++k)
      poses.push_back({inplane_rotation(2.0 * kPi * k / n_inplane) * base, depth});
  }
  return poses;
}

double geodesic_angle(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

Pose perturb_rotation(const Pose& pose, const PerturbationSpec& spec, std::mt19937_64& rng) {
  if (spec.max_angle_deg < 0.0 || spec.max_angle_deg > 180.0)
    throw std::invalid_argument("perturb_rotation: max angle must lie in [0, 180]");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Eigen::Vector3d axis(normal(rng), normal(rng), normal(rng));
  while (axis.norm() < 1e-12) axis = {normal(rng), normal(rng), normal(rng)};
  axis.normalize();
  const double angle = deg2rad(spec.max_angle_deg) * uniform(rng);
  const Eigen::Matrix3d delta = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  return {delta * pose.rotation, pose.render_depth};
}

void write_poses(std::ostream& os, const std::vector<Pose>& poses) {
  char buf[64];
  for (const auto& p : poses) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        std::snprintf(buf, sizeof(buf), "%.9f ", p.rotation(r, c));
        os << buf;
      }
    std::snprintf(buf, sizeof(buf), "%.9f", p.render_depth);
    os << buf << '\n';
  }
}

}  // namespace instdet
