#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <random>
#include <vector>

namespace instdet {

/// Object-to-camera rotation plus the depth the object is rendered at.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  double render_depth = 1.0;

  bool valid(double tol = 1e-6) const;
};

struct PerturbationSpec {
  double max_angle_deg = 20.0;
};

/// Vertices of an icosahedron (one vertex on +z) subdivided `levels` times,
/// projected onto the unit sphere. Deterministic ordering.
std::vector<Eigen::Vector3d> icosphere_vertices(int levels);

/// 40 directions: the once-subdivided icosphere without its two polar vertices.
std::vector<Eigen::Vector3d> global_viewpoints();

/// 16 upper-hemisphere directions: for 4 elevation rings x 4 azimuths, the
/// nearest unused icosphere vertex with non-negative elevation.
std::vector<Eigen::Vector3d> local_viewpoints_test();

/// Rotation for a camera placed along `view_dir` (object frame, unit) looking
/// at the object centre: rotation * view_dir = (0, 0, -1).
Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& view_dir);

/// Rotation about the camera optical axis.
Eigen::Matrix3d inplane_rotation(double angle_rad);

/// 40 viewpoints x 6 in-plane angles (0, 60, ..., 300 deg); viewpoint-major order.
std::vector<Pose> global_template_poses(double depth);

/// 16 test viewpoints x n_inplane evenly spaced in-plane angles. n_inplane in {5, 10, 20}.
std::vector<Pose> local_template_poses_test(int n_inplane, double depth = 1.0);

/// Geodesic distance between two rotations in radians.
double geodesic_angle(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

/// delta * R with delta about a uniformly random axis by an angle uniform in [0, max].
Pose perturb_rotation(const Pose& pose, const PerturbationSpec& spec, std::mt19937_64& rng);

/// Rows of "r00 r01 r02 r10 ... r22 depth".
void write_poses(std::ostream& os, const std::vector<Pose>& poses);

}  // namespace instdet
