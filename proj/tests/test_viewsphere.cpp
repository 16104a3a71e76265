#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "instdet/viewsphere.hpp"

using namespace instdet;

namespace {

double angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::acos(std::clamp(a.dot(b), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string quantized(const std::vector<Eigen::Vector3d>& vs) {
  std::ostringstream os;
  for (const auto& v : vs) os << std::llround(v.x() * 1e6) << ',' << std::llround(v.y() * 1e6) << ',' << std::llround(v.z() * 1e6) << ';';
  return os.str();
}

}  // namespace

TEST_CASE("global viewpoints: 40 distinct unit vectors over the whole sphere") {
  const auto vs = global_viewpoints();
  REQUIRE(vs.size() == 40);
  double min_sep = 180.0;
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  int upper = 0, lower = 0;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    CHECK(std::abs(vs[i].norm() - 1.0) < 1e-9);
    sum += vs[i];
    if (vs[i].z() > 1e-9) ++upper;
    if (vs[i].z() < -1e-9) ++lower;
    for (std::size_t j = i + 1; j < vs.size(); ++j) min_sep = std::min(min_sep, angle_deg(vs[i], vs[j]));
  }
  CHECK(min_sep > 15.0);
  CHECK(upper == lower);
  CHECK(sum.norm() < 1e-9);  // antipodally symmetric set
  // Every direction on the sphere is within 40 degrees of some viewpoint.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int k = 0; k < 2000; ++k) {
    const Eigen::Vector3d d = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
    double best = 180.0;
    for (const auto& v : vs) best = std::min(best, angle_deg(d, v));
    REQUIRE(best < 40.0);
  }
}

TEST_CASE("viewpoint sets are deterministic (golden hash)") {
  CHECK(quantized(global_viewpoints()) == quantized(global_viewpoints()));
  CHECK(fnv1a(quantized(global_viewpoints())) == 16702406591754199304ull);
  CHECK(fnv1a(quantized(local_viewpoints_test())) == 12708218902574188249ull);
}

TEST_CASE("global template poses") {
  const auto poses = global_template_poses(0.5);
  REQUIRE(poses.size() == 240);
  for (const auto& p : poses) {
    CHECK(p.valid(1e-9));
    CHECK(p.render_depth == 0.5);
  }
  const auto vs = global_viewpoints();
  for (int v = 0; v < 40; ++v) {
    const Eigen::Matrix3d base = poses[v * 6].rotation;
    CHECK((base * vs[v] - Eigen::Vector3d(0, 0, -1)).norm() < 1e-9);
    std::set<long> angles;
    for (int k = 0; k < 6; ++k) {
      const Eigen::Matrix3d rel = poses[v * 6 + k].rotation * base.transpose();
      angles.insert(std::lround(std::atan2(rel(1, 0), rel(0, 0)) * 180.0 / std::numbers::pi + 360) % 360);
    }
    CHECK(angles == std::set<long>{0, 60, 120, 180, 240, 300});
  }
  CHECK_THROWS(global_template_poses(0.0));
}

TEST_CASE("local test stack") {
  CHECK(local_template_poses_test(10).size() == 160);
  CHECK(local_template_poses_test(5).size() == 80);
  CHECK(local_template_poses_test(20).size() == 320);
  CHECK_THROWS(local_template_poses_test(7));
  const auto vs = local_viewpoints_test();
  REQUIRE(vs.size() == 16);
  std::set<std::string> distinct;
  for (const auto& v : vs) {
    CHECK(v.z() >= -1e-12);
    std::ostringstream os;
    os << std::llround(v.x() * 1e6) << ',' << std::llround(v.y() * 1e6) << ',' << std::llround(v.z() * 1e6);
    distinct.insert(os.str());
  }
  CHECK(distinct.size() == 16);
  for (const auto& p : local_template_poses_test(10)) CHECK(p.valid(1e-9));
}

TEST_CASE("rotation perturbation") {
  std::mt19937_64 rng(11);
  const Pose base{global_template_poses(1.0)[17].rotation, 0.7};
  const Pose same = perturb_rotation(base, {0.0}, rng);
  CHECK((same.rotation - base.rotation).cwiseAbs().maxCoeff() < 1e-15);

  double sum = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Pose p = perturb_rotation(base, {30.0}, rng);
    CHECK(p.valid(1e-6));
    CHECK(p.render_depth == 0.7);
    const double a = geodesic_angle(p.rotation, base.rotation) * 180.0 / std::numbers::pi;
    REQUIRE(a <= 30.0 + 1e-6);
    sum += a;
  }
  const double mean = sum / n;
  CHECK(mean >= 14.0);
  CHECK(mean <= 16.0);

  std::mt19937_64 a(99), b(99);
  CHECK(perturb_rotation(base, {20.0}, a).rotation == perturb_rotation(base, {20.0}, b).rotation);
  CHECK_THROWS(perturb_rotation(base, {181.0}, rng));
}

TEST_CASE("pose export rows") {
  std::ostringstream os;
  write_poses(os, local_template_poses_test(5, 0.8));
  std::istringstream is(os.str());
  std::string line;
  int rows = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    double v;
    int n = 0;
    while (ls >> v) ++n;
    CHECK(n == 10);
    ++rows;
  }
  CHECK(rows == 80);
}
