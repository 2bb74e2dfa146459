#include <numbers>

#include "doctest.h"
#include "orbitkit/camera.hpp"
#include "orbitkit/rng.hpp"

using namespace orbitkit;
using Eigen::Vector3d;

namespace {
constexpr double kPi = std::numbers::pi;

double orthonormality_error(const Eigen::Matrix3d& r) {
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
}
}  // namespace

TEST_CASE("pose_from_spherical places the camera on the sphere") {
  const auto p0 = pose_from_spherical(0.0, 0.0, 4.0);
  CHECK((p0.position - Vector3d(4, 0, 0)).norm() < 1e-12);
  CHECK((p0.optical_axis() - Vector3d(-1, 0, 0)).norm() < 1e-12);

  const auto p1 = pose_from_spherical(kPi, 0.0, 4.0);
  CHECK((p1.position - Vector3d(-4, 0, 0)).norm() < 1e-12);

  // Hand-evaluated: 2 * cos(pi/6) * cos(pi/4) = sqrt(6)/2, z = 2 * sin(pi/6) = 1.
  const auto p2 = pose_from_spherical(kPi / 4, kPi / 6, 2.0);
  CHECK(p2.position.x() == doctest::Approx(1.22474487139158904909).epsilon(1e-14));
  CHECK(p2.position.y() == doctest::Approx(1.22474487139158904909).epsilon(1e-14));
  CHECK(p2.position.z() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK((p2.optical_axis() + p2.position.normalized()).norm() < 1e-12);
  // Camera up has a positive world-z component away from the poles.
  CHECK(p2.rotation(1, 2) > 0.0);
  CHECK(p2.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("poles fall back to a valid basis") {
  for (double e : {kPi / 2, -kPi / 2}) {
    const auto p = pose_from_spherical(0.3, e, 3.0);
    CHECK(p.is_finite());
    CHECK(orthonormality_error(p.rotation) < 1e-9);
    CHECK(p.rotation.determinant() == doctest::Approx(1.0));
    CHECK((p.optical_axis() + p.position.normalized()).norm() < 1e-9);
  }
}

TEST_CASE("orbital trajectory follows the azimuth/elevation schedule") {
  const auto traj = orbital_trajectory(61, 30.0, 3.0, 4.0);
  REQUIRE(traj.poses.size() == 61);
  CHECK(traj.azimuths[0] == 0.0);
  CHECK(traj.elevations[0] == 0.0);
  CHECK(traj.elevations[5] * 180.0 / kPi == doctest::Approx(29.9900540254293928209).epsilon(1e-12));

  const auto level = orbital_trajectory(61, 0.0, 3.0, 4.0);
  for (std::size_t i = 0; i < level.poses.size(); ++i) {
    CHECK(level.elevations[i] == 0.0);
    CHECK(std::abs(level.poses[i].position.z()) < 1e-9);
    CHECK(std::abs(level.poses[i].position.norm() - 4.0) < 1e-9);
  }
}

TEST_CASE("trajectory invariants over random parameters") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int T = static_cast<int>(rng.integer(2, 80));
    const Vector3d target(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const double radius = rng.uniform(1.5, 6.0);
    const double a0 = rng.uniform(0, 2 * kPi);
    const auto traj = orbital_trajectory(T, rng.uniform(0, 60), static_cast<double>(rng.integer(1, 3)), radius, a0,
                                         target);
    REQUIRE(static_cast<int>(traj.poses.size()) == traj.frame_count);
    for (int i = 0; i < T; ++i) {
      const auto& p = traj.poses[static_cast<std::size_t>(i)];
      CHECK(orthonormality_error(p.rotation) < 1e-9);
      CHECK(std::abs((p.position - target).norm() - radius) < 1e-9);
      // Azimuths are exactly the closed form; deltas equal 2*pi/T up to rounding.
      CHECK(traj.azimuths[static_cast<std::size_t>(i)] == a0 + 2.0 * kPi * i / T);
      if (i > 0)
        CHECK(std::abs(traj.azimuths[static_cast<std::size_t>(i)] - traj.azimuths[static_cast<std::size_t>(i - 1)] -
                       2.0 * kPi / T) < 1e-12);
    }
  }
}

TEST_CASE("time reversal keeps the first pose") {
  const auto traj = orbital_trajectory(8, 20.0, 2.0, 4.0, 0.4);
  const auto rev = time_reversed(traj);
  CHECK(rev.poses[0].position == traj.poses[0].position);
  CHECK(rev.poses[1].position == traj.poses[7].position);
  CHECK(rev.poses[7].position == traj.poses[1].position);
}

TEST_CASE("pluecker rays on the optical axis") {
  SUBCASE("camera at origin looking down -z") {
    CameraPose pose;  // identity rotation: optical axis -z
    pose.focal = 10.0;
    pose.principal_point = {2.5, 2.5};
    PlueckerGrid grid(1, 5, 5);
    pluecker_rays(pose, 5, 5, 0, grid);
    const std::size_t px = 2 * 5 + 2;
    const std::size_t chan = 25;
    const double expected[6] = {0, 0, -1, 0, 0, 0};
    for (int k = 0; k < 6; ++k) CHECK(grid.data[k * chan + px] == doctest::Approx(expected[k]));
  }
  SUBCASE("camera at (4,0,0) looking at the origin") {
    const auto pose = pose_from_spherical(0.0, 0.0, 4.0, Vector3d::Zero(), Intrinsics::for_image(5, 5));
    PlueckerGrid grid(1, 5, 5);
    pluecker_rays(pose, 5, 5, 0, grid);
    const std::size_t px = 12, chan = 25;
    CHECK(grid.data[0 * chan + px] == doctest::Approx(-1.0));
    for (int k = 1; k < 6; ++k) CHECK(std::abs(grid.data[k * chan + px]) < 1e-12);
  }
}

TEST_CASE("pluecker moment matches a two-point line construction") {
  Rng rng(9);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto pose = pose_from_spherical(rng.uniform(0, 2 * kPi), rng.uniform(-1.2, 1.2), rng.uniform(1, 8),
                                          Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)),
                                          Intrinsics::for_image(6, 7));
    PlueckerGrid grid(1, 6, 7);
    pluecker_rays(pose, 6, 7, 0, grid);
    const int r = static_cast<int>(rng.integer(0, 5)), c = static_cast<int>(rng.integer(0, 6));
    const std::size_t px = static_cast<std::size_t>(r * 7 + c), chan = 42;
    Vector3d d, m;
    for (int k = 0; k < 3; ++k) {
      d[k] = grid.data[static_cast<std::size_t>(k) * chan + px];
      m[k] = grid.data[static_cast<std::size_t>(k + 3) * chan + px];
    }
    CHECK(std::abs(d.norm() - 1.0) < 1e-9);
    CHECK(std::abs(d.dot(m)) < 1e-9);
    // Independent line: camera center and the back-projected point one unit along the ray.
    const Vector3d cam_dir((c + 0.5 - pose.principal_point.x()) / pose.focal,
                           -(r + 0.5 - pose.principal_point.y()) / pose.focal, -1.0);
    const Vector3d p1 = pose.position;
    const Vector3d p2 = p1 + (pose.rotation.transpose() * cam_dir).normalized();
    const Vector3d moment = p1.cross(p2);  // p1 x (p2 - p1) == p1 x p2
    CHECK((moment - m).norm() < 1e-9);
    CHECK(((p2 - p1) - d).norm() < 1e-9);
    ++checked;
  }
  CHECK(checked == 1000);
}

TEST_CASE("pluecker rejects bad input") {
  CameraPose pose;
  pose.position.x() = std::nan("");
  PlueckerGrid grid(1, 4, 4);
  CHECK_THROWS_AS(pluecker_rays(pose, 4, 4, 0, grid), std::invalid_argument);
  CameraPose ok;
  CHECK_THROWS_AS(pluecker_rays(ok, 4, 5, 0, grid), ShapeError);
  CHECK_THROWS_AS(pluecker_rays(ok, 4, 4, 1, grid), ShapeError);
}

TEST_CASE("trajectory json round trip") {
  const auto traj = orbital_trajectory(5, 30.0, 3.0, 4.0, 0.2);
  const auto doc = trajectory_to_json(traj);
  REQUIRE(doc.is_array());
  CHECK(doc[0].contains("azimuth_rad"));
  CHECK(doc[0]["rotation"].size() == 9);
  const auto back = trajectory_from_json(nlohmann::json::parse(doc.dump()));
  REQUIRE(back.frame_count == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(back.poses[static_cast<std::size_t>(i)].rotation == traj.poses[static_cast<std::size_t>(i)].rotation);
    CHECK(back.poses[static_cast<std::size_t>(i)].position == traj.poses[static_cast<std::size_t>(i)].position);
  }
  CHECK(back.radius == doctest::Approx(4.0));
}
