#include <numbers>

#include "doctest.h"
#include "orbitkit/render.hpp"

using namespace orbitkit;
using Eigen::Vector3d;

namespace {

Scene unit_sphere(Pattern pattern = Pattern::Solid) {
  Scene s;
  Primitive p;
  p.kind = PrimitiveKind::Sphere;
  p.half_extents = Vector3d::Ones();
  p.pattern = pattern;
  s.primitives.push_back(p);
  return s;
}

// Reference ray/sphere intersection, written independently of the renderer.
std::optional<Vector3d> sphere_hit(const Vector3d& o, const Vector3d& d, const Vector3d& c, double r) {
  const Vector3d oc = o - c;
  const double b = oc.dot(d);
  const double disc = b * b - (oc.squaredNorm() - r * r);
  if (disc < 0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  if (t <= 0) return std::nullopt;
  return o + t * d;
}

}  // namespace

TEST_CASE("procedural scenes are deterministic and normalized") {
  const auto a = procedural_scene(0, 1);
  const auto b = procedural_scene(0, 1);
  REQUIRE(a.primitives.size() == 1);
  CHECK(a.primitives[0].center == b.primitives[0].center);
  CHECK(a.primitives[0].half_extents == b.primitives[0].half_extents);
  CHECK(a.primitives[0].orientation == b.primitives[0].orientation);
  CHECK(a.primitives[0].color_a == b.primitives[0].color_a);

  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto s = procedural_scene(seed, 4);
    CHECK(s.primitives.size() == 4);
    for (const auto& p : s.primitives) CHECK(p.bounding_radius() <= 1.0 + 1e-9);
  }
  CHECK_THROWS(procedural_scene(0, 0));
  CHECK_THROWS(procedural_scene(0, 9));
}

TEST_CASE("unit sphere seen from the orbit") {
  const auto scene = unit_sphere();
  const auto pose = pose_from_spherical(0, 0, 4, Vector3d::Zero(), Intrinsics::for_image(33, 33));
  const auto f = render_frame(scene, pose, 33, 33);
  const std::size_t center = 16 * 33 + 16;
  CHECK(f.alpha[center] == 1.0f);
  const auto n = decode_normal(f.normal[3 * center], f.normal[3 * center + 1], f.normal[3 * center + 2]);
  CHECK((n - Vector3d(0, 0, 1)).norm() < 1e-6);
  CHECK(f.alpha[0] == 0.0f);
  CHECK(f.rgb[0] == 1.0f);
  const auto bg = decode_normal(f.normal[0], f.normal[1], f.normal[2]);
  CHECK((bg - Vector3d(0, 0, 1)).norm() == 0.0);
}

TEST_CASE("sphere normals match the analytic oracle at every hit pixel") {
  for (double radius : {1.0, 0.7}) {
    Scene scene = unit_sphere();
    const Vector3d c(0.1, -0.2, 0.05);
    scene.primitives[0].center = c;
    scene.primitives[0].half_extents.setConstant(radius);
    const auto pose = pose_from_spherical(0.7, 0.3, 4, Vector3d::Zero(), Intrinsics::for_image(40, 40));
    const auto f = render_frame(scene, pose, 40, 40);
    int hits = 0;
    for (int r = 0; r < 40; ++r)
      for (int col = 0; col < 40; ++col) {
        const std::size_t px = static_cast<std::size_t>(r * 40 + col);
        const Vector3d d = pose.ray_direction(col + 0.5, r + 0.5);
        const auto hit = sphere_hit(pose.position, d, c, radius);
        CHECK((f.alpha[px] == 1.0f) == hit.has_value());
        if (!hit) continue;
        ++hits;
        const Vector3d n_cam = decode_normal(f.normal[3 * px], f.normal[3 * px + 1], f.normal[3 * px + 2]);
        const Vector3d n_world = pose.rotation.transpose() * n_cam;
        CHECK((n_world - (*hit - c) / radius).norm() < 1e-6);
      }
    CHECK(hits > 100);
  }
}

TEST_CASE("foreground normals are unit and face the viewing ray") {
  for (std::uint64_t seed : {3u, 17u, 42u}) {
    const auto scene = procedural_scene(seed, 5);
    const auto traj = orbital_trajectory(4, 45.0, 2.0, 4.0, 0.3, Vector3d::Zero(), Intrinsics::for_image(32, 32));
    const auto video = render_orbit(scene, traj, 32, 32);
    for (int t = 0; t < 4; ++t)
      for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) {
          const std::size_t px = static_cast<std::size_t>((t * 32 + r) * 32 + c);
          const Vector3d n = decode_normal(video.normals[3 * px], video.normals[3 * px + 1], video.normals[3 * px + 2]);
          if (video.alpha[px] == 0.0f) {
            CHECK(video.rgb[3 * px] == 1.0f);
            continue;
          }
          CHECK(std::abs(n.norm() - 1.0) < 1e-4);
          const auto& pose = traj.poses[static_cast<std::size_t>(t)];
          const Vector3d view_cam = pose.rotation * pose.ray_direction(c + 0.5, r + 0.5);
          CHECK(n.dot(-view_cam) >= -1e-6);
        }
  }
}

TEST_CASE("render_orbit shapes, determinism and periodicity") {
  Scene scene = unit_sphere(Pattern::Checker);
  scene.primitives[0].pattern_scale = 3.0;
  const auto traj = orbital_trajectory(61, 0.0, 3.0, 4.0, 0.0, Vector3d::Zero(), Intrinsics::for_image(24, 24));
  const auto a = render_orbit(scene, traj, 24, 24);
  CHECK(a.rgb.shape() == Shape{61, 24, 24, 3});
  CHECK(a.normals.shape() == Shape{61, 24, 24, 3});
  CHECK(a.alpha.shape() == Shape{61, 24, 24});
  const auto b = render_orbit(scene, traj, 24, 24);
  CHECK(a.rgb == b.rgb);
  CHECK(a.normals == b.normals);

  const auto wrapped = pose_from_spherical(2 * std::numbers::pi, 0.0, 4.0, Vector3d::Zero(), Intrinsics::for_image(24, 24));
  const auto f = render_frame(scene, wrapped, 24, 24);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < f.rgb.size(); ++i) max_diff = std::max(max_diff, double(std::abs(f.rgb[i] - a.rgb[i])));
  CHECK(max_diff < 1e-6);

  // Frames a quarter orbit apart differ visibly.
  const std::size_t frame = 24 * 24 * 3;
  double mad = 0.0;
  const std::size_t quarter = 61 / 4;
  for (std::size_t i = 0; i < frame; ++i) mad += std::abs(a.rgb[i] - a.rgb[quarter * frame + i]);
  CHECK(mad / static_cast<double>(frame) > 0.01);
}

TEST_CASE("box and superellipsoid primitives render") {
  for (auto kind : {PrimitiveKind::Box, PrimitiveKind::Superellipsoid}) {
    Scene s;
    Primitive p;
    p.kind = kind;
    p.half_extents = {0.5, 0.4, 0.3};
    p.exponents = {0.5, 0.8};
    s.primitives.push_back(p);
    const auto pose = pose_from_spherical(0.2, 0.1, 4, Vector3d::Zero(), Intrinsics::for_image(32, 32));
    const auto f = render_frame(s, pose, 32, 32);
    double covered = 0;
    for (float a : f.alpha.values()) covered += a;
    CHECK(covered > 20);
    CHECK(f.alpha[16 * 32 + 16] == 1.0f);
    CHECK(f.alpha[0] == 0.0f);
  }
}
