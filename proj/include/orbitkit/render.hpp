#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "orbitkit/camera.hpp"
#include "orbitkit/tensor.hpp"

namespace orbitkit {

enum class PrimitiveKind { Sphere, Box, Superellipsoid };
enum class Pattern { Solid, Checker, Stripes };

/// A primitive in its own frame: `orientation` maps local axes to world (columns), and
/// `half_extents` scales the unit shape. Sphere with unequal extents is an ellipsoid.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extents = Eigen::Vector3d::Ones();
  Eigen::Matrix3d orientation = Eigen::Matrix3d::Identity();
  Eigen::Vector2d exponents{1.0, 1.0};  // superellipsoid (e1 vertical, e2 horizontal)
  Pattern pattern = Pattern::Solid;
  Eigen::Vector3d color_a{0.8, 0.3, 0.2};
  Eigen::Vector3d color_b{0.2, 0.4, 0.8};
  double pattern_scale = 4.0;

  /// Radius of a sphere about the world origin that encloses the primitive.
  double bounding_radius() const;
};

struct Scene {
  std::vector<Primitive> primitives;
  std::uint64_t seed = 0;

  double bounding_radius() const;
};

/// Deterministic scene of `complexity` primitives, scaled to fit the unit sphere.
Scene procedural_scene(std::uint64_t seed, int complexity);

struct Hit {
  double distance = 0.0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();  // world space, unit, facing the ray
  std::size_t primitive = 0;
};

std::optional<Hit> intersect(const Scene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& direction);

Eigen::Vector3d albedo_at(const Primitive& prim, const Eigen::Vector3d& world_point);

struct RenderedFrame {
  Tensor<float> rgb;     // [H, W, 3]
  Tensor<float> normal;  // [H, W, 3], camera-space, encoded (n + 1) / 2
  Tensor<float> alpha;   // [H, W]
};

struct OrbitVideo {
  Tensor<float> rgb;      // [T, H, W, 3] in [0, 1]
  Tensor<float> normals;  // [T, H, W, 3]
  Tensor<float> alpha;    // [T, H, W]
  Trajectory trajectory;

  int frames() const { return static_cast<int>(rgb.dim(0)); }
  int height() const { return static_cast<int>(rgb.dim(1)); }
  int width() const { return static_cast<int>(rgb.dim(2)); }
};

constexpr double kAmbient = 0.3;

/// Primary-ray render: headlight Lambert plus ambient over a white background.
RenderedFrame render_frame(const Scene& scene, const CameraPose& pose, int height, int width);
OrbitVideo render_orbit(const Scene& scene, const Trajectory& trajectory, int height, int width);

/// Decodes an (n + 1) / 2 encoded normal.
inline Eigen::Vector3d decode_normal(float r, float g, float b) {
  return {2.0 * r - 1.0, 2.0 * g - 1.0, 2.0 * b - 1.0};
}

}  // namespace orbitkit
