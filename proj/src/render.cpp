#include "orbitkit/render.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "orbitkit/parallel.hpp"
#include "orbitkit/rng.hpp"

namespace orbitkit {
namespace {

constexpr double kMinDistance = 1e-9;
constexpr int kMarchSteps = 96;
constexpr int kBisectSteps = 60;

struct LocalRay {
  Eigen::Vector3d origin;     // primitive frame, unit-shape coordinates
  Eigen::Vector3d direction;  // same frame; not unit
};

LocalRay to_unit_frame(const Primitive& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  const Eigen::Vector3d ol = p.orientation.transpose() * (o - p.center);
  const Eigen::Vector3d dl = p.orientation.transpose() * d;
  return {ol.cwiseQuotient(p.half_extents), dl.cwiseQuotient(p.half_extents)};
}

// Nearest t > kMinDistance on the unit sphere.
std::optional<double> hit_unit_sphere(const LocalRay& r) {
  const double a = r.direction.squaredNorm();
  const double b = 2.0 * r.origin.dot(r.direction);
  const double c = r.origin.squaredNorm() - 1.0;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
  double t0 = q / a, t1 = c / q;
  if (t0 > t1) std::swap(t0, t1);
  if (t0 > kMinDistance) return t0;
  if (t1 > kMinDistance) return t1;
  return std::nullopt;
}

// Slab test against [-1, 1]^3; returns (t_near, t_far, entering axis).
std::optional<std::tuple<double, double, int>> hit_unit_box(const LocalRay& r) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis = 0;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(r.direction[k]) < 1e-300) {
      if (std::abs(r.origin[k]) > 1.0) return std::nullopt;
      continue;
    }
    double t0 = (-1.0 - r.origin[k]) / r.direction[k];
    double t1 = (1.0 - r.origin[k]) / r.direction[k];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      axis = k;
    }
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far || t_far < kMinDistance) return std::nullopt;
  return std::make_tuple(t_near, t_far, axis);
}

double superellipsoid_field(const Eigen::Vector3d& p, const Eigen::Vector2d& e) {
  const double u = std::pow(std::abs(p.x()), 2.0 / e[1]) + std::pow(std::abs(p.y()), 2.0 / e[1]);
  return std::pow(u, e[1] / e[0]) + std::pow(std::abs(p.z()), 2.0 / e[0]) - 1.0;
}

Eigen::Vector3d superellipsoid_gradient(const Eigen::Vector3d& p, const Eigen::Vector2d& e) {
  const double u = std::pow(std::abs(p.x()), 2.0 / e[1]) + std::pow(std::abs(p.y()), 2.0 / e[1]);
  const double outer = u > 1e-300 ? (2.0 / e[0]) * std::pow(u, e[1] / e[0] - 1.0) : 0.0;
  auto part = [](double v, double expo) { return std::copysign(std::pow(std::abs(v), expo), v); };
  return {outer * part(p.x(), 2.0 / e[1] - 1.0), outer * part(p.y(), 2.0 / e[1] - 1.0),
          (2.0 / e[0]) * part(p.z(), 2.0 / e[0] - 1.0)};
}

// Returns (distance, world normal) for one primitive.
std::optional<std::pair<double, Eigen::Vector3d>> hit_primitive(const Primitive& p, const Eigen::Vector3d& o,
                                                                 const Eigen::Vector3d& d) {
  const LocalRay r = to_unit_frame(p, o, d);
  const Eigen::Vector3d inv_a = p.half_extents.cwiseInverse();
  switch (p.kind) {
    case PrimitiveKind::Sphere: {
      const auto t = hit_unit_sphere(r);
      if (!t) return std::nullopt;
      const Eigen::Vector3d ps = r.origin + *t * r.direction;
      // Gradient of |x/a|^2 in the primitive frame.
      const Eigen::Vector3d nl = ps.cwiseProduct(inv_a);
      return std::make_pair(*t, (p.orientation * nl).normalized());
    }
    case PrimitiveKind::Box: {
      const auto h = hit_unit_box(r);
      if (!h) return std::nullopt;
      const auto [t_near, t_far, axis] = *h;
      if (t_near < kMinDistance) return std::nullopt;  // camera inside the box
      Eigen::Vector3d nl = Eigen::Vector3d::Zero();
      nl[axis] = (r.direction[axis] > 0.0 ? -1.0 : 1.0) * inv_a[axis];
      return std::make_pair(t_near, (p.orientation * nl).normalized());
    }
    case PrimitiveKind::Superellipsoid: {
      const auto h = hit_unit_box(r);
      if (!h) return std::nullopt;
      const double t_begin = std::max(std::get<0>(*h), kMinDistance);
      const double t_end = std::get<1>(*h);
      auto field = [&](double t) { return superellipsoid_field(r.origin + t * r.direction, p.exponents); };
      double prev_t = t_begin;
      if (field(prev_t) <= 0.0) return std::nullopt;
      const double step = (t_end - t_begin) / kMarchSteps;
      for (int i = 1; i <= kMarchSteps; ++i) {
        const double t = t_begin + step * i;
        if (field(t) <= 0.0) {
          double lo = prev_t, hi = t;
          for (int k = 0; k < kBisectSteps; ++k) {
            const double mid = 0.5 * (lo + hi);
            (field(mid) > 0.0 ? lo : hi) = mid;
          }
          const Eigen::Vector3d ps = r.origin + hi * r.direction;
          const Eigen::Vector3d nl = superellipsoid_gradient(ps, p.exponents).cwiseProduct(inv_a);
          if (nl.norm() < 1e-300) return std::nullopt;
          return std::make_pair(hi, (p.orientation * nl).normalized());
        }
        prev_t = t;
      }
      return std::nullopt;
    }
  }
  return std::nullopt;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  // Uniform unit quaternion (Shoemake).
  const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  constexpr double two_pi = 6.283185307179586;
  Eigen::Quaterniond q(std::sqrt(u1) * std::cos(two_pi * u3), std::sqrt(1 - u1) * std::sin(two_pi * u2),
                       std::sqrt(1 - u1) * std::cos(two_pi * u2), std::sqrt(u1) * std::sin(two_pi * u3));
  return q.normalized().toRotationMatrix();
}

}  // namespace

double Primitive::bounding_radius() const {
  const double extent = kind == PrimitiveKind::Sphere ? half_extents.maxCoeff() : half_extents.norm();
  return center.norm() + extent;
}

double Scene::bounding_radius() const {
  double r = 0.0;
  for (const auto& p : primitives) r = std::max(r, p.bounding_radius());
  return r;
}

Scene procedural_scene(std::uint64_t seed, int complexity) {
  if (complexity < 1 || complexity > 8) throw std::invalid_argument("procedural_scene: complexity must be in [1, 8]");
  Rng rng(seed, "scene");
  Scene scene;
  scene.seed = seed;
  for (int i = 0; i < complexity; ++i) {
    Primitive p;
    p.kind = static_cast<PrimitiveKind>(rng.integer(0, 2));
    const double spread = complexity == 1 ? 0.15 : 0.6;
    Eigen::Vector3d c;
    do {
      c = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    } while (c.squaredNorm() > 1.0);
    p.center = spread * c;
    p.half_extents = {rng.uniform(0.25, 0.6), rng.uniform(0.25, 0.6), rng.uniform(0.25, 0.6)};
    if (p.kind == PrimitiveKind::Sphere && rng.uniform() < 0.5) p.half_extents.setConstant(p.half_extents.x());
    p.orientation = random_rotation(rng);
    p.exponents = {rng.uniform(0.3, 1.2), rng.uniform(0.3, 1.2)};
    p.pattern = static_cast<Pattern>(rng.integer(0, 2));
    p.color_a = {rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)};
    p.color_b = {rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)};
    p.pattern_scale = rng.uniform(3.0, 7.0);
    scene.primitives.push_back(p);
  }
  const double s = 1.0 / scene.bounding_radius();
  for (auto& p : scene.primitives) {
    p.center *= s;
    p.half_extents *= s;
    p.pattern_scale /= s;
  }
  return scene;
}

std::optional<Hit> intersect(const Scene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& direction) {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    const auto h = hit_primitive(scene.primitives[i], origin, direction);
    if (!h || (best && h->first >= best->distance)) continue;
    Hit hit;
    hit.distance = h->first;
    hit.point = origin + h->first * direction;
    hit.normal = h->second.dot(direction) > 0.0 ? Eigen::Vector3d(-h->second) : h->second;
    hit.primitive = i;
    best = hit;
  }
  return best;
}

Eigen::Vector3d albedo_at(const Primitive& prim, const Eigen::Vector3d& world_point) {
  const Eigen::Vector3d pl = prim.orientation.transpose() * (world_point - prim.center) * prim.pattern_scale;
  switch (prim.pattern) {
    case Pattern::Solid:
      return prim.color_a;
    case Pattern::Checker: {
      const auto k = static_cast<long long>(std::floor(pl.x()) + std::floor(pl.y()) + std::floor(pl.z()));
      return (k & 1) ? prim.color_b : prim.color_a;
    }
    case Pattern::Stripes: {
      const auto k = static_cast<long long>(std::floor(pl.x() + pl.z()));
      return (k & 1) ? prim.color_b : prim.color_a;
    }
  }
  return prim.color_a;
}

RenderedFrame render_frame(const Scene& scene, const CameraPose& pose, int height, int width) {
  if (!pose.is_finite()) throw std::invalid_argument("render_frame: invalid pose");
  RenderedFrame f{Tensor<float>(Shape{height, width, 3}, 1.0f), Tensor<float>(Shape{height, width, 3}),
                  Tensor<float>(Shape{height, width}, 0.0f)};
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const std::size_t px = static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c);
      float* rgb = f.rgb.data() + 3 * px;
      float* nrm = f.normal.data() + 3 * px;
      const Eigen::Vector3d d = pose.ray_direction(c + 0.5, r + 0.5);
      const auto hit = intersect(scene, pose.position, d);
      if (!hit) {
        nrm[0] = 0.5f;
        nrm[1] = 0.5f;
        nrm[2] = 1.0f;
        continue;
      }
      f.alpha[px] = 1.0f;
      const Eigen::Vector3d n_cam = pose.rotation * hit->normal;
      const double shade = std::min(1.0, kAmbient + (1.0 - kAmbient) * std::max(0.0, -hit->normal.dot(d)));
      const Eigen::Vector3d color = albedo_at(scene.primitives[hit->primitive], hit->point) * shade;
      for (int k = 0; k < 3; ++k) {
        rgb[k] = static_cast<float>(std::clamp(color[k], 0.0, 1.0));
        nrm[k] = static_cast<float>(0.5 * (n_cam[k] + 1.0));
      }
    }
  return f;
}

OrbitVideo render_orbit(const Scene& scene, const Trajectory& trajectory, int height, int width) {
  const auto T = static_cast<std::int64_t>(trajectory.poses.size());
  OrbitVideo video{Tensor<float>(Shape{T, height, width, 3}), Tensor<float>(Shape{T, height, width, 3}),
                   Tensor<float>(Shape{T, height, width}), trajectory};
  const std::size_t img = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  parallel_for(T, [&](std::int64_t i) {
    const auto f = render_frame(scene, trajectory.poses[static_cast<std::size_t>(i)], height, width);
    const auto fi = static_cast<std::size_t>(i);
    std::copy(f.rgb.storage().begin(), f.rgb.storage().end(), video.rgb.data() + fi * img * 3);
    std::copy(f.normal.storage().begin(), f.normal.storage().end(), video.normals.data() + fi * img * 3);
    std::copy(f.alpha.storage().begin(), f.alpha.storage().end(), video.alpha.data() + fi * img);
  });
  return video;
}

}  // namespace orbitkit
