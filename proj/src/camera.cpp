#include "orbitkit/camera.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace orbitkit {

Intrinsics Intrinsics::for_image(int height, int width, double coverage, double orbit_radius) {
  if (height <= 0 || width <= 0) throw ShapeError("intrinsics: image size must be positive");
  if (orbit_radius <= 1.0) throw std::invalid_argument("intrinsics: orbit radius must exceed the object radius");
  // Tangent of the angular radius of a unit sphere seen from the orbit.
  const double tan_half = std::tan(std::asin(1.0 / orbit_radius));
  Intrinsics k;
  k.focal = 0.5 * coverage * width / tan_half;
  k.principal_point = {0.5 * width, 0.5 * height};
  return k;
}

Eigen::Vector3d CameraPose::ray_direction(double x, double y) const {
  const Eigen::Vector3d cam((x - principal_point.x()) / focal, -(y - principal_point.y()) / focal, -1.0);
  return (rotation.transpose() * cam).normalized();
}

bool CameraPose::is_finite() const {
  return rotation.allFinite() && position.allFinite() && std::isfinite(focal) && principal_point.allFinite() &&
         focal > 0.0;
}

CameraPose pose_from_spherical(double azimuth, double elevation, double radius, const Eigen::Vector3d& target,
                               const Intrinsics& intrinsics) {
  if (!(radius > 0.0)) throw std::invalid_argument("pose_from_spherical: radius must be positive");
  if (!std::isfinite(azimuth) || !std::isfinite(elevation)) throw std::invalid_argument("pose_from_spherical: non-finite angle");
  const Eigen::Vector3d offset(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                               std::sin(elevation));
  CameraPose pose;
  pose.position = target + radius * offset;
  const Eigen::Vector3d forward = -offset;
  Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ());
  if (right.norm() < 1e-9) right = forward.cross(Eigen::Vector3d::UnitX());
  right.normalize();
  const Eigen::Vector3d up = right.cross(forward);
  pose.rotation.row(0) = right.transpose();
  pose.rotation.row(1) = up.transpose();
  pose.rotation.row(2) = -forward.transpose();
  pose.focal = intrinsics.focal;
  pose.principal_point = intrinsics.principal_point;
  return pose;
}

Trajectory orbital_trajectory(int frame_count, double amplitude_deg, double frequency, double radius,
                              double initial_azimuth, const Eigen::Vector3d& target, const Intrinsics& intrinsics) {
  if (frame_count < 2) throw std::invalid_argument("orbital_trajectory: frame_count must be >= 2");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double amplitude = amplitude_deg * std::numbers::pi / 180.0;
  Trajectory traj;
  traj.frame_count = frame_count;
  traj.radius = radius;
  traj.amplitude_deg = amplitude_deg;
  traj.frequency = frequency;
  traj.initial_azimuth = initial_azimuth;
  traj.target = target;
  for (int i = 0; i < frame_count; ++i) {
    const double phase = two_pi * i / frame_count;
    const double a = initial_azimuth + phase;
    const double e = amplitude * std::sin(frequency * phase);
    traj.azimuths.push_back(a);
    traj.elevations.push_back(e);
    traj.poses.push_back(pose_from_spherical(a, e, radius, target, intrinsics));
  }
  return traj;
}

Trajectory time_reversed(const Trajectory& trajectory) {
  std::vector<int> order{0};
  for (int i = trajectory.frame_count - 1; i > 0; --i) order.push_back(i);
  Trajectory out = trajectory;
  for (std::size_t j = 0; j < order.size(); ++j) {
    const auto i = static_cast<std::size_t>(order[j]);
    out.poses[j] = trajectory.poses[i];
    out.azimuths[j] = trajectory.azimuths[i];
    out.elevations[j] = trajectory.elevations[i];
  }
  return out;
}

Trajectory subsample(const Trajectory& trajectory, std::span<const int> indices) {
  Trajectory out = trajectory;
  out.poses.clear();
  out.azimuths.clear();
  out.elevations.clear();
  int prev = -1;
  for (int i : indices) {
    if (i <= prev || i >= trajectory.frame_count) throw std::invalid_argument("subsample: indices must be increasing and in range");
    prev = i;
    out.poses.push_back(trajectory.poses[static_cast<std::size_t>(i)]);
    out.azimuths.push_back(trajectory.azimuths[static_cast<std::size_t>(i)]);
    out.elevations.push_back(trajectory.elevations[static_cast<std::size_t>(i)]);
  }
  out.frame_count = static_cast<int>(indices.size());
  return out;
}

void pluecker_rays(const CameraPose& pose, int height, int width, int frame_index, PlueckerGrid& grid) {
  if (!pose.is_finite()) throw std::invalid_argument("pluecker_rays: non-finite pose");
  if (grid.data.rank() != 4 || grid.height() != height || grid.width() != width)
    throw ShapeError("pluecker_rays: grid " + shape_str(grid.data.shape()) + " does not match " + std::to_string(height) +
                     "x" + std::to_string(width));
  if (frame_index < 0 || frame_index >= grid.frames()) throw ShapeError("pluecker_rays: frame index out of range");
  const std::size_t plane = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  const std::size_t frame_off = static_cast<std::size_t>(frame_index) * plane;
  const std::size_t chan_stride = static_cast<std::size_t>(grid.frames()) * plane;
  double* out = grid.data.data();
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const Eigen::Vector3d d = pose.ray_direction(c + 0.5, r + 0.5);
      const Eigen::Vector3d m = pose.position.cross(d);
      const std::size_t px = frame_off + static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c);
      for (int k = 0; k < 3; ++k) {
        out[static_cast<std::size_t>(k) * chan_stride + px] = d[k];
        out[static_cast<std::size_t>(k + 3) * chan_stride + px] = m[k];
      }
    }
}

PlueckerGrid pluecker_grid(const Trajectory& trajectory, int height, int width) {
  PlueckerGrid grid(static_cast<int>(trajectory.poses.size()), height, width);
  for (std::size_t i = 0; i < trajectory.poses.size(); ++i)
    pluecker_rays(trajectory.poses[i], height, width, static_cast<int>(i), grid);
  return grid;
}

nlohmann::json trajectory_to_json(const Trajectory& trajectory) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t i = 0; i < trajectory.poses.size(); ++i) {
    const auto& p = trajectory.poses[i];
    std::vector<double> rot(9);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot[static_cast<std::size_t>(r * 3 + c)] = p.rotation(r, c);
    frames.push_back({{"azimuth_rad", trajectory.azimuths[i]},
                      {"elevation_rad", trajectory.elevations[i]},
                      {"radius", (p.position - trajectory.target).norm()},
                      {"rotation", rot},
                      {"position", {p.position.x(), p.position.y(), p.position.z()}},
                      {"focal", p.focal},
                      {"principal_point", {p.principal_point.x(), p.principal_point.y()}}});
  }
  return frames;
}

Trajectory trajectory_from_json(const nlohmann::json& doc) {
  if (!doc.is_array() || doc.size() < 1) throw std::invalid_argument("trajectory file must be a non-empty JSON array");
  Trajectory traj;
  double max_elev = 0.0;
  for (const auto& f : doc) {
    CameraPose p;
    const auto rot = f.at("rotation").get<std::vector<double>>();
    const auto pos = f.at("position").get<std::vector<double>>();
    const auto pp = f.at("principal_point").get<std::vector<double>>();
    if (rot.size() != 9 || pos.size() != 3 || pp.size() != 2) throw std::invalid_argument("trajectory frame has malformed arrays");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = rot[static_cast<std::size_t>(r * 3 + c)];
    p.position = {pos[0], pos[1], pos[2]};
    p.focal = f.at("focal").get<double>();
    p.principal_point = {pp[0], pp[1]};
    if (!p.is_finite()) throw std::invalid_argument("trajectory frame has non-finite values");
    traj.poses.push_back(p);
    traj.azimuths.push_back(f.at("azimuth_rad").get<double>());
    traj.elevations.push_back(f.at("elevation_rad").get<double>());
    traj.radius = f.at("radius").get<double>();
    max_elev = std::max(max_elev, std::abs(traj.elevations.back()));
  }
  traj.frame_count = static_cast<int>(traj.poses.size());
  traj.initial_azimuth = traj.azimuths.front();
  traj.amplitude_deg = max_elev * 180.0 / std::numbers::pi;
  return traj;
}

}  // namespace orbitkit
