#pragma once

// Camera poses, orbital trajectories and per-pixel Pluecker ray embeddings.
//
// World frame: right-handed, +z up, orbit target at the origin unless given.
// Camera frame: x right, y up, z pointing back toward the viewer (the optical
// axis is -z). Pixel (row, col) samples the continuous image point
// (col + 0.5, row + 0.5); image y grows downward.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "orbitkit/tensor.hpp"

namespace orbitkit {

struct Intrinsics {
  double focal = 1.0;  // pixels
  Eigen::Vector2d principal_point = Eigen::Vector2d::Zero();

  /// Square-pixel pinhole centered on the image, with the focal length chosen so that a
  /// unit-radius object seen from `orbit_radius` spans `coverage` of the image width.
  static Intrinsics for_image(int height, int width, double coverage = 0.6, double orbit_radius = 4.0);
};

struct CameraPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera, rows are camera axes
  Eigen::Vector3d position = Eigen::Vector3d::Zero();       // camera center in world units
  double focal = 1.0;
  Eigen::Vector2d principal_point = Eigen::Vector2d::Zero();

  Eigen::Vector3d optical_axis() const { return -rotation.row(2).transpose(); }
  /// Unit world-space direction through continuous pixel coordinates (x right, y down).
  Eigen::Vector3d ray_direction(double x, double y) const;
  bool is_finite() const;
};

struct Trajectory {
  std::vector<CameraPose> poses;
  std::vector<double> azimuths;    // radians
  std::vector<double> elevations;  // radians
  int frame_count = 0;
  double radius = 0.0;
  double amplitude_deg = 0.0;
  double frequency = 0.0;
  double initial_azimuth = 0.0;
  Eigen::Vector3d target = Eigen::Vector3d::Zero();
};

/// Camera on a sphere around `target` looking at it. Up is world +z projected off the
/// optical axis; at the poles, where that is degenerate, +x is used instead.
CameraPose pose_from_spherical(double azimuth, double elevation, double radius,
                               const Eigen::Vector3d& target = Eigen::Vector3d::Zero(),
                               const Intrinsics& intrinsics = Intrinsics::for_image(32, 32));

/// a_i = a_0 + 2*pi*i/T, e_i = amplitude * sin(f * 2*pi*i/T).
Trajectory orbital_trajectory(int frame_count, double amplitude_deg, double frequency, double radius,
                              double initial_azimuth = 0.0, const Eigen::Vector3d& target = Eigen::Vector3d::Zero(),
                              const Intrinsics& intrinsics = Intrinsics::for_image(32, 32));

/// Same start pose, traversed in the opposite direction: [p0, p_{T-1}, ..., p1].
Trajectory time_reversed(const Trajectory& trajectory);

/// Frames at the given (strictly increasing) indices.
Trajectory subsample(const Trajectory& trajectory, std::span<const int> indices);

/// Per-pixel (d, o x d) rays, stored as [6, T, H, W]; channels 0-2 the unit direction,
/// 3-5 the moment about the world origin.
struct PlueckerGrid {
  Tensor<double> data;

  PlueckerGrid() = default;
  PlueckerGrid(int frames, int height, int width) : data(Shape{6, frames, height, width}) {}
  int frames() const { return static_cast<int>(data.dim(1)); }
  int height() const { return static_cast<int>(data.dim(2)); }
  int width() const { return static_cast<int>(data.dim(3)); }
};

/// Fills frame `frame_index` of `grid` with the rays of `pose`.
void pluecker_rays(const CameraPose& pose, int height, int width, int frame_index, PlueckerGrid& grid);
PlueckerGrid pluecker_grid(const Trajectory& trajectory, int height, int width);

nlohmann::json trajectory_to_json(const Trajectory& trajectory);
/// Inverse of trajectory_to_json. The file carries frames only, so the target is taken to
/// be the origin, the amplitude is recovered as max |elevation| and the frequency is left 0.
Trajectory trajectory_from_json(const nlohmann::json& doc);

}  // namespace orbitkit
