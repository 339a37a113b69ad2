#pragma once

// Pinhole camera in the shared room frame (x east, y north, z up, meters).
// Camera frame: +z along the optical axis, +x image right, +y image down.

#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace shf {

struct CameraPose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  /// Rotation taking camera-frame vectors into the room frame. Unit norm.
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
};

/// Normalized image plane: u, v in [0, 1] across the sensor.
struct Intrinsics {
  double fx = 0.5;
  double fy = 0.5;
  double cx = 0.5;
  double cy = 0.5;
};

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;  // unit
};

/// Image coordinates of a room-frame point, or nullopt if it is behind the
/// camera (depth <= 0). Does not clip to the frustum.
std::optional<Eigen::Vector2d> project(const CameraPose& pose, const Intrinsics& k,
                                       const Eigen::Vector3d& point);

bool in_frame(const Eigen::Vector2d& uv);

Ray back_project(const CameraPose& pose, const Intrinsics& k, const Eigen::Vector2d& uv);

/// Orientation for a camera at `position` looking at `target` with the room
/// z axis pointing up in the image.
Eigen::Quaterniond look_at(const Eigen::Vector3d& position, const Eigen::Vector3d& target);

}  // namespace shf
