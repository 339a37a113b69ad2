#include "shf/geometry.hpp"

#include <cmath>

namespace shf {

std::optional<Eigen::Vector2d> project(const CameraPose& pose, const Intrinsics& k,
                                       const Eigen::Vector3d& point) {
  Eigen::Vector3d pc = pose.orientation.conjugate() * (point - pose.position);
  if (pc.z() <= 0.0) return std::nullopt;
  return Eigen::Vector2d(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
}

bool in_frame(const Eigen::Vector2d& uv) {
  return uv.x() >= 0.0 && uv.x() <= 1.0 && uv.y() >= 0.0 && uv.y() <= 1.0;
}

Ray back_project(const CameraPose& pose, const Intrinsics& k, const Eigen::Vector2d& uv) {
  Eigen::Vector3d dc((uv.x() - k.cx) / k.fx, (uv.y() - k.cy) / k.fy, 1.0);
  return {pose.position, (pose.orientation * dc).normalized()};
}

Eigen::Quaterniond look_at(const Eigen::Vector3d& position, const Eigen::Vector3d& target) {
  Eigen::Vector3d z = (target - position).normalized();
  Eigen::Vector3d up(0, 0, 1);
  Eigen::Vector3d x = z.cross(up);
  if (x.norm() < 1e-9) x = Eigen::Vector3d(1, 0, 0);  // looking straight up or down
  x.normalize();
  Eigen::Vector3d y = z.cross(x);  // image down
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return Eigen::Quaterniond(r).normalized();
}

}  // namespace shf
