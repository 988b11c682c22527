#include "semfuse/geometry.hpp"

#include <stdexcept>
#include <string>

namespace semfuse {

void Intrinsics::validate() const {
  if (fx <= 0 || fy <= 0) throw std::runtime_error("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::runtime_error("intrinsics: dimensions must be positive");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw std::runtime_error("intrinsics: principal point outside image");
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation.toRotationMatrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m, double timestamp) {
  Pose p;
  p.rotation = Eigen::Quaterniond(m.topLeftCorner<3, 3>()).normalized();
  p.translation = m.topRightCorner<3, 1>();
  p.timestamp = timestamp;
  return p;
}

}  // namespace semfuse
