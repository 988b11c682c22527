#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace semfuse {

// Pinhole camera. Pixel (ix, iy) covers the unit square with continuous
// coordinates [ix, ix+1) x [iy, iy+1); the pixel center is (ix+0.5, iy+0.5).
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;

  // Same field of view at a different resolution (e.g. 256x192 depth vs
  // 640x480 color on ARKit devices).
  Intrinsics scaled(int new_width, int new_height) const {
    Intrinsics s;
    const double rx = static_cast<double>(new_width) / width;
    const double ry = static_cast<double>(new_height) / height;
    s.fx = fx * rx;
    s.fy = fy * ry;
    s.cx = cx * rx;
    s.cy = cy * ry;
    s.width = new_width;
    s.height = new_height;
    return s;
  }

  // Projects a camera-space point (z > 0) to continuous pixel coordinates.
  Eigen::Vector2d project(const Eigen::Vector3d& cam) const {
    return {fx * cam.x() / cam.z() + cx, fy * cam.y() / cam.z() + cy};
  }

  // Camera-space ray direction through the center of pixel (ix, iy),
  // normalized so that dir.z() == 1.
  Eigen::Vector3d pixel_ray(int ix, int iy) const {
    return {(ix + 0.5 - cx) / fx, (iy + 0.5 - cy) / fy, 1.0};
  }
};

// Camera-to-world rigid transform with a capture timestamp.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double timestamp = 0.0;

  Eigen::Vector3d to_world(const Eigen::Vector3d& cam) const {
    return rotation * cam + translation;
  }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return rotation.conjugate() * (world - translation);
  }

  Eigen::Matrix4d matrix() const;
  static Pose from_matrix(const Eigen::Matrix4d& m, double timestamp);
};

}  // namespace semfuse
