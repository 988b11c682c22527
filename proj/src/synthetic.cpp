#include "semfuse/synthetic.hpp"

#include <cmath>
#include <limits>

namespace semfuse::synth {

namespace {

struct SlabHit {
  double t_near, t_far;
  int face_near, face_far;
};

// Slab intersection; faces are encoded as axis*2 (min side) and axis*2+1
// (max side).
std::optional<SlabHit> intersect_box(const LabeledBox& box, const Eigen::Vector3d& origin,
                                     const Eigen::Vector3d& dir) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int face_near = -1, face_far = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::fabs(dir[a]) < 1e-15) {
      if (origin[a] < box.min[a] || origin[a] > box.max[a]) return std::nullopt;
      continue;
    }
    double t0 = (box.min[a] - origin[a]) / dir[a];
    double t1 = (box.max[a] - origin[a]) / dir[a];
    int f0 = a * 2, f1 = a * 2 + 1;
    if (t0 > t1) {
      std::swap(t0, t1);
      std::swap(f0, f1);
    }
    if (t0 > t_near) {
      t_near = t0;
      face_near = f0;
    }
    if (t1 < t_far) {
      t_far = t1;
      face_far = f1;
    }
    if (t_near > t_far) return std::nullopt;
  }
  return SlabHit{t_near, t_far, face_near, face_far};
}

}  // namespace

std::optional<Hit> World::raycast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
  std::optional<Hit> best;
  for (const auto& box : boxes) {
    const auto slab = intersect_box(box, origin, dir);
    if (!slab) continue;
    double t;
    int face;
    if (box.inward) {
      // Interior view: the visible surface is where the ray exits.
      if (slab->t_far <= 1e-12) continue;
      t = slab->t_far;
      face = slab->face_far;
    } else {
      if (slab->t_near <= 1e-12) continue;  // origin inside or behind: no front face
      t = slab->t_near;
      face = slab->face_near;
    }
    if (!best || t < best->t) best = Hit{t, face, box.face_labels[static_cast<size_t>(face)]};
  }
  return best;
}

Image<float> render_depth(const World& world, const Pose& pose, const Intrinsics& intrinsics) {
  Image<float> depth(intrinsics.width, intrinsics.height, 0.f);
  const Eigen::Matrix3d rot = pose.rotation.toRotationMatrix();
  for (int y = 0; y < intrinsics.height; ++y) {
    for (int x = 0; x < intrinsics.width; ++x) {
      // dir has camera z = 1, so the hit parameter is the z-depth directly.
      const Eigen::Vector3d dir = rot * intrinsics.pixel_ray(x, y);
      const auto hit = world.raycast(pose.translation, dir);
      if (hit) depth.at(x, y) = static_cast<float>(hit->t);
    }
  }
  return depth;
}

labels::LabelMap render_labels(const World& world, const Pose& pose, const Intrinsics& intrinsics,
                               const std::string& space) {
  labels::LabelMap lm;
  lm.space = space;
  lm.grid = Image<uint16_t>(intrinsics.width, intrinsics.height, 0);
  const Eigen::Matrix3d rot = pose.rotation.toRotationMatrix();
  for (int y = 0; y < intrinsics.height; ++y) {
    for (int x = 0; x < intrinsics.width; ++x) {
      const Eigen::Vector3d dir = rot * intrinsics.pixel_ray(x, y);
      const auto hit = world.raycast(pose.translation, dir);
      if (hit) lm.grid.at(x, y) = hit->label;
    }
  }
  return lm;
}

std::vector<Pose> orbit_trajectory(const Eigen::Vector3d& target, double radius, double height,
                                   int count, double t0, double dt) {
  std::vector<Pose> poses;
  poses.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double angle = 2.0 * M_PI * i / count;
    const Eigen::Vector3d eye(target.x() + radius * std::cos(angle),
                              target.y() + radius * std::sin(angle), height);

    Eigen::Vector3d z = (target - eye).normalized();
    const Eigen::Vector3d sky(0, 0, 1);
    Eigen::Vector3d x = (-sky).cross(z);
    if (x.norm() < 1e-9) x = Eigen::Vector3d(1, 0, 0);  // looking straight up/down
    x.normalize();
    const Eigen::Vector3d y = z.cross(x).normalized();

    Eigen::Matrix3d rot;
    rot.col(0) = x;
    rot.col(1) = y;
    rot.col(2) = z;

    Pose p;
    p.rotation = Eigen::Quaterniond(rot).normalized();
    p.translation = eye;
    p.timestamp = t0 + dt * i;
    poses.push_back(p);
  }
  return poses;
}

fusion::LabeledCloud sample_surface_points(const World& world, double spacing, double inset,
                                           const std::string& space) {
  fusion::LabeledCloud cloud;
  cloud.space = space;

  const auto add_point = [&cloud](const Eigen::Vector3d& p, const Eigen::Vector3d& n,
                                  uint16_t label) {
    cloud.points.push_back(p.cast<float>());
    cloud.normals.push_back(n.cast<float>());
    cloud.label1.push_back(label);
    cloud.count1.push_back(1);
    cloud.label2.push_back(0);
    cloud.count2.push_back(0);
  };

  for (const auto& box : world.boxes) {
    for (int face = 0; face < 6; ++face) {
      const int axis = face / 2;
      const bool max_side = face % 2 == 1;
      const int u = (axis + 1) % 3;
      const int v = (axis + 2) % 3;

      Eigen::Vector3d normal = Eigen::Vector3d::Zero();
      // Solid boxes face outward, rooms face inward.
      const double sign = (max_side ? 1.0 : -1.0) * (box.inward ? -1.0 : 1.0);
      normal[axis] = sign;

      const double lo_u = box.min[u] + inset, hi_u = box.max[u] - inset;
      const double lo_v = box.min[v] + inset, hi_v = box.max[v] - inset;
      if (lo_u > hi_u || lo_v > hi_v) continue;

      Eigen::Vector3d p;
      p[axis] = max_side ? box.max[axis] : box.min[axis];
      for (double cu = lo_u; cu <= hi_u + 1e-12; cu += spacing) {
        for (double cv = lo_v; cv <= hi_v + 1e-12; cv += spacing) {
          p[u] = cu;
          p[v] = cv;
          add_point(p, normal, box.face_labels[static_cast<size_t>(face)]);
        }
      }
    }
  }
  return cloud;
}

World make_room_world(double width, double depth, double height) {
  World world;

  LabeledBox room;
  room.min = {-width / 2, -depth / 2, 0.0};
  room.max = {width / 2, depth / 2, height};
  room.inward = true;
  // Interior faces: walls 3..6, floor 1 (-z side seen from inside is the
  // floor plane z=min), ceiling 2.
  room.face_labels = {3, 4, 5, 6, 1, 2};
  world.boxes.push_back(room);

  LabeledBox table;
  table.min = {-0.8, -0.6, 0.0};
  table.max = {0.2, 0.4, 0.7};
  table.face_labels = {7, 7, 7, 7, 7, 7};
  world.boxes.push_back(table);

  LabeledBox cabinet;
  cabinet.min = {0.9, 0.8, 0.0};
  cabinet.max = {1.6, 1.6, 1.4};
  cabinet.face_labels = {8, 8, 8, 8, 8, 8};
  world.boxes.push_back(cabinet);

  return world;
}

}  // namespace semfuse::synth
