#pragma once

#include <array>
#include <optional>
#include <vector>

#include "semfuse/fusion3d.hpp"
#include "semfuse/geometry.hpp"
#include "semfuse/labelspace.hpp"

namespace semfuse::synth {

// Axis-aligned box with one label per face, ordered -x,+x,-y,+y,-z,+z.
// Inward boxes are rooms: rays starting inside hit the interior walls.
struct LabeledBox {
  Eigen::Vector3d min;
  Eigen::Vector3d max;
  std::array<uint16_t, 6> face_labels{};
  bool inward = false;
};

struct Hit {
  double t = 0;  // ray parameter; equals z-depth for dir with unit z
  int face = -1;
  uint16_t label = 0;
};

// A world of labeled boxes with exact ray casting. The nearest positive hit
// across all boxes wins.
struct World {
  std::vector<LabeledBox> boxes;

  std::optional<Hit> raycast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const;
};

// Depth image in the pinhole convention used by the pipeline: value is the
// camera-z distance of the surface seen through each pixel center, 0 where
// no surface is hit.
Image<float> render_depth(const World& world, const Pose& pose, const Intrinsics& intrinsics);

// Per-pixel face label of the visible surface, 0 where nothing is hit.
labels::LabelMap render_labels(const World& world, const Pose& pose,
                               const Intrinsics& intrinsics, const std::string& space);

// Camera ring at constant height looking at a target, camera y pointing
// roughly down (world -z).
std::vector<Pose> orbit_trajectory(const Eigen::Vector3d& target, double radius, double height,
                                   int count, double t0 = 0.0, double dt = 0.1);

// Evenly spread points on the box faces, inset from the edges, with face
// normals and ground-truth labels.
fusion::LabeledCloud sample_surface_points(const World& world, double spacing, double inset,
                                           const std::string& space);

// Room with floor/ceiling/wall labels plus a couple of labeled object
// boxes; classes 1..8.
World make_room_world(double width = 4.0, double depth = 4.0, double height = 2.5);

}  // namespace semfuse::synth
