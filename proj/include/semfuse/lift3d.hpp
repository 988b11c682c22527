#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "semfuse/fusion3d.hpp"
#include "semfuse/geometry.hpp"
#include "semfuse/labelspace.hpp"

namespace semfuse::lift {

struct LiftConfig {
  double occlusion_tol = 0.05;  // meters
  int min_frame_votes = 1;
  int boundary_margin = 0;  // pixels
  int frame_stride = 1;
};

// Depth and consensus top-1 labels of one synchronized frame.
struct LiftFrame {
  Pose pose;
  Image<float> depth;
  labels::LabelMap labels;
};

// Projects a world point into the frame and tests it against the observed
// depth. Returns the pixel on success; rejection (behind camera, outside
// the image, invalid depth, occluded or floating in front) is a normal
// outcome.
std::optional<std::pair<int, int>> visible(const Eigen::Vector3d& point, const Pose& pose,
                                           const Image<float>& depth,
                                           const Intrinsics& intrinsics, double tol,
                                           int boundary_margin = 0);

// Per-point voting across frames: every frame where the point passes the
// visibility test casts its consensus top-1 label (0 abstains). Ties break
// to the smaller id; points with fewer than min_frame_votes total votes
// stay unlabeled. Output is independent of frame order and worker count.
// total_votes, when given, receives the per-point vote totals.
fusion::LabeledCloud lift(const fusion::LabeledCloud& geometry,
                          std::span<const LiftFrame> frames, const Intrinsics& intrinsics,
                          const LiftConfig& cfg, std::vector<uint32_t>* total_votes = nullptr);
fusion::LabeledCloud lift_serial(const fusion::LabeledCloud& geometry,
                                 std::span<const LiftFrame> frames, const Intrinsics& intrinsics,
                                 const LiftConfig& cfg,
                                 std::vector<uint32_t>* total_votes = nullptr);

// Streaming variant: frames are loaded one at a time, keeping memory flat
// for long trajectories.
fusion::LabeledCloud lift_streamed(const fusion::LabeledCloud& geometry, int frame_count,
                                   const std::function<LiftFrame(int)>& load_frame,
                                   const Intrinsics& intrinsics, const LiftConfig& cfg,
                                   std::vector<uint32_t>* total_votes = nullptr);

struct LiftStats {
  std::map<uint32_t, uint64_t> votes_histogram;  // total votes -> point count
  double unlabeled_fraction = 0.0;
  uint64_t point_count = 0;
};

LiftStats compute_lift_stats(const fusion::LabeledCloud& cloud,
                             std::span<const uint32_t> total_votes);
void write_lift_stats(const std::filesystem::path& path, const LiftStats& stats);

}  // namespace semfuse::lift
