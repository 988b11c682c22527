#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semfuse/geometry.hpp"
#include "semfuse/gravity.hpp"
#include "semfuse/image.hpp"

namespace semfuse::ingest {

struct TimedImage {
  double timestamp = 0.0;
  std::filesystem::path path;
};

// Raw multi-rate recording: ~30 FPS color, ~60 FPS depth at lower
// resolution, ~10 FPS poses. Timestamps strictly increase per stream.
struct RawRecording {
  std::vector<TimedImage> color;
  std::vector<TimedImage> depth;
  std::vector<Pose> poses;
  Intrinsics color_intrinsics;
  Intrinsics depth_intrinsics;
};

struct Frame {
  int index = 0;
  double timestamp = 0.0;
  std::filesystem::path color_path;
  Image<float> depth;  // meters at color resolution, 0 = invalid
  Pose pose;
  gravity::GravityInfo gravity;
};

struct Scene {
  std::string id;
  std::vector<Frame> frames;
  Intrinsics intrinsics;
  std::optional<std::filesystem::path> mesh_path;
  std::optional<std::filesystem::path> gt_labels_path;
};

struct SyncStats {
  int input_color_frames = 0;
  int dropped_frames = 0;
  double max_depth_gap_s = 0.0;
};

// Reads the raw scene layout: color/%06d.png, depth/%06d.png, pose/%06d.txt,
// intrinsics.txt (color stream; depth intrinsics are derived by scaling to
// the depth resolution), timestamps.json with per-stream second arrays.
RawRecording load_raw_recording(const std::filesystem::path& dir);

// Matches each color frame with the nearest depth frame in time (ties going
// to the earlier frame), resizes depth to color resolution and interpolates
// the pose at the color timestamp. Color frames outside the pose time span
// are dropped with a warning; surviving frames are reindexed from 0.
Scene synchronize(const RawRecording& raw, const std::string& id = "",
                  SyncStats* stats = nullptr);

// Nearest-neighbor resampling. Invalid (0) pixels stay 0 and no depth value
// is invented: every output value exists in the input.
Image<float> resize_depth(const Image<float>& depth, int target_w, int target_h);

// Piecewise slerp on the bracketing segment for rotation, linear
// interpolation for translation. Sample timestamps reproduce exactly.
Pose interpolate_pose(std::span<const Pose> poses, double t);

// synced/ mirrors the raw layout, plus sync_manifest.json with QA stats.
void save_synced(const Scene& scene, const std::filesystem::path& dir,
                 const SyncStats* stats = nullptr);

// Streaming view of a synced scene: poses and timestamps eager, depth
// on demand.
struct SyncedSceneView {
  std::filesystem::path dir;
  Intrinsics intrinsics;
  std::vector<double> timestamps;
  std::vector<Pose> poses;

  int frame_count() const { return static_cast<int>(poses.size()); }
  Image<float> load_depth(int index) const;
  std::filesystem::path color_path(int index) const;
};

SyncedSceneView open_synced(const std::filesystem::path& dir);

// Eager load, mostly for tests and small scenes.
Scene load_synced_scene(const std::filesystem::path& dir);

Intrinsics read_intrinsics(const std::filesystem::path& path);
void write_intrinsics(const std::filesystem::path& path, const Intrinsics& k);
Pose read_pose_txt(const std::filesystem::path& path, double timestamp = 0.0);
void write_pose_txt(const std::filesystem::path& path, const Pose& pose);

}  // namespace semfuse::ingest
