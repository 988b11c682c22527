#include "semfuse/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "semfuse/image_io.hpp"
#include "semfuse/labelspace.hpp"
#include "semfuse/log.hpp"

namespace semfuse::ingest {

namespace fs = std::filesystem;
using labels::frame_filename;

namespace {

void check_strictly_increasing(const std::vector<double>& ts, const char* stream) {
  for (size_t i = 1; i < ts.size(); ++i)
    if (ts[i] <= ts[i - 1])
      throw std::runtime_error(std::string("ingest: ") + stream +
                               " timestamps must strictly increase");
}

std::vector<double> json_array_to_doubles(const nlohmann::json& j) {
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(v.get<double>());
  return out;
}

// Index of the timestamp nearest to t; exact midpoints resolve to the
// earlier entry.
size_t nearest_index(const std::vector<double>& ts, double t) {
  const auto it = std::lower_bound(ts.begin(), ts.end(), t);
  if (it == ts.begin()) return 0;
  if (it == ts.end()) return ts.size() - 1;
  const size_t hi = static_cast<size_t>(it - ts.begin());
  const size_t lo = hi - 1;
  return (t - ts[lo] <= ts[hi] - t) ? lo : hi;
}

}  // namespace

Intrinsics read_intrinsics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest: cannot open " + path.string());
  Intrinsics k;
  in >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height;
  if (!in) throw std::runtime_error("ingest: malformed intrinsics in " + path.string());
  k.validate();
  return k;
}

void write_intrinsics(const fs::path& path, const Intrinsics& k) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("ingest: cannot write " + path.string());
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %d %d\n", k.fx, k.fy, k.cx, k.cy,
                k.width, k.height);
  out << buf;
}

Pose read_pose_txt(const fs::path& path, double timestamp) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest: cannot open " + path.string());
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      if (!(in >> m(r, c))) throw std::runtime_error("ingest: malformed pose in " + path.string());
  return Pose::from_matrix(m, timestamp);
}

void write_pose_txt(const fs::path& path, const Pose& pose) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("ingest: cannot write " + path.string());
  const Eigen::Matrix4d m = pose.matrix();
  char buf[512];
  for (int r = 0; r < 4; ++r) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g\n", m(r, 0), m(r, 1), m(r, 2),
                  m(r, 3));
    out << buf;
  }
}

RawRecording load_raw_recording(const fs::path& dir) {
  std::ifstream ts_in(dir / "timestamps.json");
  if (!ts_in) throw std::runtime_error("ingest: missing timestamps.json in " + dir.string());
  const nlohmann::json ts = nlohmann::json::parse(ts_in);

  const auto color_ts = json_array_to_doubles(ts.at("color"));
  const auto depth_ts = json_array_to_doubles(ts.at("depth"));
  const auto pose_ts = json_array_to_doubles(ts.at("pose"));
  check_strictly_increasing(color_ts, "color");
  check_strictly_increasing(depth_ts, "depth");
  check_strictly_increasing(pose_ts, "pose");

  RawRecording raw;
  raw.color_intrinsics = read_intrinsics(dir / "intrinsics.txt");

  for (size_t i = 0; i < color_ts.size(); ++i)
    raw.color.push_back({color_ts[i], dir / "color" / frame_filename(static_cast<int>(i))});
  for (size_t i = 0; i < depth_ts.size(); ++i)
    raw.depth.push_back({depth_ts[i], dir / "depth" / frame_filename(static_cast<int>(i))});
  for (size_t i = 0; i < pose_ts.size(); ++i) {
    raw.poses.push_back(
        read_pose_txt(dir / "pose" / frame_filename(static_cast<int>(i), ".txt"), pose_ts[i]));
  }

  if (!raw.depth.empty()) {
    const Image<uint16_t> probe = read_png16(raw.depth.front().path);
    raw.depth_intrinsics = raw.color_intrinsics.scaled(probe.width, probe.height);
  } else {
    raw.depth_intrinsics = raw.color_intrinsics;
  }
  return raw;
}

Image<float> resize_depth(const Image<float>& depth, int target_w, int target_h) {
  if (depth.width <= 0 || depth.height <= 0)
    throw std::runtime_error("resize_depth: empty source");
  if (target_w <= 0 || target_h <= 0)
    throw std::runtime_error("resize_depth: target dimensions must be positive");
  Image<float> out(target_w, target_h);
  for (int y = 0; y < target_h; ++y) {
    const int sy = std::min(depth.height - 1,
                            static_cast<int>(static_cast<int64_t>(y) * depth.height / target_h));
    for (int x = 0; x < target_w; ++x) {
      const int sx = std::min(depth.width - 1,
                              static_cast<int>(static_cast<int64_t>(x) * depth.width / target_w));
      out.at(x, y) = depth.at(sx, sy);
    }
  }
  return out;
}

Pose interpolate_pose(std::span<const Pose> poses, double t) {
  if (poses.size() < 2) throw std::runtime_error("interpolate_pose: need at least 2 poses");
  if (t < poses.front().timestamp || t > poses.back().timestamp)
    throw std::runtime_error("interpolate_pose: t outside pose time span");

  // Bracketing segment [lo, hi] with t in between.
  size_t hi = 1;
  while (hi + 1 < poses.size() && poses[hi].timestamp < t) ++hi;
  const Pose& a = poses[hi - 1];
  const Pose& b = poses[hi];
  if (t == a.timestamp) return a;
  if (t == b.timestamp) return b;

  const double u = (t - a.timestamp) / (b.timestamp - a.timestamp);
  Pose out;
  out.timestamp = t;
  out.translation = a.translation + u * (b.translation - a.translation);
  out.rotation = a.rotation.slerp(u, b.rotation).normalized();
  return out;
}

Scene synchronize(const RawRecording& raw, const std::string& id, SyncStats* stats) {
  if (raw.color.empty() || raw.depth.empty() || raw.poses.empty())
    throw std::runtime_error("synchronize: all three streams must be non-empty");

  std::vector<double> depth_ts;
  depth_ts.reserve(raw.depth.size());
  for (const auto& d : raw.depth) depth_ts.push_back(d.timestamp);
  check_strictly_increasing(depth_ts, "depth");
  for (size_t i = 1; i < raw.color.size(); ++i)
    if (raw.color[i].timestamp <= raw.color[i - 1].timestamp)
      throw std::runtime_error("ingest: color timestamps must strictly increase");
  for (size_t i = 1; i < raw.poses.size(); ++i)
    if (raw.poses[i].timestamp <= raw.poses[i - 1].timestamp)
      throw std::runtime_error("ingest: pose timestamps must strictly increase");

  const double pose_begin = raw.poses.front().timestamp;
  const double pose_end = raw.poses.back().timestamp;

  SyncStats local;
  local.input_color_frames = static_cast<int>(raw.color.size());

  Scene scene;
  scene.id = id;
  scene.intrinsics = raw.color_intrinsics;

  int covered = 0;
  for (const auto& c : raw.color)
    if (c.timestamp >= pose_begin && c.timestamp <= pose_end) ++covered;
  if (covered == 0) throw std::runtime_error("synchronize: no pose coverage for any color frame");

  // Pair each surviving color frame with its depth source first, then load
  // and resample in parallel; output slots are fixed by color order.
  std::vector<std::pair<const TimedImage*, size_t>> survivors;
  for (const auto& c : raw.color) {
    if (c.timestamp < pose_begin || c.timestamp > pose_end) {
      ++local.dropped_frames;
      log_warn("synchronize: dropping color frame at t=" + std::to_string(c.timestamp) +
               " outside pose span");
      continue;
    }
    const size_t di = nearest_index(depth_ts, c.timestamp);
    local.max_depth_gap_s = std::max(local.max_depth_gap_s, std::fabs(depth_ts[di] - c.timestamp));
    survivors.emplace_back(&c, di);
  }

  scene.frames.resize(survivors.size());
  const int64_t n = static_cast<int64_t>(survivors.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 4)
  for (int64_t i = 0; i < n; ++i) {
    try {
      const auto& [color, di] = survivors[static_cast<size_t>(i)];
      Frame f;
      f.index = static_cast<int>(i);
      f.timestamp = color->timestamp;
      f.color_path = color->path;
      f.depth = resize_depth(read_depth_png(raw.depth[di].path), raw.color_intrinsics.width,
                             raw.color_intrinsics.height);
      f.pose = raw.poses.size() >= 2 ? interpolate_pose(raw.poses, color->timestamp)
                                     : raw.poses.front();
      f.gravity = gravity::compute_alignment(f.pose);
      scene.frames[static_cast<size_t>(i)] = std::move(f);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  if (stats) *stats = local;
  return scene;
}

void save_synced(const Scene& scene, const fs::path& dir, const SyncStats* stats) {
  fs::create_directories(dir / "color");
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "pose");

  std::vector<double> ts;
  std::vector<gravity::GravityInfo> ginfos;
  for (const auto& f : scene.frames) {
    const std::string name = frame_filename(f.index);
    if (!f.color_path.empty() && fs::exists(f.color_path)) {
      const fs::path dst = dir / "color" / name;
      if (!fs::exists(dst) || !fs::equivalent(f.color_path, dst))
        fs::copy_file(f.color_path, dst, fs::copy_options::overwrite_existing);
    }
    write_depth_png(dir / "depth" / name, f.depth);
    write_pose_txt(dir / "pose" / frame_filename(f.index, ".txt"), f.pose);
    ts.push_back(f.timestamp);
    ginfos.push_back(f.gravity);
  }
  write_intrinsics(dir / "intrinsics.txt", scene.intrinsics);
  gravity::write_gravity_json(dir / "gravity.json", ginfos);

  {
    nlohmann::json j;
    j["color"] = ts;
    std::ofstream out(dir / "timestamps.json");
    out << j.dump(2) << "\n";
  }
  if (stats) {
    nlohmann::json j;
    j["input_color_frames"] = stats->input_color_frames;
    j["dropped_frames"] = stats->dropped_frames;
    j["synced_frames"] = scene.frames.size();
    j["max_depth_gap_s"] = stats->max_depth_gap_s;
    std::ofstream out(dir / "sync_manifest.json");
    out << j.dump(2) << "\n";
  }
}

SyncedSceneView open_synced(const fs::path& dir) {
  SyncedSceneView view;
  view.dir = dir;
  view.intrinsics = read_intrinsics(dir / "intrinsics.txt");

  std::ifstream ts_in(dir / "timestamps.json");
  if (!ts_in) throw std::runtime_error("ingest: missing timestamps.json in " + dir.string());
  const nlohmann::json ts = nlohmann::json::parse(ts_in);
  view.timestamps = json_array_to_doubles(ts.at("color"));

  view.poses.reserve(view.timestamps.size());
  for (size_t i = 0; i < view.timestamps.size(); ++i) {
    view.poses.push_back(read_pose_txt(dir / "pose" / frame_filename(static_cast<int>(i), ".txt"),
                                       view.timestamps[i]));
  }
  return view;
}

Image<float> SyncedSceneView::load_depth(int index) const {
  return read_depth_png(dir / "depth" / frame_filename(index));
}

std::filesystem::path SyncedSceneView::color_path(int index) const {
  return dir / "color" / frame_filename(index);
}

Scene load_synced_scene(const fs::path& dir) {
  const SyncedSceneView view = open_synced(dir);
  Scene scene;
  scene.id = dir.filename().string();
  scene.intrinsics = view.intrinsics;
  for (int i = 0; i < view.frame_count(); ++i) {
    Frame f;
    f.index = i;
    f.timestamp = view.timestamps[static_cast<size_t>(i)];
    f.color_path = view.color_path(i);
    f.depth = view.load_depth(i);
    f.pose = view.poses[static_cast<size_t>(i)];
    f.gravity = gravity::compute_alignment(f.pose);
    scene.frames.push_back(std::move(f));
  }
  return scene;
}

}  // namespace semfuse::ingest
