#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "semfuse/image_io.hpp"
#include "semfuse/ingest.hpp"
#include "support/test_support.hpp"

using namespace semfuse;
using namespace semfuse::ingest;
using semfuse::testing::TempDir;

namespace {

constexpr int kColorW = 8, kColorH = 6;
constexpr int kDepthW = 4, kDepthH = 3;

// Raw recording fixture. Depth image i is constant (i+1) millimeters so the
// chosen source frame can be identified from the synced depth values.
void make_raw(const std::filesystem::path& dir, const std::vector<double>& color_ts,
              const std::vector<double>& depth_ts, const std::vector<double>& pose_ts) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "color");
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "pose");

  Intrinsics k;
  k.fx = k.fy = 10.0;
  k.cx = kColorW / 2.0;
  k.cy = kColorH / 2.0;
  k.width = kColorW;
  k.height = kColorH;
  write_intrinsics(dir / "intrinsics.txt", k);

  for (size_t i = 0; i < color_ts.size(); ++i) {
    Image<Rgb8> img(kColorW, kColorH, Rgb8{static_cast<uint8_t>(i), 0, 0});
    write_png_rgb8(dir / "color" / labels::frame_filename(static_cast<int>(i)), img);
  }
  for (size_t i = 0; i < depth_ts.size(); ++i) {
    Image<uint16_t> img(kDepthW, kDepthH, static_cast<uint16_t>(i + 1));
    write_png16(dir / "depth" / labels::frame_filename(static_cast<int>(i)), img);
  }
  for (size_t i = 0; i < pose_ts.size(); ++i) {
    Pose p;
    p.translation = Eigen::Vector3d(static_cast<double>(i), 0, 0);
    p.timestamp = pose_ts[i];
    write_pose_txt(dir / "pose" / labels::frame_filename(static_cast<int>(i), ".txt"), p);
  }

  nlohmann::json ts;
  ts["color"] = color_ts;
  ts["depth"] = depth_ts;
  ts["pose"] = pose_ts;
  std::ofstream out(dir / "timestamps.json");
  out << ts.dump() << "\n";
}

int depth_source_index(const Frame& frame) {
  // Constant-valued fixture depth: value (i+1) mm.
  return static_cast<int>(std::lround(frame.depth.data[0] * 1000.0)) - 1;
}

Pose pose_at(double t, const Eigen::Quaterniond& q = Eigen::Quaterniond::Identity()) {
  Pose p;
  p.rotation = q;
  p.timestamp = t;
  return p;
}

}  // namespace

TEST_CASE("synchronize picks the nearest depth frame") {
  TempDir dir;
  make_raw(dir.path(), {1.0}, {0.99, 1.02}, {0.5, 1.5});
  const Scene scene = synchronize(load_raw_recording(dir.path()));
  REQUIRE(scene.frames.size() == 1);
  CHECK(depth_source_index(scene.frames[0]) == 0);  // 0.99 is closer than 1.02
}

TEST_CASE("synchronize resolves exact midpoints to the earlier depth frame") {
  TempDir dir;
  make_raw(dir.path(), {1.0}, {0.98, 1.02}, {0.5, 1.5});
  const Scene scene = synchronize(load_raw_recording(dir.path()));
  REQUIRE(scene.frames.size() == 1);
  CHECK(depth_source_index(scene.frames[0]) == 0);
}

TEST_CASE("synchronize drops color frames outside pose coverage and reindexes") {
  TempDir dir;
  make_raw(dir.path(), {0.1, 0.5, 2.0}, {0.1, 0.5, 2.0}, {0.0, 1.0});
  SyncStats stats;
  const Scene scene = synchronize(load_raw_recording(dir.path()), "s", &stats);
  REQUIRE(scene.frames.size() == 2);
  CHECK(stats.dropped_frames == 1);
  CHECK(scene.frames[0].index == 0);
  CHECK(scene.frames[1].index == 1);
  CHECK(scene.frames[1].timestamp == 0.5);
}

TEST_CASE("synchronize errors when nothing is covered") {
  TempDir dir;
  make_raw(dir.path(), {5.0, 6.0}, {5.0}, {0.0, 1.0});
  CHECK_THROWS_WITH_AS(synchronize(load_raw_recording(dir.path())),
                       doctest::Contains("no pose coverage"), std::runtime_error);
}

TEST_CASE("synchronize errors on an empty stream") {
  RawRecording raw;
  CHECK_THROWS(synchronize(raw));
}

TEST_CASE("synchronize matches the exhaustive nearest-neighbor oracle") {
  // 30 color frames over a second against 60 jittered depth frames.
  TempDir dir;
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> jitter(-0.002, 0.002);

  std::vector<double> color_ts, depth_ts, pose_ts;
  for (int i = 0; i < 30; ++i) color_ts.push_back(i / 30.0);
  double t = 0.0005;
  for (int i = 0; i < 60; ++i) {
    depth_ts.push_back(t);
    t += 1.0 / 60.0 + jitter(rng) / 10.0;
  }
  for (int i = 0; i < 10; ++i) pose_ts.push_back(i / 9.0);
  make_raw(dir.path(), color_ts, depth_ts, pose_ts);

  const Scene scene = synchronize(load_raw_recording(dir.path()));
  REQUIRE(scene.frames.size() == 30);
  for (size_t i = 0; i < scene.frames.size(); ++i) {
    // Brute-force nearest with earlier-on-tie.
    int best = 0;
    for (int d = 1; d < 60; ++d) {
      if (std::fabs(depth_ts[static_cast<size_t>(d)] - color_ts[i]) <
          std::fabs(depth_ts[static_cast<size_t>(best)] - color_ts[i]))
        best = d;
    }
    CHECK(depth_source_index(scene.frames[i]) == best);
    CHECK(std::fabs(depth_ts[static_cast<size_t>(best)] - color_ts[i]) <= 1.0 / 120.0 + 0.003);
    CHECK(scene.frames[i].depth.width == kColorW);
    CHECK(scene.frames[i].depth.height == kColorH);
  }
}

TEST_CASE("resize_depth replicates pixels on integer upscale") {
  Image<float> src(2, 2);
  src.at(0, 0) = 1.f;
  src.at(1, 0) = 2.f;
  src.at(0, 1) = 3.f;
  src.at(1, 1) = 4.f;
  const Image<float> out = resize_depth(src, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(out.at(x, y) == src.at(x / 2, y / 2));
}

TEST_CASE("resize_depth keeps constants constant and zeros intact") {
  Image<float> src(3, 3, 1.5f);
  src.at(1, 1) = 0.f;
  const Image<float> out = resize_depth(src, 9, 9);
  int zeros = 0;
  for (const float v : out.data) {
    CHECK((v == 1.5f || v == 0.f));
    if (v == 0.f) ++zeros;
  }
  CHECK(zeros == 9);  // the invalid pixel replicated, never blended
}

TEST_CASE("resize_depth never invents values") {
  Image<float> src(256, 192);
  for (int y = 0; y < 192; ++y)
    for (int x = 0; x < 256; ++x) src.at(x, y) = static_cast<float>(x + 256 * y);
  const Image<float> out = resize_depth(src, 640, 480);
  for (const float v : out.data) {
    const int idx = static_cast<int>(v);
    CHECK(v == static_cast<float>(idx));
    CHECK(src.data[static_cast<size_t>(idx)] == v);
  }
}

TEST_CASE("resize_depth rejects zero target dims") {
  Image<float> src(2, 2, 1.f);
  CHECK_THROWS(resize_depth(src, 0, 4));
}

TEST_CASE("interpolate_pose reproduces sample poses exactly") {
  std::vector<Pose> poses{pose_at(0.0), pose_at(1.0), pose_at(2.5)};
  poses[1].translation = Eigen::Vector3d(1, 2, 3);
  const Pose mid = interpolate_pose(poses, 1.0);
  CHECK(mid.translation == poses[1].translation);
  CHECK(mid.rotation.coeffs() == poses[1].rotation.coeffs());
}

TEST_CASE("interpolate_pose slerp midpoint of a 90 degree turn") {
  std::vector<Pose> poses{pose_at(0.0), pose_at(1.0)};
  poses[1].rotation = Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ()));
  poses[1].translation = Eigen::Vector3d(2, 0, 0);
  const Pose mid = interpolate_pose(poses, 0.5);

  const Eigen::Quaterniond expected(Eigen::AngleAxisd(M_PI / 4, Eigen::Vector3d::UnitZ()));
  CHECK(mid.rotation.angularDistance(expected) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK((mid.translation - Eigen::Vector3d(1, 0, 0)).norm() == doctest::Approx(0.0));
}

TEST_CASE("interpolate_pose stays on the geodesic") {
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<Pose> poses;
    double t = 0;
    for (int i = 0; i < 5; ++i) {
      Pose p = testing::random_pose(rng);
      p.timestamp = t;
      poses.push_back(p);
      t += 0.5 + uni(rng);
    }
    const double query = uni(rng) * poses.back().timestamp;
    const Pose out = interpolate_pose(poses, query);
    CHECK(std::fabs(out.rotation.norm() - 1.0) <= 1e-9);

    size_t hi = 1;
    while (hi + 1 < poses.size() && poses[hi].timestamp < query) ++hi;
    const Pose& a = poses[hi - 1];
    const Pose& b = poses[hi];
    const double bracket = a.rotation.angularDistance(b.rotation);
    CHECK(out.rotation.angularDistance(a.rotation) <= bracket + 1e-9);
    CHECK(out.rotation.angularDistance(b.rotation) <= bracket + 1e-9);

    // Closed-form slerp oracle on the bracketing segment.
    const double u = (query - a.timestamp) / (b.timestamp - a.timestamp);
    Eigen::Quaterniond qa = a.rotation, qb = b.rotation;
    double dot = qa.dot(qb);
    if (dot < 0) {
      qb.coeffs() = -qb.coeffs();
      dot = -dot;
    }
    Eigen::Quaterniond expected;
    if (dot > 1.0 - 1e-12) {
      expected.coeffs() = qa.coeffs() + u * (qb.coeffs() - qa.coeffs());
      expected.normalize();
    } else {
      const double omega = std::acos(std::clamp(dot, -1.0, 1.0));
      expected.coeffs() = (std::sin((1 - u) * omega) * qa.coeffs() +
                           std::sin(u * omega) * qb.coeffs()) /
                          std::sin(omega);
    }
    CHECK(out.rotation.angularDistance(expected) == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("interpolate_pose rejects out-of-span queries and short lists") {
  std::vector<Pose> poses{pose_at(0.0), pose_at(1.0)};
  CHECK_THROWS(interpolate_pose(poses, -0.1));
  CHECK_THROWS(interpolate_pose(poses, 1.1));
  CHECK_THROWS(interpolate_pose(std::vector<Pose>{pose_at(0.0)}, 0.0));
}

TEST_CASE("synchronize preserves color order without duplication") {
  TempDir dir;
  std::vector<double> color_ts, depth_ts, pose_ts;
  for (int i = 0; i < 12; ++i) color_ts.push_back(0.05 + i * 0.06);
  for (int i = 0; i < 25; ++i) depth_ts.push_back(i * 0.033);
  for (int i = 0; i < 4; ++i) pose_ts.push_back(i * 0.25);
  make_raw(dir.path(), color_ts, depth_ts, pose_ts);

  const Scene scene = synchronize(load_raw_recording(dir.path()));
  CHECK(scene.frames.size() <= color_ts.size());
  for (size_t i = 1; i < scene.frames.size(); ++i) {
    CHECK(scene.frames[i].timestamp > scene.frames[i - 1].timestamp);
    CHECK(scene.frames[i].index == static_cast<int>(i));
  }
}

TEST_CASE("save_synced and open_synced round trip") {
  TempDir dir;
  make_raw(dir.path(), {0.0, 0.1, 0.2}, {0.0, 0.05, 0.1, 0.15, 0.2}, {0.0, 0.25});
  SyncStats stats;
  const Scene scene = synchronize(load_raw_recording(dir.path()), "x", &stats);
  save_synced(scene, dir / "synced", &stats);

  const SyncedSceneView view = open_synced(dir / "synced");
  REQUIRE(view.frame_count() == static_cast<int>(scene.frames.size()));
  for (int i = 0; i < view.frame_count(); ++i) {
    CHECK(view.timestamps[static_cast<size_t>(i)] ==
          doctest::Approx(scene.frames[static_cast<size_t>(i)].timestamp));
    const Image<float> depth = view.load_depth(i);
    CHECK(depth.data == scene.frames[static_cast<size_t>(i)].depth.data);
    const Pose& a = view.poses[static_cast<size_t>(i)];
    const Pose& b = scene.frames[static_cast<size_t>(i)].pose;
    CHECK((a.translation - b.translation).norm() < 1e-12);
    CHECK(a.rotation.angularDistance(b.rotation) < 1e-12);
  }
  CHECK(std::filesystem::exists(dir / "synced" / "sync_manifest.json"));
  CHECK(std::filesystem::exists(dir / "synced" / "gravity.json"));
}
