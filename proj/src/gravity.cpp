#include "semfuse/gravity.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace semfuse::gravity {

namespace {
constexpr double kTwoPi = 2.0 * M_PI;
constexpr double kHalfPi = M_PI / 2.0;

double circular_distance(double a, double b) {
  double d = std::fabs(a - b);
  d = std::fmod(d, kTwoPi);
  return std::min(d, kTwoPi - d);
}
}  // namespace

GravityInfo compute_alignment(const Pose& pose) {
  // Sky direction in camera coordinates (camera: x right, y down, z forward).
  const Eigen::Vector3d sky_cam = pose.rotation.conjugate() * Eigen::Vector3d(0, 0, 1);
  const double sx = sky_cam.x();
  const double sy = sky_cam.y();

  GravityInfo info;
  if (std::hypot(sx, sy) < 1e-6) {
    // Camera looking straight up or down: no gravity cue in the image plane.
    return info;
  }

  // alpha parameterizes the projected sky as (-sin a, -cos a): 0 is image-up
  // (0,-1), pi/2 is image-left (-1,0), matching one corrective quarter turn.
  double alpha = std::atan2(-sx, -sy);
  if (alpha < 0) alpha += kTwoPi;
  info.alpha = alpha;

  int best = 0;
  double best_dist = circular_distance(0.0, alpha);
  for (int s = 1; s < 4; ++s) {
    const double d = circular_distance(s * kHalfPi, alpha);
    if (d < best_dist) {
      best_dist = d;
      best = s;
    }
  }
  info.k = best;
  return info;
}

labels::LabelMap rotate_quarter(const labels::LabelMap& lm, int k) {
  labels::LabelMap out;
  out.space = lm.space;
  out.grid = rotate_quarter(lm.grid, k);
  return out;
}

labels::LabelMap unrotate_labels(const labels::LabelMap& lm, int k) {
  if (k < 0 || k > 3) throw std::runtime_error("unrotate_labels: k must be in {0,1,2,3}");
  return rotate_quarter(lm, (4 - k) % 4);
}

void write_gravity_json(const std::filesystem::path& path, std::span<const GravityInfo> infos) {
  nlohmann::json arr = nlohmann::json::array();
  for (size_t i = 0; i < infos.size(); ++i)
    arr.push_back({{"frame", i}, {"alpha", infos[i].alpha}, {"k", infos[i].k}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("gravity: cannot write " + path.string());
  out << arr.dump(2) << "\n";
}

std::vector<GravityInfo> read_gravity_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("gravity: cannot open " + path.string());
  nlohmann::json arr = nlohmann::json::parse(in);
  std::vector<GravityInfo> infos(arr.size());
  for (const auto& item : arr) {
    const size_t frame = item.at("frame").get<size_t>();
    if (frame >= infos.size()) infos.resize(frame + 1);
    infos[frame].alpha = item.at("alpha").get<double>();
    infos[frame].k = item.at("k").get<int>();
  }
  return infos;
}

}  // namespace semfuse::gravity
