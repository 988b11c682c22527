#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <nlohmann/json.hpp>

#include "semfuse/image_io.hpp"
#include "semfuse/ingest.hpp"
#include "semfuse/labelspace.hpp"
#include "semfuse/render.hpp"
#include "semfuse/synthetic.hpp"

namespace fs = std::filesystem;
using namespace semfuse;

// Builds a self-contained synthetic scene in the raw recording layout:
// multi-rate color/depth/pose streams of a room fly-through, ground-truth
// label maps, and five corrupted "model" prediction directories standing in
// for the external segmentation models.
namespace {

struct Options {
  fs::path out;
  int color_frames = 30;
  double noise = 0.3;
  uint32_t seed = 7;
  double arc_degrees = 60.0;
};

constexpr int kColorW = 320, kColorH = 240;
constexpr int kDepthW = 128, kDepthH = 96;

const char* kModels[5] = {"gsam", "mask3d", "ovseg", "internimage", "cmx"};

// Each simulated model consistently confuses one class pair on top of iid
// pixel noise; consensus should undo both.
const std::pair<uint16_t, uint16_t> kSwaps[5] = {{7, 8}, {3, 4}, {1, 2}, {5, 6}, {8, 7}};

Pose pose_at(double t, double duration, double arc_rad) {
  const Eigen::Vector3d target(0.1, 0.1, 1.0);
  const double angle0 = -arc_rad / 2;
  const double angle = angle0 + arc_rad * (t / duration);
  const double radius = 1.2;
  const Eigen::Vector3d eye(target.x() + radius * std::cos(angle),
                            target.y() + radius * std::sin(angle), 1.5);

  Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = Eigen::Vector3d(0, 0, -1).cross(z);
  if (x.norm() < 1e-9) x = Eigen::Vector3d(1, 0, 0);
  x.normalize();
  const Eigen::Vector3d y = z.cross(x).normalized();
  Eigen::Matrix3d rot;
  rot.col(0) = x;
  rot.col(1) = y;
  rot.col(2) = z;

  Pose p;
  p.rotation = Eigen::Quaterniond(rot).normalized();
  p.translation = eye;
  p.timestamp = t;
  return p;
}

void write_label_space(const fs::path& path) {
  std::ofstream out(path);
  out << "id,name,synkey\n"
      << "0,unlabeled,\n"
      << "1,floor,floor.n.01\n"
      << "2,ceiling,ceiling.n.01\n"
      << "3,wall,wall.n.01\n"
      << "4,wall,\n"
      << "5,wall,\n"
      << "6,wall,\n"
      << "7,table,table.n.02\n"
      << "8,cabinet,cabinet.n.01\n";
}

void write_colormap(const fs::path& path) {
  std::ofstream out(path);
  out << "id,r,g,b\n"
      << "0,0,0,0\n"
      << "1,152,223,138\n"
      << "2,174,199,232\n"
      << "3,255,187,120\n"
      << "4,214,39,40\n"
      << "5,31,119,180\n"
      << "6,188,189,34\n"
      << "7,140,86,75\n"
      << "8,148,103,189\n";
}

void write_pipeline_config(const fs::path& path) {
  nlohmann::json j;
  j["max_parallel"] = 2;
  j["min_votes"] = 2.0;
  nlohmann::json sources = nlohmann::json::object();
  nlohmann::json commands = nlohmann::json::object();
  for (const char* m : kModels) {
    sources[m] = 1.0;
    // The external models are pre-rendered; their stand-in commands just
    // verify the outputs exist.
    commands[m] = std::string("test -f '{scene_dir}/intermediate/") + m + "/000000.png'";
  }
  commands["omnidata"] = "true";
  commands["hha"] = "true";
  j["sources"] = sources;
  j["commands"] = commands;
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

labels::LabelMap corrupt(const labels::LabelMap& gt, const std::pair<uint16_t, uint16_t>& swap,
                         double noise, std::mt19937& rng) {
  labels::LabelMap out = gt;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> any_class(1, 8);
  for (auto& v : out.grid.data) {
    if (v == swap.first)
      v = swap.second;
    else if (v == swap.second)
      v = swap.first;
    if (v != 0 && coin(rng) < noise) v = static_cast<uint16_t>(any_class(rng));
  }
  return out;
}

int generate(const Options& opt) {
  const synth::World world = synth::make_room_world();

  Intrinsics color_k;
  color_k.fx = color_k.fy = 277.0;
  color_k.cx = kColorW / 2.0;
  color_k.cy = kColorH / 2.0;
  color_k.width = kColorW;
  color_k.height = kColorH;
  const Intrinsics depth_k = color_k.scaled(kDepthW, kDepthH);

  const int n_color = opt.color_frames;
  const double duration = n_color / 30.0;
  const double arc = opt.arc_degrees * M_PI / 180.0;
  const int n_depth = n_color * 2;
  const int n_pose = std::max(2, static_cast<int>(duration * 10.0));

  fs::create_directories(opt.out / "color");
  fs::create_directories(opt.out / "depth");
  fs::create_directories(opt.out / "pose");
  fs::create_directories(opt.out / "gt");
  for (const char* m : kModels) fs::create_directories(opt.out / "intermediate" / m);

  write_label_space(opt.out / "labelspace.csv");
  write_colormap(opt.out / "colormap.csv");
  write_pipeline_config(opt.out / "pipeline.json");
  ingest::write_intrinsics(opt.out / "intrinsics.txt", color_k);
  const render::Colormap cmap = render::load_colormap(opt.out / "colormap.csv");

  std::vector<double> color_ts, depth_ts, pose_ts;
  for (int i = 0; i < n_color; ++i) color_ts.push_back(i / 30.0);
  // Slight offset so depth matching is genuinely nearest-in-time.
  for (int i = 0; i < n_depth; ++i) depth_ts.push_back(i / 60.0 + 1.0 / 240.0);
  for (int i = 0; i < n_pose; ++i) pose_ts.push_back(i / 10.0);

  for (int i = 0; i < n_pose; ++i)
    ingest::write_pose_txt(opt.out / "pose" / labels::frame_filename(i, ".txt"),
                           pose_at(pose_ts[static_cast<size_t>(i)], duration, arc));

  for (int i = 0; i < n_depth; ++i) {
    const Pose pose = pose_at(depth_ts[static_cast<size_t>(i)], duration, arc);
    write_depth_png(opt.out / "depth" / labels::frame_filename(i),
                    synth::render_depth(world, pose, depth_k));
  }

  // Color frames double as ground truth: the RGB image is the colorized
  // label rendering. Frames outside the pose span are dropped by sync, so
  // predictions are only generated for survivors, indexed by synced order.
  const double pose_end = pose_ts.back();
  int synced_index = 0;
  for (int i = 0; i < n_color; ++i) {
    const double t = color_ts[static_cast<size_t>(i)];
    const Pose pose = pose_at(t, duration, arc);
    const labels::LabelMap gt = synth::render_labels(world, pose, color_k, "labelspace");
    write_png_rgb8(opt.out / "color" / labels::frame_filename(i), render::colorize(gt, cmap));
    if (t > pose_end) continue;

    labels::write_label_map(opt.out / "gt" / labels::frame_filename(synced_index), gt);
    for (int m = 0; m < 5; ++m) {
      std::mt19937 rng(opt.seed + static_cast<uint32_t>(m * 100003 + synced_index * 613));
      const labels::LabelMap pred = corrupt(gt, kSwaps[m], opt.noise, rng);
      labels::write_label_map(
          opt.out / "intermediate" / kModels[m] / labels::frame_filename(synced_index), pred);
    }
    ++synced_index;
  }

  nlohmann::json ts;
  ts["color"] = color_ts;
  ts["depth"] = depth_ts;
  ts["pose"] = pose_ts;
  std::ofstream out(opt.out / "timestamps.json");
  out << ts.dump(2) << "\n";

  std::cout << "scene written to " << opt.out.string() << " (" << n_color << " color frames, "
            << synced_index << " with pose coverage)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semfuse-mkscene: generate a synthetic RGB-D scene fixture"};
  Options opt;
  app.add_option("--out", opt.out, "output scene directory")->required();
  app.add_option("--frames", opt.color_frames, "number of color frames")->check(CLI::Range(3, 10000));
  app.add_option("--noise", opt.noise, "per-model pixel corruption rate");
  app.add_option("--seed", opt.seed, "corruption RNG seed");
  app.add_option("--arc", opt.arc_degrees, "camera orbit arc in degrees");
  CLI11_PARSE(app, argc, argv);

  try {
    return generate(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
